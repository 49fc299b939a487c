#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace scdpo {

// Minimal SHA-256, used for content-addressing datasets, checkpoints and
// configs in run manifests.
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    void update(std::string_view s) { update(s.data(), s.size()); }
    std::string hex_digest();  // finalizes; further updates are invalid

    static std::string of_string(std::string_view s);
    static std::string of_file(const std::string& path);  // throws on IO failure

private:
    void process_block(const std::uint8_t* block);
    std::uint32_t state_[8];
    std::uint8_t buffer_[64];
    std::uint64_t total_len_ = 0;
    std::size_t buffer_len_ = 0;
    bool finalized_ = false;
};

}  // namespace scdpo
