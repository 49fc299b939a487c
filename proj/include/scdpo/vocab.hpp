#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace scdpo {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Hybrid character/word vocabulary: digits and punctuation are single-character
// symbols, task keywords are whole tokens. Encoding is greedy longest-match;
// characters outside the vocabulary map to the unknown symbol.
class Vocab {
public:
    // Builds the fixed task vocabulary. Symbol order is part of the checkpoint
    // format, so it must never be reordered.
    static Vocab task_vocab();

    // Reconstructs a vocabulary from an explicit symbol list (checkpoint load).
    explicit Vocab(std::vector<std::string> symbols);

    int size() const { return static_cast<int>(symbols_.size()); }
    TokenId eos_id() const { return eos_id_; }
    TokenId unk_id() const { return unk_id_; }
    TokenId newline_id() const { return newline_id_; }

    const std::string& symbol(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& symbols() const { return symbols_; }

    // Returns the id of an exact symbol, or -1 if absent.
    TokenId find(const std::string& symbol) const;

    TokenSeq encode(const std::string& text) const;
    std::string decode(const TokenSeq& ids) const;

    // True when decode(encode(text)) == text, i.e. the text lies inside the
    // task grammar's alphabet.
    bool round_trips(const std::string& text) const;

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, TokenId> index_;
    std::vector<TokenId> by_length_;  // candidate match order: longest symbols first
    TokenId eos_id_ = -1;
    TokenId unk_id_ = -1;
    TokenId newline_id_ = -1;
};

inline const std::string kEosSymbol = "<eos>";
inline const std::string kUnkSymbol = "<unk>";

}  // namespace scdpo
