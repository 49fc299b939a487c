#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "scdpo/vocab.hpp"

namespace scdpo::model {

struct ModelConfig {
    int vocab_size = 0;
    int context_length = 256;
    int embed_dim = 64;
    int layer_count = 2;
    int head_count = 2;
    int feedforward_dim = 128;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<float> values;  // row-major

    std::size_t size() const { return values.size(); }
};

enum class Role { Policy, Reference };

// Weights are stored in 32-bit floats (the checkpoint payload format); all
// forward/backward arithmetic widens to double.
struct Parameters {
    ModelConfig config;
    Vocab vocab = Vocab::task_vocab();
    std::uint64_t creation_seed = 0;
    Role role = Role::Policy;
    std::vector<NamedTensor> tensors;

    const NamedTensor& tensor(const std::string& name) const;
    NamedTensor& tensor(const std::string& name);
    int tensor_index(const std::string& name) const;
    std::size_t parameter_count() const;
};

// Tensor layout is a pure function of the config; initialization draws from a
// counter-based stream keyed by seed.
Parameters init_parameters(const ModelConfig& config, const Vocab& vocab, std::uint64_t seed,
                           Role role = Role::Policy);

struct ContextOverflowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    enum class Kind { VersionMismatch, CorruptHeader, ShapeMismatch, CorruptPayload };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

void save_checkpoint(const Parameters& params, const std::string& path);
Parameters load_checkpoint(const std::string& path, Role role = Role::Policy);

// SHA-256 of the parameter payload in declared tensor order.
std::string parameters_hash(const Parameters& params);

// Incremental causal decoder over an immutable Parameters value. Feeding
// tokens one at a time reproduces, bit for bit, the per-position values of a
// full-sequence evaluation, because every sum is accumulated in the same
// order either way.
class Decoder {
public:
    explicit Decoder(const Parameters& params);

    void reset();
    // Appends one token; logits() afterwards scores the next position.
    void push(TokenId id);
    int length() const { return length_; }
    const std::vector<double>& logits() const { return logits_; }
    // log softmax of current logits (length vocab_size).
    std::vector<double> log_softmax() const;

private:
    struct LayerWeights {
        const float* ln1_g;
        const float* ln1_b;
        const float* wq;
        const float* wk;
        const float* wv;
        const float* wo;
        const float* ln2_g;
        const float* ln2_b;
        const float* ff1;
        const float* ff2;
    };

    const Parameters& params_;
    std::vector<LayerWeights> layers_;
    const float* tok_embed_;
    const float* pos_embed_;
    const float* lnf_g_;
    const float* lnf_b_;
    const float* head_;
    int length_ = 0;
    // per layer: cached key/value rows, one per fed position
    std::vector<std::vector<double>> key_cache_, value_cache_;
    std::vector<double> logits_;
};

// Next-token logits after consuming the whole prefix. Deterministic; throws
// ContextOverflowError when the prefix exceeds context_length.
std::vector<double> logits_next(const Parameters& params, const TokenSeq& prefix);

// Per-position log-probabilities of `target` given `context`, factorized
// autoregressively. context must be non-empty.
std::vector<double> token_logprobs(const Parameters& params, const TokenSeq& context, const TokenSeq& target);

// Sum of token_logprobs; strictly negative unless every token has probability 1.
double sequence_logprob(const Parameters& params, const TokenSeq& context, const TokenSeq& target);

double log_softmax_pick(const std::vector<double>& logits, TokenId id);

}  // namespace scdpo::model
