#include "scdpo/graph.hpp"

namespace scdpo::graph {

using diff::Tape;

Tape::NodeId transformer_logits(Tape& tape, const model::Parameters& params, const TokenSeq& full) {
    const model::ModelConfig& c = params.config;
    if (full.size() < 2) throw std::invalid_argument("transformer_logits: need at least two tokens");
    const int n = static_cast<int>(full.size()) - 1;
    if (n > c.context_length) throw model::ContextOverflowError("transformer_logits: sequence exceeds context_length");

    std::vector<int> tok_rows(static_cast<std::size_t>(n));
    std::vector<int> pos_rows(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        TokenId id = full[static_cast<std::size_t>(i)];
        if (id < 0 || id >= c.vocab_size) throw std::out_of_range("transformer_logits: token id out of range");
        tok_rows[static_cast<std::size_t>(i)] = id;
        pos_rows[static_cast<std::size_t>(i)] = i;
    }

    Tape::NodeId x = tape.add(tape.gather_rows(tape.param("tok_embed"), tok_rows),
                              tape.gather_rows(tape.param("pos_embed"), pos_rows));
    for (int l = 0; l < c.layer_count; ++l) {
        std::string p = "l" + std::to_string(l) + ".";
        Tape::NodeId h = tape.layer_norm(x, tape.param(p + "ln1.g"), tape.param(p + "ln1.b"));
        Tape::NodeId q = tape.matmul(h, tape.param(p + "wq"));
        Tape::NodeId k = tape.matmul(h, tape.param(p + "wk"));
        Tape::NodeId v = tape.matmul(h, tape.param(p + "wv"));
        Tape::NodeId attn = tape.causal_attention(q, k, v, c.head_count);
        x = tape.add(x, tape.matmul(attn, tape.param(p + "wo")));
        Tape::NodeId h2 = tape.layer_norm(x, tape.param(p + "ln2.g"), tape.param(p + "ln2.b"));
        Tape::NodeId f = tape.matmul(tape.gelu(tape.matmul(h2, tape.param(p + "ff1"))), tape.param(p + "ff2"));
        x = tape.add(x, f);
    }
    Tape::NodeId xf = tape.layer_norm(x, tape.param("lnf.g"), tape.param("lnf.b"));
    return tape.matmul(xf, tape.param("head"));
}

Tape::NodeId completion_logprobs(Tape& tape, const model::Parameters& params, const TokenSeq& full,
                                 std::size_t context_len) {
    if (context_len == 0) throw std::invalid_argument("completion_logprobs: context must be non-empty");
    if (context_len >= full.size()) throw std::invalid_argument("completion_logprobs: empty completion");
    if (static_cast<int>(full.size()) > params.config.context_length) {
        throw model::ContextOverflowError("completion_logprobs: sequence exceeds context_length");
    }
    Tape::NodeId logits = transformer_logits(tape, params, full);
    std::vector<int> positions;
    std::vector<TokenId> targets;
    positions.reserve(full.size() - context_len);
    targets.reserve(full.size() - context_len);
    for (std::size_t p = context_len; p < full.size(); ++p) {
        positions.push_back(static_cast<int>(p - 1));
        targets.push_back(full[p]);
    }
    return tape.logprob_pick(logits, std::move(positions), std::move(targets));
}

}  // namespace scdpo::graph
