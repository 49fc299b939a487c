#pragma once

#include "scdpo/model.hpp"
#include "scdpo/tape.hpp"

namespace scdpo::graph {

// Records the causal transformer over full[0 .. len-2] (the last token is
// never an input) and returns the logits node, shape [len-1, vocab_size].
// The recorded arithmetic matches model::Decoder bit for bit.
diff::Tape::NodeId transformer_logits(diff::Tape& tape, const model::Parameters& params, const TokenSeq& full);

// Column vector of per-token log-probabilities for positions
// [context_len, full.size()): entry r is log p(full[context_len + r] | prefix).
diff::Tape::NodeId completion_logprobs(diff::Tape& tape, const model::Parameters& params, const TokenSeq& full,
                                       std::size_t context_len);

}  // namespace scdpo::graph
