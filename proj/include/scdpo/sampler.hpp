#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "scdpo/model.hpp"
#include "scdpo/rng.hpp"
#include "scdpo/taskgen.hpp"

namespace scdpo::sampler {

// Rising per-step sampling temperature used to induce errors in continuations.
struct TempSchedule {
    double start = 1.1;
    double increment = 0.05;
    double cap = 1.4;
    void validate() const;
};

// j counts newly generated steps only (prefix steps are forced, not generated).
double temp_at(const TempSchedule& s, int j);

struct SampleBudget {
    int max_solutions_per_question = 100;  // K
    int max_continuation_attempts = 32;
    int max_tokens_per_solution = 200;
    int max_tokens_per_step = 64;
    void validate() const;
};

enum class Termination { Eos, LengthLimit, Garbled };
const char* to_string(Termination t);

struct GenerationTrace {
    std::vector<double> step_temperatures;  // one per generated step that produced tokens
    int token_count = 0;
    Termination termination = Termination::Eos;
    bool accepted = false;  // attempt produced the returned continuation
};

// Degenerate text carrying no reasoning signal: over-long steps, unknown-token
// floods, or runaway repetition.
bool is_garbled_tokens(const Vocab& vocab, const TokenSeq& step_tokens, const SampleBudget& budget);
bool is_garbled(const Vocab& vocab, const std::string& step_text, const SampleBudget& budget);

// Draws one token from softmax(logits / temperature); temperature <= 0 decodes
// greedily (argmax, lowest id on ties).
TokenId sample_token(const std::vector<double>& logits, double temperature, RandomStream& rng);

// Samples a full solution to the question at a fixed temperature.
// Deterministic in rng_seed.
taskgen::Solution sample_solution(const model::Parameters& params, const taskgen::Problem& problem,
                                  double temperature, std::uint64_t rng_seed, const SampleBudget& budget);

struct ScContinuation {
    taskgen::Solution solution;  // prefix steps followed by the generated steps
    GenerationTrace trace;
    int attempts_used = 0;
};

// Continues a verified-correct solution from after step k with the rising
// temperature schedule, retrying until an attempt reaches an incorrect final
// answer. Garbled or unparseable attempts are discarded. Empty result when the
// attempt budget is exhausted.
std::optional<ScContinuation> sample_sc_continuation(const model::Parameters& params,
                                                     const taskgen::Problem& problem,
                                                     const taskgen::Solution& preferred, int k,
                                                     const TempSchedule& schedule, const SampleBudget& budget,
                                                     std::uint64_t rng_seed,
                                                     std::vector<GenerationTrace>* attempt_traces = nullptr);

}  // namespace scdpo::sampler
