#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scdpo/vocab.hpp"

namespace scdpo::taskgen {

enum class OpKind { Add, Sub, Mul };

struct ChainOp {
    OpKind op;
    std::int64_t operand;  // in [1, 20]
    bool operator==(const ChainOp&) const = default;
};

struct OpChain {
    std::int64_t start = 0;  // in [1, 50]
    std::vector<ChainOp> ops;
    bool operator==(const OpChain&) const = default;
};

struct Problem {
    std::uint64_t id = 0;
    OpChain chain;
    std::string question_text;
    std::int64_t gold_answer = 0;
    bool operator==(const Problem&) const = default;
};

// Half-open token interval within a solution's token sequence. Spans of
// consecutive steps are contiguous and cover the whole sequence.
struct StepSpan {
    int index = 0;
    std::size_t begin_token = 0;
    std::size_t end_token = 0;
    std::string text;
    bool operator==(const StepSpan&) const = default;
};

struct Solution {
    std::vector<StepSpan> steps;
    std::optional<std::int64_t> final_answer;
    std::string raw_text;
    TokenSeq tokens;  // encode(raw_text), cached so spans can be sliced cheaply

    int last_step_index() const { return steps.empty() ? -1 : steps.back().index; }
    // Tokens of steps [0, k], the shared-prefix unit used by step-controlled sampling.
    TokenSeq prefix_tokens(int k) const;
    TokenSeq suffix_tokens(int k) const;  // tokens of steps [k+1, last]
    bool operator==(const Solution&) const = default;
};

enum class Verdict { Correct, Incorrect, Unparseable };

const char* to_string(Verdict v);
const char* to_string(OpKind k);
std::optional<OpKind> op_from_string(const std::string& s);

struct OverflowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Left-to-right evaluation; throws OverflowError if any intermediate leaves
// the 64-bit signed range.
std::int64_t eval_chain(const OpChain& chain);

// Intermediate magnitudes are capped during generation so that rendered
// questions and solutions stay short and the per-step arithmetic is learnable
// by a small model.
inline constexpr std::int64_t kDefaultValueCap = 99;
inline constexpr std::int64_t kOperandMin = 1, kOperandMax = 20;
inline constexpr std::int64_t kStartMin = 1, kStartMax = 50;

// Deterministic in seed; ops length uniform in [lo, hi]; rejection-resamples
// chains whose intermediates exceed value_cap.
Problem generate_problem(std::uint64_t seed, int lo, int hi,
                         std::int64_t value_cap = kDefaultValueCap);

// Canonical solution text: one "Step j: a <op> b = c." line per chain
// operation, then "The answer is N."
Solution render_gold_solution(const Problem& p, const Vocab& vocab);

std::vector<StepSpan> segment_tokens(const Vocab& vocab, const TokenSeq& ids);
std::vector<StepSpan> segment_steps(const Vocab& vocab, const std::string& text);

// Integer from the last occurrence of "The answer is <int>."; empty when the
// marker is absent or the integer is malformed.
std::optional<std::int64_t> extract_final_answer(const std::string& text);

// Segments text, extracts the final answer, and clears the answer when the
// answer marker does not land in the last step (a solution that keeps going
// after announcing its answer has no trustworthy final answer).
Solution parse_solution(const Vocab& vocab, const std::string& text);
Solution parse_solution_tokens(const Vocab& vocab, const TokenSeq& ids);

Verdict verify_solution(const Problem& p, const Solution& s);

// One parsed "Step j: a <op> b = c." line.
struct StepEquation {
    int display_index = 0;
    std::int64_t lhs = 0;
    OpKind op = OpKind::Add;
    std::int64_t rhs = 0;
    std::int64_t result = 0;
};

std::optional<StepEquation> parse_step_equation(const std::string& line);

// True when every computation step parses as a step equation whose equality
// holds, and the final step is the answer line. This is the exact per-step
// audit the synthetic task affords.
bool steps_arithmetically_sound(const Solution& s);

// Conditioning tokens for the model: the question text plus a newline.
TokenSeq question_prompt(const Vocab& vocab, const std::string& question_text);
inline TokenSeq question_prompt(const Vocab& vocab, const Problem& p) {
    return question_prompt(vocab, p.question_text);
}

// Solution tokens terminated by <eos>; the unit that log-probabilities and
// losses are computed over.
TokenSeq completion_tokens(const Vocab& vocab, const Solution& s);

// JSONL persistence: one problem object per line.
void write_problems(const std::string& path, const std::vector<Problem>& problems);
std::vector<Problem> read_problems(const std::string& path);

}  // namespace scdpo::taskgen
