#include "scdpo/sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace scdpo::sampler {

void TempSchedule::validate() const {
    if (start > cap) throw std::invalid_argument("temp schedule: start must not exceed cap");
    if (increment < 0.0) throw std::invalid_argument("temp schedule: increment must be non-negative");
}

double temp_at(const TempSchedule& s, int j) {
    if (j < 0) throw std::invalid_argument("temp_at: step ordinal must be non-negative");
    double t = s.start + static_cast<double>(j) * s.increment;
    return t < s.cap ? t : s.cap;
}

void SampleBudget::validate() const {
    if (max_solutions_per_question <= 0 || max_continuation_attempts <= 0 || max_tokens_per_solution <= 0 ||
        max_tokens_per_step <= 0) {
        throw std::invalid_argument("sample budget: all limits must be positive");
    }
}

const char* to_string(Termination t) {
    switch (t) {
        case Termination::Eos: return "eos";
        case Termination::LengthLimit: return "length-limit";
        case Termination::Garbled: return "garbled";
    }
    return "?";
}

bool is_garbled_tokens(const Vocab& vocab, const TokenSeq& step_tokens, const SampleBudget& budget) {
    if (static_cast<int>(step_tokens.size()) > budget.max_tokens_per_step) return true;
    if (step_tokens.empty()) return false;
    std::size_t unknown = 0;
    int run = 0;
    TokenId prev = -1;
    for (TokenId id : step_tokens) {
        if (id == vocab.unk_id()) ++unknown;
        run = id == prev ? run + 1 : 1;
        prev = id;
        if (run > 8) return true;
    }
    return static_cast<double>(unknown) / static_cast<double>(step_tokens.size()) > 0.2;
}

bool is_garbled(const Vocab& vocab, const std::string& step_text, const SampleBudget& budget) {
    return is_garbled_tokens(vocab, vocab.encode(step_text), budget);
}

TokenId sample_token(const std::vector<double>& logits, double temperature, RandomStream& rng) {
    if (temperature <= 0.0) {
        TokenId best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<TokenId>(i);
        }
        return best;
    }
    double mx = logits[0];
    for (double g : logits) mx = g > mx ? g : mx;
    std::vector<double> probs(logits.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp((logits[i] - mx) / temperature);
        denom += probs[i];
    }
    double u = rng.next_unit() * denom;
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(probs.size() - 1);
}

taskgen::Solution sample_solution(const model::Parameters& params, const taskgen::Problem& problem,
                                  double temperature, std::uint64_t rng_seed, const SampleBudget& budget) {
    budget.validate();
    const Vocab& vocab = params.vocab;
    TokenSeq prompt = taskgen::question_prompt(vocab, problem);
    model::Decoder dec(params);
    for (TokenId id : prompt) dec.push(id);

    RandomStream rng(rng_seed);
    TokenSeq ids;
    while (static_cast<int>(ids.size()) < budget.max_tokens_per_solution &&
           dec.length() < params.config.context_length) {
        TokenId tok = sample_token(dec.logits(), temperature, rng);
        if (tok == vocab.eos_id()) break;
        ids.push_back(tok);
        dec.push(tok);
    }
    return taskgen::parse_solution_tokens(vocab, ids);
}

namespace {

struct AttemptResult {
    TokenSeq generated;
    GenerationTrace trace;
    bool garbled = false;
};

AttemptResult run_continuation_attempt(const model::Parameters& params, const TokenSeq& prompt,
                                       const TokenSeq& prefix, const TempSchedule& schedule,
                                       const SampleBudget& budget, RandomStream& rng) {
    const Vocab& vocab = params.vocab;
    model::Decoder dec(params);
    for (TokenId id : prompt) dec.push(id);
    for (TokenId id : prefix) dec.push(id);

    AttemptResult res;
    res.trace.termination = Termination::Eos;
    int step_ordinal = 0;   // generated steps, 0-based; prefix consumes no schedule positions
    TokenSeq step_tokens;   // tokens of the generated step in progress
    const int max_total = budget.max_tokens_per_solution;

    auto close_step = [&]() {
        if (!step_tokens.empty() && is_garbled_tokens(vocab, step_tokens, budget)) res.garbled = true;
        step_tokens.clear();
    };

    for (;;) {
        if (static_cast<int>(prefix.size() + res.generated.size()) >= max_total ||
            dec.length() >= params.config.context_length) {
            res.trace.termination = Termination::LengthLimit;
            break;
        }
        double temp = temp_at(schedule, step_ordinal);
        TokenId tok = sample_token(dec.logits(), temp, rng);
        if (tok == vocab.eos_id()) {
            res.trace.termination = Termination::Eos;
            break;
        }
        if (step_tokens.empty()) res.trace.step_temperatures.push_back(temp);
        res.generated.push_back(tok);
        dec.push(tok);
        step_tokens.push_back(tok);
        if (static_cast<int>(step_tokens.size()) > budget.max_tokens_per_step) {
            res.garbled = true;
            res.trace.termination = Termination::Garbled;
            break;
        }
        if (tok == vocab.newline_id()) {
            close_step();
            if (res.garbled) {
                res.trace.termination = Termination::Garbled;
                break;
            }
            ++step_ordinal;
        }
    }
    if (!res.garbled) {
        close_step();
        if (res.garbled) res.trace.termination = Termination::Garbled;
    }
    res.trace.token_count = static_cast<int>(res.generated.size());
    return res;
}

}  // namespace

std::optional<ScContinuation> sample_sc_continuation(const model::Parameters& params,
                                                     const taskgen::Problem& problem,
                                                     const taskgen::Solution& preferred, int k,
                                                     const TempSchedule& schedule, const SampleBudget& budget,
                                                     std::uint64_t rng_seed,
                                                     std::vector<GenerationTrace>* attempt_traces) {
    schedule.validate();
    budget.validate();
    if (taskgen::verify_solution(problem, preferred) != taskgen::Verdict::Correct) {
        throw std::invalid_argument("sample_sc_continuation: prefix source must verify Correct");
    }
    const int m = preferred.last_step_index();
    if (k < 0 || k > m - 1) {
        throw std::invalid_argument("sample_sc_continuation: k must lie in [0, m-1]");
    }

    const Vocab& vocab = params.vocab;
    TokenSeq prompt = taskgen::question_prompt(vocab, problem);
    TokenSeq prefix = preferred.prefix_tokens(k);

    for (int attempt = 0; attempt < budget.max_continuation_attempts; ++attempt) {
        RandomStream rng = RandomStream::keyed(rng_seed, 0x7363ULL, static_cast<std::uint64_t>(attempt));
        AttemptResult res = run_continuation_attempt(params, prompt, prefix, schedule, budget, rng);
        if (attempt_traces) attempt_traces->push_back(res.trace);
        if (res.garbled || res.generated.empty()) continue;

        TokenSeq full = prefix;
        full.insert(full.end(), res.generated.begin(), res.generated.end());
        taskgen::Solution candidate = taskgen::parse_solution_tokens(vocab, full);
        if (taskgen::verify_solution(problem, candidate) != taskgen::Verdict::Incorrect) continue;

        // The continuation must open a fresh step: if it glued itself onto
        // step k, the shared-prefix contract of an SCPair is unsatisfiable.
        if (candidate.last_step_index() < k + 1) continue;
        bool prefix_intact = true;
        for (int j = 0; j <= k && prefix_intact; ++j) {
            const auto& a = candidate.steps[static_cast<std::size_t>(j)];
            const auto& b = preferred.steps[static_cast<std::size_t>(j)];
            prefix_intact = a.begin_token == b.begin_token && a.end_token == b.end_token && a.text == b.text;
        }
        if (!prefix_intact) continue;

        ScContinuation out;
        out.solution = std::move(candidate);
        out.trace = res.trace;
        out.trace.accepted = true;
        if (attempt_traces) attempt_traces->back().accepted = true;
        out.attempts_used = attempt + 1;
        return out;
    }
    return std::nullopt;
}

}  // namespace scdpo::sampler
