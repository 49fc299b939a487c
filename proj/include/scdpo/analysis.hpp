#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scdpo/forge.hpp"
#include "scdpo/model.hpp"
#include "scdpo/sampler.hpp"

namespace scdpo::analysis {

// Per-token implicit rewards beta*(log pi(x|s) - log pi_sft(x|s)) over one
// scored sequence, with rendering metadata.
struct CreditReport {
    std::vector<std::string> token_texts;
    std::vector<double> rewards;
    std::ptrdiff_t onset_token = -1;  // first token of the erroneous suffix, -1 if unknown
    int error_onset_step = -1;        // step index k+1, -1 if unknown
    double prefix_mean_reward = 0.0;
    double suffix_mean_reward = 0.0;
};

std::vector<double> implicit_reward_tokens(const model::Parameters& policy, const model::Parameters& reference,
                                           const TokenSeq& context, const TokenSeq& sequence, double beta);

// Rewards over the dispreferred member of a step-controlled pair, with the
// error onset taken from the pair's k.
CreditReport credit_report(const model::Parameters& policy, const model::Parameters& reference,
                           const forge::SCPair& pair, double beta);

enum class ReportFormat { Html, Ansi };

// Deterministic bytes; token backgrounds map reward by per-report min-max
// normalization (darker = higher), mid-intensity when the range is degenerate.
std::string render_credit_report(const CreditReport& report, ReportFormat format);

struct EvalReport {
    std::size_t problem_count = 0;
    std::size_t correct = 0;
    std::size_t incorrect = 0;
    std::size_t unparseable = 0;
    double accuracy = 0.0;
    std::string decoding_mode;

    void write(const std::string& path) const;
    static EvalReport read(const std::string& path);
};

EvalReport eval_greedy_accuracy(const model::Parameters& params, const std::vector<taskgen::Problem>& problems,
                                const sampler::SampleBudget& budget, int workers = 1);

// One sample per problem at the given temperature.
EvalReport eval_sampled_accuracy(const model::Parameters& params, const std::vector<taskgen::Problem>& problems,
                                 double temperature, std::uint64_t seed, const sampler::SampleBudget& budget,
                                 int workers = 1);

struct SweepPoint {
    double temperature = 0.0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
};

struct SweepReport {
    std::string problem_set_id;
    std::vector<SweepPoint> points;  // sorted by (temperature, seed)

    void write(const std::string& path) const;
    static SweepReport read(const std::string& path);
};

// Temperature 0 is executed as greedy decoding.
SweepReport temperature_sweep(const model::Parameters& params, const std::vector<taskgen::Problem>& problems,
                              const std::vector<double>& temperatures, const std::vector<std::uint64_t>& seeds,
                              const sampler::SampleBudget& budget, int workers = 1,
                              const std::string& problem_set_id = "");

struct LocalizationStats {
    std::size_t pairs = 0;
    std::size_t localized = 0;  // pairs whose erroneous-suffix mean reward < shared-prefix mean
    double rate = 0.0;
};

LocalizationStats credit_localization(const model::Parameters& policy, const model::Parameters& reference,
                                      const std::vector<forge::SCPair>& pairs, double beta, int workers = 1);

}  // namespace scdpo::analysis
