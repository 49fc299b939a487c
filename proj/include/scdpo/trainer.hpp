#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scdpo/forge.hpp"
#include "scdpo/model.hpp"
#include "scdpo/tape.hpp"

namespace scdpo::train {

enum class LossMode { Sft, DpoNaive, Scdpo };
const char* to_string(LossMode m);
std::optional<LossMode> loss_mode_from_string(const std::string& s);

struct TrainConfig {
    double beta = 0.1;
    double learning_rate = 1e-3;
    int epochs = 2;
    int batch_size = 16;
    std::uint64_t seed = 0;
    LossMode loss_mode = LossMode::Scdpo;
    // Weight on the step-controlled term; the combined objective adds the two
    // per-variant batch means.
    double sc_loss_weight = 1.0;
    int workers = 1;

    void validate() const;
};

struct BatchItem {
    enum class Kind { Naive, StepControlled };
    Kind kind = Kind::Naive;
    const forge::NaivePair* naive = nullptr;
    const forge::SCPair* sc = nullptr;

    static BatchItem of(const forge::NaivePair& p) { return {Kind::Naive, &p, nullptr}; }
    static BatchItem of(const forge::SCPair& p) { return {Kind::StepControlled, nullptr, &p}; }
};

struct LossBreakdown {
    double l_naive = 0.0;
    double l_sc = 0.0;
    double total = 0.0;
    double margin = 0.0;  // mean implicit-reward margin, preferred - dispreferred
    std::size_t naive_count = 0;
    std::size_t sc_count = 0;
};

struct SftExample {
    std::uint64_t problem_id = 0;
    std::string question_text;
    taskgen::Solution gold;
};

struct Dataset {
    std::vector<forge::NaivePair> naive;
    std::vector<forge::SCPair> sc;
    std::vector<SftExample> sft;

    std::vector<BatchItem> pair_items(LossMode mode) const;
};

// --- loss values (decoder scoring path) -------------------------------------

// beta * (log pi_theta(completion|ctx) - log pi_sft(completion|ctx)).
double pair_logratio(const model::Parameters& policy, const model::Parameters& reference, const TokenSeq& context,
                     const TokenSeq& completion, double beta);

// Mean per-token NLL of the gold completion; question tokens carry no loss.
double sft_loss(const model::Parameters& params, const SftExample& example);

// -log sigma of the preferred-minus-dispreferred logratio margin over whole
// solutions, conditioned on the question.
double loss_naive(const model::Parameters& policy, const model::Parameters& reference, const forge::NaivePair& pair,
                  double beta);

// Same, but conditioned on question + shared prefix steps 0..k, scoring only
// the step suffixes. Question and prefix tokens receive no loss.
double loss_sc(const model::Parameters& policy, const model::Parameters& reference, const forge::SCPair& pair,
               double beta);

// Step-level decomposition: per-step rewards, each scored by its own
// conditional call, summed over suffix steps before the sigmoid. Agrees with
// loss_sc to regrouping precision.
double loss_sc_stepwise(const model::Parameters& policy, const model::Parameters& reference,
                        const forge::SCPair& pair, double beta);

// Per-step rewards beta*log(pi/pi_sft) for steps k+1..last of one solution.
std::vector<double> step_rewards(const model::Parameters& policy, const model::Parameters& reference,
                                 const TokenSeq& question_prompt, const taskgen::Solution& solution, int k,
                                 double beta);

// Sum of the two per-variant batch means (absent variant contributes 0).
LossBreakdown loss_scdpo(const model::Parameters& policy, const model::Parameters& reference,
                         const std::vector<BatchItem>& batch, double beta, double sc_weight = 1.0);

// Implicit-reward margin of one pair (preferred minus dispreferred).
double pair_margin(const model::Parameters& policy, const model::Parameters& reference, const BatchItem& item,
                   double beta);
double mean_margin(const model::Parameters& policy, const model::Parameters& reference,
                   const std::vector<BatchItem>& items, double beta, int workers = 1);

// --- gradients (tape path) ---------------------------------------------------

struct ItemGrad {
    double loss = 0.0;
    diff::GradientVector grad;
};

ItemGrad sft_item_grad(const model::Parameters& policy, const SftExample& example);
ItemGrad pair_item_grad(const model::Parameters& policy, const model::Parameters& reference, const BatchItem& item,
                        double beta);

// --- optimization loop -------------------------------------------------------

struct TrainAbortError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class AdamOptimizer {
public:
    AdamOptimizer(const model::Parameters& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step(model::Parameters& params, const diff::GradientVector& grad);

private:
    double lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct EpochLog {
    int epoch = 0;
    double l_naive = 0.0;
    double l_sc = 0.0;
    double total = 0.0;
    double heldout_margin = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    void write(const std::string& path) const;  // line-oriented text
};

// Runs the configured number of epochs over the dataset, shuffling per epoch
// with the run seed. reference may be null only in SFT mode. Deterministic for
// any worker count: per-item gradients are reduced in item order.
TrainLog train(model::Parameters& policy, const model::Parameters* reference, const Dataset& data,
               const TrainConfig& config, const Dataset* heldout = nullptr);

}  // namespace scdpo::train
