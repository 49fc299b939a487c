#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scdpo/analysis.hpp"
#include "scdpo/forge.hpp"
#include "scdpo/model.hpp"
#include "scdpo/sampler.hpp"
#include "scdpo/trainer.hpp"

namespace scdpo::pipeline {

enum class PipeMode { Dpo, DpoDataEqual, Scdpo };
const char* to_string(PipeMode m);
std::optional<PipeMode> pipe_mode_from_string(const std::string& s);

// One resolved configuration drives every stage; flags override file values.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string workdir = "runs/lab";
    int workers = 2;

    int train_problems = 2000;
    int heldout_problems = 500;
    int eval_problems = 500;
    int ops_lo = 2;
    int ops_hi = 5;
    // Held-out problems actually forged into evaluation pairs (margins,
    // credit localization); forging all 500 would dominate runtime.
    int heldout_forge_problems = 320;

    model::ModelConfig model{/*vocab_size*/ 0, /*context*/ 256, /*embed*/ 64, /*layers*/ 2, /*heads*/ 2, /*ff*/ 128};

    double sft_learning_rate = 3e-3;
    int sft_epochs = 40;
    int sft_batch_size = 16;

    // Preference-training settings. The learning rate sits two orders below
    // the SFT rate; larger values over-optimize the margin and wreck greedy
    // accuracy at this scale.
    train::TrainConfig dpo{0.1, 1e-5, 2, 16, 0, train::LossMode::Scdpo, 1.0, 1};

    sampler::TempSchedule schedule;
    sampler::SampleBudget budget;
    int pairs_per_question = 1;
    int sc_per_preferred = 2;

    void validate() const;
    std::string to_json_string() const;
    static RunConfig from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static RunConfig load(const std::string& path);
    std::string content_hash() const;
};

struct RefusalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Directory layout under the workdir. Mode outputs never share directories.
struct RunPaths {
    std::string workdir;
    explicit RunPaths(std::string wd) : workdir(std::move(wd)) {}

    std::string problems_dir() const { return workdir + "/problems"; }
    std::string problems_file(const std::string& split) const { return problems_dir() + "/" + split + ".jsonl"; }
    std::string checkpoints_dir() const { return workdir + "/checkpoints"; }
    std::string sft_checkpoint() const { return checkpoints_dir() + "/sft.ckpt"; }
    std::string datasets_dir(std::uint64_t seed) const { return workdir + "/datasets/seed" + std::to_string(seed); }
    std::string mode_dir(PipeMode mode, std::uint64_t seed) const {
        return workdir + "/modes/" + to_string(mode) + "-seed" + std::to_string(seed);
    }
    std::string reports_dir() const { return workdir + "/reports"; }
    std::string logs_dir() const { return workdir + "/logs"; }
};

void ensure_dir(const std::string& path);

void write_stage_manifest(const std::string& path, const RunConfig& cfg, const std::string& stage,
                          const std::map<std::string, std::string>& inputs,
                          const std::map<std::string, std::string>& outputs);

struct ProblemSets {
    std::vector<taskgen::Problem> train;
    std::vector<taskgen::Problem> heldout;
    std::vector<taskgen::Problem> eval;
};

// Deterministic in cfg.seed; id spaces of the three splits are disjoint.
ProblemSets generate_problem_sets(const RunConfig& cfg);

// Writes the three JSONL files; refuses to overwrite without force.
ProblemSets cmd_gen_tasks(const RunConfig& cfg, bool force);

// Loads the problem files, generating them first if absent.
ProblemSets load_or_generate_problems(const RunConfig& cfg);

// Trains (or loads, when present and !force) the SFT checkpoint.
model::Parameters stage_sft(const RunConfig& cfg, const ProblemSets& problems, bool force);

struct ForgedData {
    std::vector<forge::NaivePair> naive;
    std::vector<forge::SCPair> sc;
    forge::DatasetManifest naive_manifest;
    forge::DatasetManifest sc_manifest;
};

// Forges (or reloads) the training datasets for the run seed.
ForgedData stage_forge(const RunConfig& cfg, const model::Parameters& sft, const ProblemSets& problems,
                       bool need_sc, bool force);

// Held-out pairs for margin and credit-localization evaluation.
ForgedData stage_forge_heldout(const RunConfig& cfg, const model::Parameters& sft, const ProblemSets& problems,
                               bool force);

struct ModeResult {
    PipeMode mode = PipeMode::Dpo;
    model::Parameters policy;
    train::TrainLog log;
    analysis::EvalReport eval;
    std::size_t n_naive = 0;
    std::size_t n_sc = 0;
    std::string checkpoint_path;
};

ModeResult stage_train_mode(const RunConfig& cfg, PipeMode mode, const model::Parameters& sft,
                            const ProblemSets& problems, const ForgedData& data, const ForgedData& heldout,
                            bool force);

struct ComparisonRow {
    std::string label;
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t problem_count = 0;
    std::size_t n_naive = 0;
    std::size_t n_sc = 0;
};

std::string format_comparison(const std::vector<ComparisonRow>& rows);
void write_comparison(const std::string& path, const std::vector<ComparisonRow>& rows);

// Runs forge + train + eval for the requested modes off one SFT checkpoint and
// emits the comparison table (SFT row first).
std::vector<ComparisonRow> cmd_pipeline(const RunConfig& cfg, const std::vector<PipeMode>& modes, bool force);

}  // namespace scdpo::pipeline
