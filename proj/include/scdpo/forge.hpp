#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scdpo/sampler.hpp"
#include "scdpo/taskgen.hpp"

namespace scdpo::forge {

// Preferred/dispreferred pair judged on final answers only.
struct NaivePair {
    std::uint64_t question_id = 0;
    std::string question_text;
    taskgen::Solution preferred;
    taskgen::Solution dispreferred;
};

// Pair whose dispreferred member shares steps 0..k with the preferred one and
// errs only afterwards.
struct SCPair {
    std::uint64_t question_id = 0;
    std::string question_text;
    taskgen::Solution preferred;
    taskgen::Solution dispreferred_sc;
    int k = 0;
    std::vector<double> trace_temperatures;
};

struct DatasetManifest {
    std::string kind;  // "naive", "sc", "expand"
    std::uint64_t seed = 0;
    std::size_t n_naive = 0;
    std::size_t n_sc = 0;
    std::size_t slots_attempted = 0;
    std::size_t slots_emitted = 0;
    std::size_t slots_skipped = 0;
    std::size_t samples_drawn = 0;
    // questions that produced at least one Correct sample within the K budget
    std::size_t questions_with_correct = 0;
    std::size_t rejected_by_clean = 0;
    std::size_t rejected_unsound_steps = 0;
    std::size_t garbled_attempts = 0;
    std::size_t rejected_duplicates = 0;
    bool target_reached = true;

    void write(const std::string& path) const;
    static DatasetManifest read(const std::string& path);
};

inline const std::vector<std::string> kCleanMarkers = {"error", "apolog"};

// False iff the text contains any marker, case-insensitively.
bool is_clean_text(const std::string& text);
bool is_clean(const taskgen::Solution& s);

struct ForgeOptions {
    std::uint64_t seed = 0;
    int pairs_per_question = 1;
    int sc_per_preferred = 2;
    int workers = 1;
};

// Samples each question at temperature 1 until one preferred and one
// dispreferred solution exist (per requested pair) or K samples are spent.
// Preferred solutions must be correct, clean, and pass the exact per-step
// arithmetic audit.
std::pair<std::vector<NaivePair>, DatasetManifest> build_naive_pairs(const model::Parameters& params_sft,
                                                                     const std::vector<taskgen::Problem>& problems,
                                                                     const sampler::SampleBudget& budget,
                                                                     const ForgeOptions& options);

// Builds step-controlled pairs from the preferred solutions of naive pairs,
// drawing k uniformly without replacement per solution.
std::pair<std::vector<SCPair>, DatasetManifest> build_sc_pairs(
    const model::Parameters& params_sft, const std::vector<taskgen::Problem>& problems,
    const std::vector<NaivePair>& naive, const sampler::TempSchedule& schedule,
    const sampler::SampleBudget& budget, const ForgeOptions& options,
    std::vector<sampler::GenerationTrace>* all_traces = nullptr);

// Continues temperature-1 sampling to grow the naive set to target_count
// distinct pairs (the data-equal baseline). Returns the expanded set; the
// manifest flags an unreachable target.
std::pair<std::vector<NaivePair>, DatasetManifest> expand_naive_for_data_equal(
    const model::Parameters& params_sft, const std::vector<taskgen::Problem>& problems,
    const std::vector<NaivePair>& existing, std::size_t target_count, const sampler::SampleBudget& budget,
    const ForgeOptions& options);

// JSONL persistence; naive and step-controlled records share one file,
// discriminated by a "kind" field. step_offsets freeze segmentation.
void write_pairs(const std::string& path, const std::vector<NaivePair>& naive, const std::vector<SCPair>& sc);

struct PairFile {
    std::vector<NaivePair> naive;
    std::vector<SCPair> sc;
};
PairFile read_pairs(const Vocab& vocab, const std::string& path);

struct LintReport {
    std::size_t pairs_checked = 0;
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

// Validates every pair invariant: verdicts, cleanliness, per-step arithmetic
// of preferred solutions, k range, and byte-identical shared prefixes.
LintReport lint_pairs(const std::vector<taskgen::Problem>& problems, const std::vector<NaivePair>& naive,
                      const std::vector<SCPair>& sc);

}  // namespace scdpo::forge
