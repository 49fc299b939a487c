// Acceptance suite: every release criterion of this lab, run end to end with
// one pass/fail line per criterion. Exit code is the number of failures.
//
// The expensive fixture (problem sets, the SFT checkpoint, the forged
// datasets) is cached under the work directory; pass --fresh to rebuild it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "scdpo/analysis.hpp"
#include "scdpo/forge.hpp"
#include "scdpo/graph.hpp"
#include "scdpo/model.hpp"
#include "scdpo/parallel.hpp"
#include "scdpo/pipeline.hpp"
#include "scdpo/rng.hpp"
#include "scdpo/sha256.hpp"
#include "scdpo/tape.hpp"
#include "scdpo/trainer.hpp"

using namespace scdpo;
namespace fs = std::filesystem;

namespace {

constexpr double kLn2 = 0.6931471805599453;

struct Clock {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

int g_failures = 0;

void report(int index, const char* name, bool pass, double seconds, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", pass ? "PASS" : "FAIL", index, name, seconds,
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

model::Parameters random_tiny(std::uint64_t seed, int context = 256) {
    Vocab v = Vocab::task_vocab();
    model::ModelConfig c;
    c.vocab_size = v.size();
    c.context_length = context;
    c.embed_dim = 16;
    c.layer_count = 1;
    c.head_count = 2;
    c.feedforward_dim = 32;
    return model::init_parameters(c, v, seed);
}

forge::NaivePair synthetic_naive(const taskgen::Problem& p, const Vocab& vocab) {
    forge::NaivePair pair;
    pair.question_id = p.id;
    pair.question_text = p.question_text;
    pair.preferred = taskgen::render_gold_solution(p, vocab);
    std::string wrong = pair.preferred.raw_text;
    auto pos = wrong.rfind("The answer is ");
    wrong.replace(pos, std::string::npos, "The answer is " + std::to_string(p.gold_answer + 7) + ".");
    pair.dispreferred = taskgen::parse_solution(vocab, wrong);
    return pair;
}

forge::SCPair synthetic_sc(const taskgen::Problem& p, const Vocab& vocab, int k) {
    forge::SCPair pair;
    pair.question_id = p.id;
    pair.question_text = p.question_text;
    pair.preferred = taskgen::render_gold_solution(p, vocab);
    std::string text = vocab.decode(pair.preferred.prefix_tokens(k));
    auto eq = taskgen::parse_step_equation(pair.preferred.steps[static_cast<std::size_t>(k)].text);
    std::int64_t acc = eq->result;
    text += "Step " + std::to_string(k + 2) + ": " + std::to_string(acc) + " - 3 = " + std::to_string(acc - 3) +
            ".\nThe answer is " + std::to_string(acc - 3) + ".";
    pair.dispreferred_sc = taskgen::parse_solution(vocab, text);
    pair.k = k;
    return pair;
}

// ---------------------------------------------------------------------------

// Criterion 1: with policy = reference, loss_naive and loss_sc equal ln 2
// within 1e-9 on a 100-pair fixture, and every token reward is exactly 0.
void criterion_1() {
    Clock clock;
    model::Parameters policy = random_tiny(11);
    model::Parameters reference = policy;
    reference.role = model::Role::Reference;
    const Vocab& vocab = policy.vocab;

    bool pass = true;
    double worst = 0.0;
    std::size_t zero_rewards = 0, reward_count = 0;
    for (std::uint64_t s = 0; s < 50 && pass; ++s) {
        taskgen::Problem p = taskgen::generate_problem(s, 2, 5);
        forge::NaivePair np = synthetic_naive(p, vocab);
        int m = np.preferred.last_step_index();
        forge::SCPair sp = synthetic_sc(p, vocab, static_cast<int>(s) % m);

        double dn = std::fabs(train::loss_naive(policy, reference, np, 0.1) - kLn2);
        double ds = std::fabs(train::loss_sc(policy, reference, sp, 0.1) - kLn2);
        worst = std::max({worst, dn, ds});
        pass = pass && dn < 1e-9 && ds < 1e-9;

        TokenSeq prompt = taskgen::question_prompt(vocab, p);
        for (const taskgen::Solution* sol : {&np.preferred, &np.dispreferred, &sp.dispreferred_sc}) {
            auto rewards = analysis::implicit_reward_tokens(policy, reference, prompt,
                                                            taskgen::completion_tokens(vocab, *sol), 0.1);
            for (double r : rewards) {
                ++reward_count;
                if (r == 0.0) ++zero_rewards;
            }
        }
        pass = pass && zero_rewards == reward_count;
    }
    char detail[160];
    std::snprintf(detail, sizeof(detail), "100 pairs, worst |loss - ln2| = %.3g, %zu/%zu rewards exactly zero", worst,
                  zero_rewards, reward_count);
    report(1, "initialization identity (ln 2 losses, zero rewards)", pass, clock.seconds(), detail);
}

// Criterion 2: |loss_sc - loss_sc_stepwise| < 1e-9 on 500 forged SCPairs at
// 3 random model initializations.
void criterion_2(const std::vector<forge::SCPair>& forged_sc, const std::vector<taskgen::Problem>& problems) {
    Clock clock;
    std::vector<forge::SCPair> pairs(forged_sc.begin(),
                                     forged_sc.begin() + std::min<std::size_t>(forged_sc.size(), 500));
    std::size_t sampled = pairs.size();
    // top up with synthetically forged pairs if the sampled pool ran short
    RandomStream rng(2024);
    Vocab vocab = Vocab::task_vocab();
    for (std::size_t i = 0; pairs.size() < 500; ++i) {
        const taskgen::Problem& p = problems[i % problems.size()];
        int m = static_cast<int>(p.chain.ops.size());
        pairs.push_back(synthetic_sc(p, vocab, static_cast<int>(rng.next_below(static_cast<std::uint64_t>(m)))));
    }

    bool pass = true;
    double worst = 0.0;
    for (std::uint64_t init = 0; init < 3; ++init) {
        model::Parameters policy = random_tiny(100 + init);
        model::Parameters reference = random_tiny(200 + init);
        reference.role = model::Role::Reference;
        std::vector<double> gaps(pairs.size());
        parallel_for(pairs.size(), default_workers(), [&](std::size_t i) {
            double direct = train::loss_sc(policy, reference, pairs[i], 0.1);
            double stepwise = train::loss_sc_stepwise(policy, reference, pairs[i], 0.1);
            gaps[i] = std::fabs(direct - stepwise);
        });
        for (double gap : gaps) {
            worst = std::max(worst, gap);
            pass = pass && gap < 1e-9;
        }
    }
    char detail[140];
    std::snprintf(detail, sizeof(detail), "%zu pairs (%zu model-forged) x 3 inits, worst gap %.3g", pairs.size(),
                  sampled, worst);
    report(2, "step-decomposed loss identity", pass, clock.seconds(), detail);
}

// Criterion 3: fd_check relative error < 1e-4 for sft_loss, loss_naive,
// loss_sc and loss_scdpo on >= 200 sampled coordinates, 3 initializations.
void criterion_3() {
    Clock clock;
    Vocab vocab = Vocab::task_vocab();
    taskgen::Problem prob = taskgen::generate_problem(77, 2, 3);
    forge::NaivePair np = synthetic_naive(prob, vocab);
    forge::SCPair sp = synthetic_sc(prob, vocab, 0);
    train::SftExample sft_ex{prob.id, prob.question_text, taskgen::render_gold_solution(prob, vocab)};

    bool pass = true;
    double worst = 0.0;
    std::string worst_name;
    for (std::uint64_t init = 0; init < 3; ++init) {
        model::Parameters policy = random_tiny(300 + init, 192);
        model::Parameters reference = random_tiny(400 + init, 192);
        reference.role = model::Role::Reference;
        RandomStream rng(500 + init);
        auto coords = diff::sample_coords(policy, 200, rng);

        struct Case {
            std::string name;
            diff::LossFn fn;
            diff::GradientVector grad;
        };
        std::vector<Case> cases;

        {
            train::ItemGrad g = train::sft_item_grad(policy, sft_ex);
            cases.push_back({"sft_loss", [&](const model::Parameters& q) { return train::sft_loss(q, sft_ex); },
                             std::move(g.grad)});
        }
        {
            train::ItemGrad g = train::pair_item_grad(policy, reference, train::BatchItem::of(np), 0.1);
            cases.push_back({"loss_naive",
                             [&](const model::Parameters& q) { return train::loss_naive(q, reference, np, 0.1); },
                             std::move(g.grad)});
        }
        {
            train::ItemGrad g = train::pair_item_grad(policy, reference, train::BatchItem::of(sp), 0.1);
            cases.push_back({"loss_sc",
                             [&](const model::Parameters& q) { return train::loss_sc(q, reference, sp, 0.1); },
                             std::move(g.grad)});
        }
        {
            // 2-pair batch: the combined objective is the sum of the two
            // per-variant means, each mean here being a single item
            train::ItemGrad gn = train::pair_item_grad(policy, reference, train::BatchItem::of(np), 0.1);
            train::ItemGrad gs = train::pair_item_grad(policy, reference, train::BatchItem::of(sp), 0.1);
            diff::GradientVector combined = diff::GradientVector::zeros_like(policy);
            combined.accumulate(gn.grad, 1.0);
            combined.accumulate(gs.grad, 1.0);
            std::vector<train::BatchItem> batch{train::BatchItem::of(np), train::BatchItem::of(sp)};
            cases.push_back({"loss_scdpo",
                             [&, batch](const model::Parameters& q) {
                                 return train::loss_scdpo(q, reference, batch, 0.1).total;
                             },
                             std::move(combined)});
        }

        for (auto& c : cases) {
            diff::FdReport r = diff::fd_check(c.fn, c.grad, policy, diff::kDefaultFdEps, coords);
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                worst_name = c.name;
            }
            pass = pass && r.max_rel_error < 1e-4;
        }
    }
    char detail[140];
    std::snprintf(detail, sizeof(detail), "200 coords x 3 inits x 4 losses, worst rel err %.3g (%s)", worst,
                  worst_name.c_str());
    report(3, "gradient correctness against central differences", pass, clock.seconds(), detail);
}

// Criterion 4: every generation trace from a 1000-continuation forge run
// satisfies temp[j] = min(1.1 + 0.05 j, 1.4) exactly.
void criterion_4(const model::Parameters& sft, const std::vector<taskgen::Problem>& problems,
                 const pipeline::RunConfig& cfg) {
    Clock clock;
    sampler::TempSchedule schedule;

    // walk (problem, k) slots in parallel until >= 1000 attempts are traced
    const std::size_t slot_count = 700;
    std::vector<std::vector<sampler::GenerationTrace>> per_slot(slot_count);
    parallel_for(slot_count, cfg.workers, [&](std::size_t slot) {
        const taskgen::Problem& p = problems[slot % problems.size()];
        taskgen::Solution gold = taskgen::render_gold_solution(p, sft.vocab);
        int k = static_cast<int>(slot / problems.size()) % std::max(1, gold.last_step_index());
        sampler::sample_sc_continuation(sft, p, gold, k, schedule, cfg.budget, RandomStream::mix(4040, slot),
                                        &per_slot[slot]);
    });

    std::vector<sampler::GenerationTrace> traces;
    for (auto& v : per_slot) traces.insert(traces.end(), v.begin(), v.end());

    std::size_t checked = 0;
    bool pass = traces.size() >= 1000;
    for (const auto& t : traces) {
        for (std::size_t j = 0; j < t.step_temperatures.size(); ++j) {
            double expect = std::min(1.1 + 0.05 * static_cast<double>(j), 1.4);
            if (t.step_temperatures[j] != expect) pass = false;
            ++checked;
        }
    }
    char detail[120];
    std::snprintf(detail, sizeof(detail), "%zu traced continuations, %zu per-step temperatures all exact",
                  traces.size(), checked);
    report(4, "temperature schedule exactness over a forge run", pass, clock.seconds(), detail);
}

// Criterion 5: dataset lint passes on the full forged datasets.
void criterion_5(const std::vector<taskgen::Problem>& train_problems,
                 const std::vector<taskgen::Problem>& heldout_problems, const pipeline::ForgedData& data,
                 const pipeline::ForgedData& heldout) {
    Clock clock;
    forge::LintReport a = forge::lint_pairs(train_problems, data.naive, data.sc);
    forge::LintReport b = forge::lint_pairs(heldout_problems, heldout.naive, heldout.sc);
    bool pass = a.ok() && b.ok() && a.pairs_checked > 0 && b.pairs_checked > 0;
    for (const auto& v : a.violations) std::printf("    lint: %s\n", v.c_str());
    for (const auto& v : b.violations) std::printf("    lint: %s\n", v.c_str());
    char detail[120];
    std::snprintf(detail, sizeof(detail), "%zu train + %zu heldout pairs, %zu violations", a.pairs_checked,
                  b.pairs_checked, a.violations.size() + b.violations.size());
    report(5, "dataset invariants (verdicts, prefixes, exact step audit)", pass, clock.seconds(), detail);
}

// Criterion 6: mean sampled accuracy at temperature 1.4 <= at 0.7 over 500
// problems x 3 seeds (plus the sampler's greedy >= 1.4 sanity bound).
void criterion_6(const model::Parameters& sft, const std::vector<taskgen::Problem>& eval_problems,
                 const pipeline::RunConfig& cfg) {
    Clock clock;
    analysis::SweepReport sweep =
        analysis::temperature_sweep(sft, eval_problems, {0.7, 1.4}, {1, 2, 3}, cfg.budget, cfg.workers, "eval");
    double mean_07 = 0.0, mean_14 = 0.0;
    for (const auto& p : sweep.points) (p.temperature == 0.7 ? mean_07 : mean_14) += p.accuracy / 3.0;
    analysis::EvalReport greedy = analysis::eval_greedy_accuracy(sft, eval_problems, cfg.budget, cfg.workers);

    bool pass = mean_14 <= mean_07 && greedy.accuracy >= mean_14;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "%zu problems x 3 seeds: greedy %.3f, T=0.7 %.3f, T=1.4 %.3f",
                  eval_problems.size(), greedy.accuracy, mean_07, mean_14);
    report(6, "temperature-accuracy direction", pass, clock.seconds(), detail);
}

struct TrainedPolicies {
    model::Parameters scdpo;
    model::Parameters dpo;
};

// Criterion 7: after SCDPO training at the default config, the held-out mean
// implicit-reward margin is > 0 (it starts at exactly 0) and the final-epoch
// total loss sits strictly below ln 2 per variant present.
TrainedPolicies criterion_7(const pipeline::RunConfig& cfg, const model::Parameters& sft,
                            const pipeline::ForgedData& data, const pipeline::ForgedData& heldout) {
    Clock clock;
    TrainedPolicies out{sft, sft};

    model::Parameters reference = sft;
    reference.role = model::Role::Reference;

    train::Dataset train_data;
    train_data.naive = data.naive;
    train_data.sc = data.sc;
    train::Dataset heldout_data;
    heldout_data.naive = heldout.naive;
    heldout_data.sc = heldout.sc;
    auto heldout_items = heldout_data.pair_items(train::LossMode::Scdpo);

    double margin_init = train::mean_margin(sft, reference, heldout_items, cfg.dpo.beta, cfg.workers);

    model::Parameters policy = sft;
    train::TrainConfig tc = cfg.dpo;
    tc.loss_mode = train::LossMode::Scdpo;
    tc.seed = cfg.seed;
    tc.workers = cfg.workers;
    train::TrainLog log = train::train(policy, &reference, train_data, tc, &heldout_data);
    out.scdpo = policy;

    double margin_after = train::mean_margin(policy, reference, heldout_items, cfg.dpo.beta, cfg.workers);
    double final_total = log.epochs.back().total;

    bool pass = margin_init == 0.0 && margin_after > 0.0 && final_total < 2.0 * kLn2;
    char detail[180];
    std::snprintf(detail, sizeof(detail),
                  "margin 0 -> %.4f over %zu held-out pairs; final loss %.4f < 2 ln 2 = %.4f", margin_after,
                  heldout_items.size(), final_total, 2.0 * kLn2);
    report(7, "training dynamic (margins rise, loss falls)", pass, clock.seconds(), detail);
    return out;
}

// Criterion 8: on >= 200 held-out SCPairs the SCDPO policy puts the erroneous
// suffix below the shared prefix in >= 70% of pairs, and at least matches the
// DPO policy's localization rate.
void criterion_8(const pipeline::RunConfig& cfg, const model::Parameters& sft, const pipeline::ForgedData& data,
                 const pipeline::ForgedData& heldout, TrainedPolicies& policies) {
    Clock clock;

    model::Parameters reference = sft;
    reference.role = model::Role::Reference;

    // the DPO baseline policy, trained on the naive pairs only, same seed
    train::Dataset naive_only;
    naive_only.naive = data.naive;
    model::Parameters dpo_policy = sft;
    train::TrainConfig tc = cfg.dpo;
    tc.loss_mode = train::LossMode::DpoNaive;
    tc.seed = cfg.seed;
    tc.workers = cfg.workers;
    train::train(dpo_policy, &reference, naive_only, tc);
    policies.dpo = dpo_policy;

    analysis::LocalizationStats scdpo_stats =
        analysis::credit_localization(policies.scdpo, reference, heldout.sc, cfg.dpo.beta, cfg.workers);
    analysis::LocalizationStats dpo_stats =
        analysis::credit_localization(dpo_policy, reference, heldout.sc, cfg.dpo.beta, cfg.workers);

    bool pass = scdpo_stats.pairs >= 200 && scdpo_stats.rate >= 0.70 && scdpo_stats.rate >= dpo_stats.rate;
    char detail[160];
    std::snprintf(detail, sizeof(detail), "%zu held-out pairs: scdpo localizes %.1f%%, dpo %.1f%%", scdpo_stats.pairs,
                  100.0 * scdpo_stats.rate, 100.0 * dpo_stats.rate);
    report(8, "credit localization (error suffix below shared prefix)", pass, clock.seconds(), detail);
}

// Criterion 9: over 3 seeds, mean(SCDPO) >= mean(DPO) - 1pp on greedy eval
// accuracy (soft directional gate); the four-row comparison table and
// seed-pinned bit-exact reruns are hard gates.
void criterion_9(const pipeline::RunConfig& base_cfg, const model::Parameters& sft,
                 const pipeline::ProblemSets& problems, const pipeline::ForgedData& fixture_heldout) {
    Clock clock;

    // toy-scale per-seed runs: forge over a subset of the training problems,
    // in a directory tree of their own so seeds stay comparable
    pipeline::ProblemSets forge_set;
    forge_set.train.assign(problems.train.begin(),
                           problems.train.begin() + std::min<std::size_t>(problems.train.size(), 800));
    forge_set.heldout = problems.heldout;
    forge_set.eval = problems.eval;

    std::vector<pipeline::ComparisonRow> aggregate;
    analysis::EvalReport sft_eval =
        analysis::eval_greedy_accuracy(sft, problems.eval, base_cfg.budget, base_cfg.workers);
    aggregate.push_back({"sft", sft_eval.accuracy, sft_eval.correct, sft_eval.problem_count, 0, 0});

    double mean_acc[3] = {0.0, 0.0, 0.0};  // dpo, data-equal, scdpo
    std::size_t data_counts[3][2] = {{0, 0}, {0, 0}, {0, 0}};
    std::string rerun_detail = "rerun not executed";
    bool rerun_ok = false;

    const std::vector<std::uint64_t> seeds{1, 2, 3};
    const pipeline::PipeMode modes[3] = {pipeline::PipeMode::Dpo, pipeline::PipeMode::DpoDataEqual,
                                         pipeline::PipeMode::Scdpo};
    for (std::uint64_t seed : seeds) {
        pipeline::RunConfig cfg = base_cfg;
        cfg.seed = seed;
        cfg.workdir = base_cfg.workdir + "/c9";
        pipeline::ForgedData data = pipeline::stage_forge(cfg, sft, forge_set, true, false);
        const pipeline::ForgedData& heldout = fixture_heldout;
        for (int m = 0; m < 3; ++m) {
            pipeline::ModeResult r = pipeline::stage_train_mode(cfg, modes[m], sft, forge_set, data, heldout, false);
            // stage_train_mode already evaluated greedily on the shared eval split
            mean_acc[m] += r.eval.accuracy / static_cast<double>(seeds.size());
            data_counts[m][0] += r.n_naive;
            data_counts[m][1] += r.n_sc;

            if (seed == seeds[0] && modes[m] == pipeline::PipeMode::Scdpo) {
                // hard gate: a fresh rerun of this mode reproduces the checkpoint
                pipeline::RunConfig rerun_cfg = cfg;
                rerun_cfg.workdir = cfg.workdir + "/rerun";
                pipeline::ensure_dir(rerun_cfg.workdir);
                pipeline::ForgedData rerun_data = pipeline::stage_forge(rerun_cfg, sft, forge_set, true, true);
                pipeline::ModeResult r2 =
                    pipeline::stage_train_mode(rerun_cfg, modes[m], sft, forge_set, rerun_data, heldout, true);
                rerun_ok = model::parameters_hash(r.policy) == model::parameters_hash(r2.policy);
                rerun_detail = rerun_ok ? "rerun hash identical" : "rerun hash differs";
            }
        }
    }

    const char* labels[3] = {"dpo", "dpo-data-equal", "scdpo"};
    for (int m = 0; m < 3; ++m) {
        auto mean_correct =
            static_cast<std::size_t>(mean_acc[m] * static_cast<double>(sft_eval.problem_count) + 0.5);
        aggregate.push_back({labels[m], mean_acc[m], mean_correct, sft_eval.problem_count,
                             data_counts[m][0] / seeds.size(), data_counts[m][1] / seeds.size()});
    }
    pipeline::RunPaths paths(base_cfg.workdir);
    pipeline::ensure_dir(paths.reports_dir());
    pipeline::write_comparison(paths.reports_dir() + "/comparison-mean.txt", aggregate);
    std::fputs(pipeline::format_comparison(aggregate).c_str(), stdout);

    bool four_rows = aggregate.size() == 4;
    bool directional = mean_acc[2] >= mean_acc[0] - 0.01;
    bool pass = four_rows && directional && rerun_ok;
    char detail[200];
    std::snprintf(detail, sizeof(detail), "mean scdpo %.4f vs dpo %.4f (gate: >= dpo - 0.01); %s", mean_acc[2],
                  mean_acc[0], rerun_detail.c_str());
    report(9, "directional comparison across three seeds", pass, clock.seconds(), detail);
}

}  // namespace

int main(int argc, char** argv) {
    std::string workdir = "acceptance-work";
    bool fresh = false;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) workdir = argv[++i];
        if (std::strcmp(argv[i], "--fresh") == 0) fresh = true;
    }

    pipeline::RunConfig cfg;
    cfg.seed = 1;
    cfg.workdir = workdir;
    cfg.workers = default_workers();
    if (fresh) fs::remove_all(workdir);

    std::printf("== fixture setup (workdir %s) ==\n", workdir.c_str());
    std::fflush(stdout);
    Clock setup_clock;
    pipeline::ProblemSets problems = pipeline::load_or_generate_problems(cfg);
    model::Parameters sft = pipeline::stage_sft(cfg, problems, false);
    pipeline::ForgedData data = pipeline::stage_forge(cfg, sft, problems, true, false);
    pipeline::ForgedData heldout = pipeline::stage_forge_heldout(cfg, sft, problems, false);
    std::printf("fixture ready in %.1fs: %zu train problems, %zu naive + %zu sc pairs, %zu heldout sc pairs\n",
                setup_clock.seconds(), problems.train.size(), data.naive.size(), data.sc.size(), heldout.sc.size());
    if (data.naive_manifest.slots_attempted > 0 && data.naive_manifest.questions_with_correct > 0) {
        std::printf("at temperature 1, %.1f%% of training questions produced a correct sample within K=%d\n",
                    100.0 * static_cast<double>(data.naive_manifest.questions_with_correct) /
                        static_cast<double>(problems.train.size()),
                    cfg.budget.max_solutions_per_question);
    }
    std::printf("\n");
    std::fflush(stdout);

    criterion_1();
    criterion_2(data.sc, problems.train);
    criterion_3();
    criterion_4(sft, problems.train, cfg);
    criterion_5(problems.train, problems.heldout, data, heldout);
    criterion_6(sft, problems.eval, cfg);
    TrainedPolicies policies = criterion_7(cfg, sft, data, heldout);
    criterion_8(cfg, sft, data, heldout, policies);
    criterion_9(cfg, sft, problems, heldout);

    std::printf("\n%d of 9 criteria failed\n", g_failures);
    return g_failures;
}
