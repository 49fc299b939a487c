// Command-line front end for the step-controlled DPO lab: task generation,
// SFT, dataset forging, preference training, evaluation and reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scdpo/analysis.hpp"
#include "scdpo/forge.hpp"
#include "scdpo/model.hpp"
#include "scdpo/parallel.hpp"
#include "scdpo/pipeline.hpp"
#include "scdpo/sha256.hpp"
#include "scdpo/trainer.hpp"

namespace {

// Exit codes: 0 ok, 1 usage, 2 config, 3 io, 4 precondition/refusal, 5 training failure.
enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kIo = 3, kRefused = 4, kTrainFailed = 5 };

struct CommonFlags {
    std::string config_path;
    std::string workdir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "run-config JSON file");
    cmd->add_option("--workdir", flags.workdir, "working directory (overrides config)");
    cmd->add_option("--seed", flags.seed, "global seed (overrides config)")->each([&](const std::string&) {
        flags.seed_set = true;
    });
    cmd->add_option("--workers", flags.workers, "worker threads (overrides config)");
    cmd->add_flag("--force", flags.force, "overwrite existing outputs");
}

scdpo::pipeline::RunConfig resolve_config(const CommonFlags& flags) {
    scdpo::pipeline::RunConfig cfg;
    if (!flags.config_path.empty()) cfg = scdpo::pipeline::RunConfig::load(flags.config_path);
    if (!flags.workdir.empty()) cfg.workdir = flags.workdir;
    if (flags.seed_set) cfg.seed = flags.seed;
    if (flags.workers > 0) cfg.workers = flags.workers;
    cfg.validate();
    return cfg;
}

scdpo::model::Parameters load_ckpt(const std::string& path, scdpo::model::Role role) {
    return scdpo::model::load_checkpoint(path, role);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"step-controlled DPO laboratory"};
    app.require_subcommand(1);

    CommonFlags flags;

    auto* gen = app.add_subcommand("gen-tasks", "generate train/heldout/eval problem sets");
    add_common(gen, flags);

    auto* sft = app.add_subcommand("sft", "train the SFT checkpoint on gold solutions");
    add_common(sft, flags);

    auto* forge_naive = app.add_subcommand("forge-naive", "sample naive preference pairs at temperature 1");
    add_common(forge_naive, flags);

    auto* forge_sc = app.add_subcommand("forge-sc", "sample step-controlled pairs with the rising schedule");
    add_common(forge_sc, flags);

    auto* train_cmd = app.add_subcommand("train", "preference-train a policy against the frozen SFT reference");
    std::string train_mode = "scdpo";
    train_cmd->add_option("--mode", train_mode, "dpo | dpo-data-equal | scdpo")->capture_default_str();
    add_common(train_cmd, flags);

    auto* eval_cmd = app.add_subcommand("eval", "greedy-decoding accuracy of a checkpoint");
    std::string eval_ckpt;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate (default: SFT)");
    std::string eval_out;
    eval_cmd->add_option("--out", eval_out, "report path (default: <workdir>/reports/eval.json)");
    add_common(eval_cmd, flags);

    auto* sweep_cmd = app.add_subcommand("sweep", "accuracy across sampling temperatures");
    std::vector<double> sweep_temps{0.0, 0.7, 1.0, 1.1, 1.4, 1.7};
    sweep_cmd->add_option("--temperatures", sweep_temps, "temperatures to sample at")->capture_default_str();
    std::vector<std::uint64_t> sweep_seeds{1, 2, 3};
    sweep_cmd->add_option("--seeds", sweep_seeds, "sampling seeds")->capture_default_str();
    std::string sweep_ckpt;
    sweep_cmd->add_option("--checkpoint", sweep_ckpt, "checkpoint to sweep (default: SFT)");
    add_common(sweep_cmd, flags);

    auto* credit_cmd = app.add_subcommand("credit-report", "render token-level implicit-reward reports");
    std::string credit_policy, credit_pairs_path, credit_format = "html";
    int credit_count = 5;
    credit_cmd->add_option("--policy", credit_policy, "policy checkpoint")->required();
    credit_cmd->add_option("--pairs", credit_pairs_path, "pair JSONL with step-controlled records")->required();
    credit_cmd->add_option("--format", credit_format, "html | ansi")->capture_default_str();
    credit_cmd->add_option("--count", credit_count, "number of reports")->capture_default_str();
    add_common(credit_cmd, flags);

    auto* pipe_cmd = app.add_subcommand("pipeline", "full run: tasks, SFT, forge, train, eval, comparison");
    std::string pipe_mode = "all";
    pipe_cmd->add_option("--mode", pipe_mode, "dpo | dpo-data-equal | scdpo | all")->capture_default_str();
    add_common(pipe_cmd, flags);

    CLI11_PARSE(app, argc, argv);

    try {
        scdpo::pipeline::RunConfig cfg = resolve_config(flags);
        scdpo::pipeline::RunPaths paths(cfg.workdir);

        if (gen->parsed()) {
            auto sets = scdpo::pipeline::cmd_gen_tasks(cfg, flags.force);
            std::printf("wrote %zu train / %zu heldout / %zu eval problems under %s\n", sets.train.size(),
                        sets.heldout.size(), sets.eval.size(), paths.problems_dir().c_str());
            return kOk;
        }

        if (sft->parsed()) {
            auto problems = scdpo::pipeline::load_or_generate_problems(cfg);
            auto params = scdpo::pipeline::stage_sft(cfg, problems, flags.force);
            std::printf("sft checkpoint at %s (%zu parameters)\n", paths.sft_checkpoint().c_str(),
                        params.parameter_count());
            return kOk;
        }

        if (forge_naive->parsed() || forge_sc->parsed()) {
            auto problems = scdpo::pipeline::load_or_generate_problems(cfg);
            auto params = scdpo::pipeline::stage_sft(cfg, problems, false);
            auto data = scdpo::pipeline::stage_forge(cfg, params, problems, forge_sc->parsed(), flags.force);
            std::printf("forged %zu naive pairs%s under %s\n", data.naive.size(),
                        forge_sc->parsed() ? (" and " + std::to_string(data.sc.size()) + " sc pairs").c_str() : "",
                        paths.datasets_dir(cfg.seed).c_str());
            return kOk;
        }

        if (train_cmd->parsed()) {
            auto mode = scdpo::pipeline::pipe_mode_from_string(train_mode);
            if (!mode) {
                std::fprintf(stderr, "unknown mode '%s'\n", train_mode.c_str());
                return kUsage;
            }
            auto problems = scdpo::pipeline::load_or_generate_problems(cfg);
            auto params = scdpo::pipeline::stage_sft(cfg, problems, false);
            bool need_sc = *mode != scdpo::pipeline::PipeMode::Dpo;
            auto data = scdpo::pipeline::stage_forge(cfg, params, problems, need_sc, false);
            auto heldout = scdpo::pipeline::stage_forge_heldout(cfg, params, problems, false);
            auto result = scdpo::pipeline::stage_train_mode(cfg, *mode, params, problems, data, heldout, flags.force);
            std::printf("%s policy at %s; eval accuracy %.4f\n", scdpo::pipeline::to_string(*mode),
                        result.checkpoint_path.c_str(), result.eval.accuracy);
            return kOk;
        }

        if (eval_cmd->parsed()) {
            auto problems = scdpo::pipeline::load_or_generate_problems(cfg);
            std::string ckpt = eval_ckpt.empty() ? paths.sft_checkpoint() : eval_ckpt;
            auto params = load_ckpt(ckpt, scdpo::model::Role::Policy);
            auto report = scdpo::analysis::eval_greedy_accuracy(params, problems.eval, cfg.budget, cfg.workers);
            scdpo::pipeline::ensure_dir(paths.reports_dir());
            std::string out = eval_out.empty() ? paths.reports_dir() + "/eval.json" : eval_out;
            report.write(out);
            scdpo::pipeline::write_stage_manifest(out + ".manifest.json", cfg, "eval",
                                                  {{ckpt, scdpo::Sha256::of_file(ckpt)}},
                                                  {{out, scdpo::Sha256::of_file(out)}});
            std::printf("accuracy %.4f (%zu/%zu correct, %zu unparseable) -> %s\n", report.accuracy, report.correct,
                        report.problem_count, report.unparseable, out.c_str());
            return kOk;
        }

        if (sweep_cmd->parsed()) {
            auto problems = scdpo::pipeline::load_or_generate_problems(cfg);
            std::string ckpt = sweep_ckpt.empty() ? paths.sft_checkpoint() : sweep_ckpt;
            auto params = load_ckpt(ckpt, scdpo::model::Role::Policy);
            auto report = scdpo::analysis::temperature_sweep(params, problems.eval, sweep_temps, sweep_seeds,
                                                             cfg.budget, cfg.workers, "eval");
            scdpo::pipeline::ensure_dir(paths.reports_dir());
            std::string out = paths.reports_dir() + "/sweep.json";
            report.write(out);
            scdpo::pipeline::write_stage_manifest(out + ".manifest.json", cfg, "sweep",
                                                  {{ckpt, scdpo::Sha256::of_file(ckpt)}},
                                                  {{out, scdpo::Sha256::of_file(out)}});
            for (const auto& p : report.points) {
                std::printf("T=%.2f seed=%llu accuracy=%.4f\n", p.temperature,
                            static_cast<unsigned long long>(p.seed), p.accuracy);
            }
            return kOk;
        }

        if (credit_cmd->parsed()) {
            auto policy = load_ckpt(credit_policy, scdpo::model::Role::Policy);
            auto reference = load_ckpt(paths.sft_checkpoint(), scdpo::model::Role::Reference);
            auto pairs = scdpo::forge::read_pairs(policy.vocab, credit_pairs_path);
            if (pairs.sc.empty()) {
                std::fprintf(stderr, "no step-controlled records in %s\n", credit_pairs_path.c_str());
                return kRefused;
            }
            scdpo::pipeline::ensure_dir(paths.reports_dir());
            auto format = credit_format == "ansi" ? scdpo::analysis::ReportFormat::Ansi
                                                  : scdpo::analysis::ReportFormat::Html;
            const char* ext = credit_format == "ansi" ? "ansi" : "html";
            int n = std::min<int>(credit_count, static_cast<int>(pairs.sc.size()));
            std::map<std::string, std::string> outputs;
            for (int i = 0; i < n; ++i) {
                auto report = scdpo::analysis::credit_report(policy, reference, pairs.sc[static_cast<std::size_t>(i)],
                                                             cfg.dpo.beta);
                std::string out = paths.reports_dir() + "/credit-" + std::to_string(i) + "." + ext;
                std::ofstream f(out, std::ios::binary);
                f << scdpo::analysis::render_credit_report(report, format);
                f.close();
                outputs[out] = scdpo::Sha256::of_file(out);
                std::printf("wrote %s\n", out.c_str());
            }
            scdpo::pipeline::write_stage_manifest(paths.reports_dir() + "/credit.manifest.json", cfg, "credit-report",
                                                  {{credit_policy, scdpo::Sha256::of_file(credit_policy)},
                                                   {credit_pairs_path, scdpo::Sha256::of_file(credit_pairs_path)}},
                                                  outputs);
            return kOk;
        }

        if (pipe_cmd->parsed()) {
            std::vector<scdpo::pipeline::PipeMode> modes;
            if (pipe_mode == "all") {
                modes = {scdpo::pipeline::PipeMode::Dpo, scdpo::pipeline::PipeMode::DpoDataEqual,
                         scdpo::pipeline::PipeMode::Scdpo};
            } else {
                auto mode = scdpo::pipeline::pipe_mode_from_string(pipe_mode);
                if (!mode) {
                    std::fprintf(stderr, "unknown mode '%s'\n", pipe_mode.c_str());
                    return kUsage;
                }
                modes = {*mode};
            }
            auto rows = scdpo::pipeline::cmd_pipeline(cfg, modes, flags.force);
            std::fputs(scdpo::pipeline::format_comparison(rows).c_str(), stdout);
            return kOk;
        }
    } catch (const scdpo::pipeline::RefusalError& e) {
        std::fprintf(stderr, "refused: %s\n", e.what());
        return kRefused;
    } catch (const scdpo::train::TrainAbortError& e) {
        std::fprintf(stderr, "training aborted: %s\n", e.what());
        return kTrainFailed;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kIo;
    }
    return kUsage;
}
