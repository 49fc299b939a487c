#include "scdpo/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "scdpo/parallel.hpp"
#include "scdpo/rng.hpp"
#include "scdpo/sha256.hpp"

namespace scdpo::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using taskgen::Problem;

const char* to_string(PipeMode m) {
    switch (m) {
        case PipeMode::Dpo: return "dpo";
        case PipeMode::DpoDataEqual: return "dpo-data-equal";
        case PipeMode::Scdpo: return "scdpo";
    }
    return "?";
}

std::optional<PipeMode> pipe_mode_from_string(const std::string& s) {
    if (s == "dpo") return PipeMode::Dpo;
    if (s == "dpo-data-equal") return PipeMode::DpoDataEqual;
    if (s == "scdpo") return PipeMode::Scdpo;
    return std::nullopt;
}

void RunConfig::validate() const {
    if (train_problems <= 0 || heldout_problems <= 0 || eval_problems <= 0) {
        throw std::invalid_argument("run config: problem-set sizes must be positive");
    }
    if (ops_lo < 2 || ops_hi > 8 || ops_lo > ops_hi) {
        throw std::invalid_argument("run config: need 2 <= ops_lo <= ops_hi <= 8");
    }
    if (workers <= 0) throw std::invalid_argument("run config: workers must be positive");
    if (heldout_forge_problems <= 0) throw std::invalid_argument("run config: heldout_forge_problems must be positive");
    if (sft_learning_rate <= 0.0 || sft_epochs < 0 || sft_batch_size <= 0) {
        throw std::invalid_argument("run config: bad sft settings");
    }
    model::ModelConfig probe = model;
    probe.vocab_size = Vocab::task_vocab().size();
    probe.validate();
    dpo.validate();
    schedule.validate();
    budget.validate();
    if (pairs_per_question <= 0 || sc_per_preferred <= 0) {
        throw std::invalid_argument("run config: pair counts must be positive");
    }
}

std::string RunConfig::to_json_string() const {
    json j{
        {"seed", seed},
        {"workdir", workdir},
        {"workers", workers},
        {"problems",
         {{"train", train_problems},
          {"heldout", heldout_problems},
          {"eval", eval_problems},
          {"heldout_forge", heldout_forge_problems},
          {"ops_lo", ops_lo},
          {"ops_hi", ops_hi}}},
        {"model",
         {{"context_length", model.context_length},
          {"embed_dim", model.embed_dim},
          {"layer_count", model.layer_count},
          {"head_count", model.head_count},
          {"feedforward_dim", model.feedforward_dim}}},
        {"sft", {{"learning_rate", sft_learning_rate}, {"epochs", sft_epochs}, {"batch_size", sft_batch_size}}},
        {"dpo",
         {{"beta", dpo.beta},
          {"learning_rate", dpo.learning_rate},
          {"epochs", dpo.epochs},
          {"batch_size", dpo.batch_size},
          {"sc_loss_weight", dpo.sc_loss_weight}}},
        {"schedule", {{"start", schedule.start}, {"increment", schedule.increment}, {"cap", schedule.cap}}},
        {"budget",
         {{"max_solutions_per_question", budget.max_solutions_per_question},
          {"max_continuation_attempts", budget.max_continuation_attempts},
          {"max_tokens_per_solution", budget.max_tokens_per_solution},
          {"max_tokens_per_step", budget.max_tokens_per_step}}},
        {"forge", {{"pairs_per_question", pairs_per_question}, {"sc_per_preferred", sc_per_preferred}}},
    };
    return j.dump(2);
}

RunConfig RunConfig::from_json_string(const std::string& text) {
    json j = json::parse(text);
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.workdir = j.value("workdir", c.workdir);
    c.workers = j.value("workers", c.workers);
    if (j.contains("problems")) {
        const json& p = j.at("problems");
        c.train_problems = p.value("train", c.train_problems);
        c.heldout_problems = p.value("heldout", c.heldout_problems);
        c.eval_problems = p.value("eval", c.eval_problems);
        c.heldout_forge_problems = p.value("heldout_forge", c.heldout_forge_problems);
        c.ops_lo = p.value("ops_lo", c.ops_lo);
        c.ops_hi = p.value("ops_hi", c.ops_hi);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        c.model.context_length = m.value("context_length", c.model.context_length);
        c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
        c.model.layer_count = m.value("layer_count", c.model.layer_count);
        c.model.head_count = m.value("head_count", c.model.head_count);
        c.model.feedforward_dim = m.value("feedforward_dim", c.model.feedforward_dim);
    }
    if (j.contains("sft")) {
        const json& s = j.at("sft");
        c.sft_learning_rate = s.value("learning_rate", c.sft_learning_rate);
        c.sft_epochs = s.value("epochs", c.sft_epochs);
        c.sft_batch_size = s.value("batch_size", c.sft_batch_size);
    }
    if (j.contains("dpo")) {
        const json& d = j.at("dpo");
        c.dpo.beta = d.value("beta", c.dpo.beta);
        c.dpo.learning_rate = d.value("learning_rate", c.dpo.learning_rate);
        c.dpo.epochs = d.value("epochs", c.dpo.epochs);
        c.dpo.batch_size = d.value("batch_size", c.dpo.batch_size);
        c.dpo.sc_loss_weight = d.value("sc_loss_weight", c.dpo.sc_loss_weight);
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        c.schedule.start = s.value("start", c.schedule.start);
        c.schedule.increment = s.value("increment", c.schedule.increment);
        c.schedule.cap = s.value("cap", c.schedule.cap);
    }
    if (j.contains("budget")) {
        const json& b = j.at("budget");
        c.budget.max_solutions_per_question = b.value("max_solutions_per_question", c.budget.max_solutions_per_question);
        c.budget.max_continuation_attempts = b.value("max_continuation_attempts", c.budget.max_continuation_attempts);
        c.budget.max_tokens_per_solution = b.value("max_tokens_per_solution", c.budget.max_tokens_per_solution);
        c.budget.max_tokens_per_step = b.value("max_tokens_per_step", c.budget.max_tokens_per_step);
    }
    if (j.contains("forge")) {
        const json& f = j.at("forge");
        c.pairs_per_question = f.value("pairs_per_question", c.pairs_per_question);
        c.sc_per_preferred = f.value("sc_per_preferred", c.sc_per_preferred);
    }
    return c;
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("config: cannot open " + path);
    out << to_json_string() << '\n';
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_string(text);
}

std::string RunConfig::content_hash() const { return Sha256::of_string(to_json_string()); }

void ensure_dir(const std::string& path) { fs::create_directories(path); }

void write_stage_manifest(const std::string& path, const RunConfig& cfg, const std::string& stage,
                          const std::map<std::string, std::string>& inputs,
                          const std::map<std::string, std::string>& outputs) {
    json j{{"stage", stage}, {"seed", cfg.seed}, {"config_hash", cfg.content_hash()}, {"inputs", inputs},
           {"outputs", outputs}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("manifest: cannot open " + path);
    out << j.dump(2) << '\n';
}

namespace {

// Stage outputs land under their final names only once complete; an aborted
// stage leaves at most a .tmp file behind, which no loader ever picks up.
template <typename Writer>
void write_atomically(const std::string& path, Writer&& writer) {
    std::string tmp = path + ".tmp";
    writer(tmp);
    fs::rename(tmp, path);
}

// Disjoint-by-construction id spaces: bits 60..61 carry the split tag.
std::uint64_t problem_seed(std::uint64_t run_seed, std::uint64_t split_tag, std::uint64_t index) {
    return (run_seed & 0x0fffffffffffffffULL) ^ (split_tag << 60) ^ index;
}

std::vector<Problem> generate_split(const RunConfig& cfg, std::uint64_t split_tag, int count) {
    std::vector<Problem> out(static_cast<std::size_t>(count));
    parallel_for(out.size(), cfg.workers, [&](std::size_t i) {
        out[i] = taskgen::generate_problem(problem_seed(cfg.seed, split_tag, i), cfg.ops_lo, cfg.ops_hi);
    });
    return out;
}

std::map<std::string, std::string> hash_files(const std::vector<std::string>& paths) {
    std::map<std::string, std::string> out;
    for (const auto& p : paths) out[p] = Sha256::of_file(p);
    return out;
}

}  // namespace

ProblemSets generate_problem_sets(const RunConfig& cfg) {
    cfg.validate();
    ProblemSets sets;
    sets.train = generate_split(cfg, 1, cfg.train_problems);
    sets.heldout = generate_split(cfg, 2, cfg.heldout_problems);
    sets.eval = generate_split(cfg, 3, cfg.eval_problems);
    return sets;
}

ProblemSets cmd_gen_tasks(const RunConfig& cfg, bool force) {
    RunPaths paths(cfg.workdir);
    ensure_dir(paths.problems_dir());
    for (const char* split : {"train", "heldout", "eval"}) {
        if (!force && fs::exists(paths.problems_file(split))) {
            throw RefusalError("gen-tasks: " + paths.problems_file(split) + " exists; pass --force to overwrite");
        }
    }
    ProblemSets sets = generate_problem_sets(cfg);
    write_atomically(paths.problems_file("train"), [&](const std::string& p) { taskgen::write_problems(p, sets.train); });
    write_atomically(paths.problems_file("heldout"), [&](const std::string& p) { taskgen::write_problems(p, sets.heldout); });
    write_atomically(paths.problems_file("eval"), [&](const std::string& p) { taskgen::write_problems(p, sets.eval); });
    write_stage_manifest(paths.problems_dir() + "/manifest.json", cfg, "gen-tasks", {},
                         hash_files({paths.problems_file("train"), paths.problems_file("heldout"),
                                     paths.problems_file("eval")}));
    return sets;
}

ProblemSets load_or_generate_problems(const RunConfig& cfg) {
    RunPaths paths(cfg.workdir);
    if (fs::exists(paths.problems_file("train")) && fs::exists(paths.problems_file("heldout")) &&
        fs::exists(paths.problems_file("eval"))) {
        ProblemSets sets;
        sets.train = taskgen::read_problems(paths.problems_file("train"));
        sets.heldout = taskgen::read_problems(paths.problems_file("heldout"));
        sets.eval = taskgen::read_problems(paths.problems_file("eval"));
        return sets;
    }
    return cmd_gen_tasks(cfg, true);
}

namespace {

// The rendered texts must fit the model context alongside room to generate.
void check_context_budget(const RunConfig& cfg, const model::Parameters& params, const ProblemSets& problems) {
    const Vocab& vocab = params.vocab;
    std::size_t longest = 0;
    for (const auto* split : {&problems.train, &problems.heldout, &problems.eval}) {
        for (const Problem& p : *split) {
            taskgen::Solution gold = taskgen::render_gold_solution(p, vocab);
            std::size_t len = taskgen::question_prompt(vocab, p).size() + gold.tokens.size() + 1;
            longest = std::max(longest, len);
        }
    }
    if (longest > static_cast<std::size_t>(params.config.context_length)) {
        throw std::invalid_argument("context_length " + std::to_string(params.config.context_length) +
                                    " is shorter than the longest rendered example (" + std::to_string(longest) + ")");
    }
}

}  // namespace

model::Parameters stage_sft(const RunConfig& cfg, const ProblemSets& problems, bool force) {
    RunPaths paths(cfg.workdir);
    ensure_dir(paths.checkpoints_dir());
    ensure_dir(paths.logs_dir());
    if (!force && fs::exists(paths.sft_checkpoint())) {
        return model::load_checkpoint(paths.sft_checkpoint(), model::Role::Policy);
    }

    Vocab vocab = Vocab::task_vocab();
    model::ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    model::Parameters params = model::init_parameters(mc, vocab, cfg.seed, model::Role::Policy);
    check_context_budget(cfg, params, problems);

    train::Dataset data;
    data.sft.reserve(problems.train.size());
    for (const Problem& p : problems.train) {
        data.sft.push_back({p.id, p.question_text, taskgen::render_gold_solution(p, vocab)});
    }

    train::TrainConfig tc;
    tc.loss_mode = train::LossMode::Sft;
    tc.learning_rate = cfg.sft_learning_rate;
    tc.epochs = cfg.sft_epochs;
    tc.batch_size = cfg.sft_batch_size;
    tc.seed = cfg.seed;
    tc.workers = cfg.workers;
    train::TrainLog log = train::train(params, nullptr, data, tc);

    write_atomically(paths.sft_checkpoint(), [&](const std::string& p) { model::save_checkpoint(params, p); });
    log.write(paths.logs_dir() + "/sft.log");
    write_stage_manifest(paths.checkpoints_dir() + "/sft.manifest.json", cfg, "sft",
                         hash_files({paths.problems_file("train")}), hash_files({paths.sft_checkpoint()}));
    return params;
}

ForgedData stage_forge(const RunConfig& cfg, const model::Parameters& sft, const ProblemSets& problems, bool need_sc,
                       bool force) {
    RunPaths paths(cfg.workdir);
    std::string dir = paths.datasets_dir(cfg.seed);
    ensure_dir(dir);
    std::string naive_path = dir + "/naive.jsonl";
    std::string sc_path = dir + "/sc.jsonl";

    ForgedData data;
    if (!force && fs::exists(naive_path)) {
        forge::PairFile file = forge::read_pairs(sft.vocab, naive_path);
        data.naive = std::move(file.naive);
        data.naive_manifest = forge::DatasetManifest::read(dir + "/naive.manifest.json");
    } else {
        forge::ForgeOptions opts{cfg.seed, cfg.pairs_per_question, cfg.sc_per_preferred, cfg.workers};
        auto [pairs, manifest] = forge::build_naive_pairs(sft, problems.train, cfg.budget, opts);
        data.naive = std::move(pairs);
        data.naive_manifest = manifest;
        write_atomically(naive_path, [&](const std::string& p) { forge::write_pairs(p, data.naive, {}); });
        manifest.write(dir + "/naive.manifest.json");
        write_stage_manifest(dir + "/naive.stage.json", cfg, "forge-naive",
                             {{"sft_parameters", model::parameters_hash(sft)}}, hash_files({naive_path}));
    }
    if (need_sc) {
        if (data.naive.empty()) {
            throw std::runtime_error("forge: no naive pairs were produced; the SFT model is too weak to forge with");
        }
        if (!force && fs::exists(sc_path)) {
            forge::PairFile file = forge::read_pairs(sft.vocab, sc_path);
            data.sc = std::move(file.sc);
            data.sc_manifest = forge::DatasetManifest::read(dir + "/sc.manifest.json");
        } else {
            forge::ForgeOptions opts{cfg.seed, cfg.pairs_per_question, cfg.sc_per_preferred, cfg.workers};
            auto [pairs, manifest] = forge::build_sc_pairs(sft, problems.train, data.naive, cfg.schedule, cfg.budget,
                                                           opts);
            data.sc = std::move(pairs);
            data.sc_manifest = manifest;
            write_atomically(sc_path, [&](const std::string& p) { forge::write_pairs(p, {}, data.sc); });
            manifest.write(dir + "/sc.manifest.json");
            write_stage_manifest(dir + "/sc.stage.json", cfg, "forge-sc", hash_files({naive_path}),
                                 hash_files({sc_path}));
        }
    }
    return data;
}

ForgedData stage_forge_heldout(const RunConfig& cfg, const model::Parameters& sft, const ProblemSets& problems,
                               bool force) {
    RunPaths paths(cfg.workdir);
    std::string dir = paths.datasets_dir(cfg.seed);
    ensure_dir(dir);
    std::string path = dir + "/heldout.jsonl";

    ForgedData data;
    if (!force && fs::exists(path)) {
        forge::PairFile file = forge::read_pairs(sft.vocab, path);
        data.naive = std::move(file.naive);
        data.sc = std::move(file.sc);
        return data;
    }
    std::vector<Problem> subset(problems.heldout.begin(),
                                problems.heldout.begin() + std::min<std::size_t>(problems.heldout.size(),
                                                                                 static_cast<std::size_t>(cfg.heldout_forge_problems)));
    forge::ForgeOptions opts{cfg.seed ^ 0x68656c64ULL, cfg.pairs_per_question, cfg.sc_per_preferred, cfg.workers};
    auto [naive, naive_manifest] = forge::build_naive_pairs(sft, subset, cfg.budget, opts);
    data.naive = std::move(naive);
    naive_manifest.write(dir + "/heldout.naive.manifest.json");
    if (!data.naive.empty()) {
        auto [sc, sc_manifest] = forge::build_sc_pairs(sft, subset, data.naive, cfg.schedule, cfg.budget, opts);
        data.sc = std::move(sc);
        sc_manifest.write(dir + "/heldout.sc.manifest.json");
    }
    write_atomically(path, [&](const std::string& p) { forge::write_pairs(p, data.naive, data.sc); });
    return data;
}

ModeResult stage_train_mode(const RunConfig& cfg, PipeMode mode, const model::Parameters& sft,
                            const ProblemSets& problems, const ForgedData& data, const ForgedData& heldout,
                            bool force) {
    RunPaths paths(cfg.workdir);
    std::string dir = paths.mode_dir(mode, cfg.seed);
    ensure_dir(dir);
    std::string ckpt = dir + "/policy.ckpt";

    ModeResult result;
    result.mode = mode;
    result.checkpoint_path = ckpt;

    train::Dataset train_data;
    forge::DatasetManifest expand_manifest;
    switch (mode) {
        case PipeMode::Dpo:
            train_data.naive = data.naive;
            break;
        case PipeMode::DpoDataEqual: {
            std::size_t target = data.naive.size() + data.sc.size();
            forge::ForgeOptions opts{cfg.seed, cfg.pairs_per_question, cfg.sc_per_preferred, cfg.workers};
            auto [expanded, manifest] = forge::expand_naive_for_data_equal(sft, problems.train, data.naive, target,
                                                                           cfg.budget, opts);
            train_data.naive = std::move(expanded);
            expand_manifest = manifest;
            write_atomically(dir + "/naive_expanded.jsonl",
                             [&](const std::string& p) { forge::write_pairs(p, train_data.naive, {}); });
            manifest.write(dir + "/naive_expanded.manifest.json");
            break;
        }
        case PipeMode::Scdpo:
            train_data.naive = data.naive;
            train_data.sc = data.sc;
            break;
    }
    result.n_naive = train_data.naive.size();
    result.n_sc = train_data.sc.size();

    if (!force && fs::exists(ckpt)) {
        result.policy = model::load_checkpoint(ckpt, model::Role::Policy);
    } else {
        train::Dataset heldout_data;
        heldout_data.naive = heldout.naive;
        heldout_data.sc = heldout.sc;

        model::Parameters policy = sft;
        policy.role = model::Role::Policy;
        model::Parameters reference = sft;
        reference.role = model::Role::Reference;

        train::TrainConfig tc = cfg.dpo;
        tc.loss_mode = mode == PipeMode::Scdpo ? train::LossMode::Scdpo : train::LossMode::DpoNaive;
        tc.seed = cfg.seed;
        tc.workers = cfg.workers;
        result.log = train::train(policy, &reference, train_data, tc, &heldout_data);
        write_atomically(ckpt, [&](const std::string& p) { model::save_checkpoint(policy, p); });
        result.log.write(dir + "/train.log");
        result.policy = std::move(policy);
        write_stage_manifest(dir + "/manifest.json", cfg, std::string("train-") + to_string(mode),
                             {{"sft_parameters", model::parameters_hash(sft)}}, hash_files({ckpt}));
    }

    result.eval = analysis::eval_greedy_accuracy(result.policy, problems.eval, cfg.budget, cfg.workers);
    result.eval.write(dir + "/eval.json");
    return result;
}

std::string format_comparison(const std::vector<ComparisonRow>& rows) {
    char line[160];
    std::string out;
    out += "method          accuracy   correct/total   n_naive   n_sc\n";
    out += "------          --------   -------------   -------   ----\n";
    for (const ComparisonRow& r : rows) {
        std::snprintf(line, sizeof(line), "%-15s %8.4f   %7zu/%-5zu   %7zu   %4zu\n", r.label.c_str(), r.accuracy,
                      r.correct, r.problem_count, r.n_naive, r.n_sc);
        out += line;
    }
    return out;
}

void write_comparison(const std::string& path, const std::vector<ComparisonRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("comparison: cannot open " + path);
    out << format_comparison(rows);
}

namespace {

// Failures surface with the failing stage in the message; the atomic writers
// above guarantee no half-written artifact survives under its final name.
template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const RefusalError&) {
        throw;
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("stage ") + stage + ": " + e.what());
    }
}

}  // namespace

std::vector<ComparisonRow> cmd_pipeline(const RunConfig& cfg, const std::vector<PipeMode>& modes, bool force) {
    cfg.validate();
    RunPaths paths(cfg.workdir);
    ensure_dir(cfg.workdir);
    ensure_dir(paths.reports_dir());
    cfg.save(cfg.workdir + "/config.json");

    ProblemSets problems = run_stage("gen-tasks", [&] { return load_or_generate_problems(cfg); });
    model::Parameters sft = run_stage("sft", [&] { return stage_sft(cfg, problems, false); });

    bool need_sc = false;
    for (PipeMode m : modes) need_sc = need_sc || m == PipeMode::Scdpo || m == PipeMode::DpoDataEqual;
    ForgedData data = run_stage("forge", [&] { return stage_forge(cfg, sft, problems, need_sc, force); });
    ForgedData heldout = run_stage("forge-heldout", [&] { return stage_forge_heldout(cfg, sft, problems, force); });

    std::vector<ComparisonRow> rows;
    analysis::EvalReport sft_eval =
        run_stage("eval", [&] { return analysis::eval_greedy_accuracy(sft, problems.eval, cfg.budget, cfg.workers); });
    rows.push_back({"sft", sft_eval.accuracy, sft_eval.correct, sft_eval.problem_count, 0, 0});

    for (PipeMode mode : modes) {
        ModeResult r = run_stage(to_string(mode),
                                 [&] { return stage_train_mode(cfg, mode, sft, problems, data, heldout, force); });
        rows.push_back({to_string(mode), r.eval.accuracy, r.eval.correct, r.eval.problem_count, r.n_naive, r.n_sc});
    }

    write_comparison(paths.reports_dir() + "/comparison-seed" + std::to_string(cfg.seed) + ".txt", rows);
    return rows;
}

}  // namespace scdpo::pipeline
