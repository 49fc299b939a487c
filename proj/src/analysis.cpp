#include "scdpo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "scdpo/parallel.hpp"
#include "scdpo/rng.hpp"

namespace scdpo::analysis {

using nlohmann::json;

std::vector<double> implicit_reward_tokens(const model::Parameters& policy, const model::Parameters& reference,
                                           const TokenSeq& context, const TokenSeq& sequence, double beta) {
    std::vector<double> pol = model::token_logprobs(policy, context, sequence);
    std::vector<double> ref = model::token_logprobs(reference, context, sequence);
    std::vector<double> out(pol.size());
    for (std::size_t i = 0; i < pol.size(); ++i) out[i] = beta * (pol[i] - ref[i]);
    return out;
}

CreditReport credit_report(const model::Parameters& policy, const model::Parameters& reference,
                           const forge::SCPair& pair, double beta) {
    const Vocab& vocab = policy.vocab;
    TokenSeq context = taskgen::question_prompt(vocab, pair.question_text);
    TokenSeq sequence = taskgen::completion_tokens(vocab, pair.dispreferred_sc);

    CreditReport report;
    report.rewards = implicit_reward_tokens(policy, reference, context, sequence, beta);
    report.token_texts.reserve(sequence.size());
    for (TokenId id : sequence) report.token_texts.push_back(vocab.symbol(id));
    report.error_onset_step = pair.k + 1;
    report.onset_token =
        static_cast<std::ptrdiff_t>(pair.dispreferred_sc.steps[static_cast<std::size_t>(pair.k)].end_token);

    double pre = 0.0, suf = 0.0;
    std::size_t onset = static_cast<std::size_t>(report.onset_token);
    for (std::size_t i = 0; i < report.rewards.size(); ++i) (i < onset ? pre : suf) += report.rewards[i];
    report.prefix_mean_reward = onset ? pre / static_cast<double>(onset) : 0.0;
    std::size_t suffix_n = report.rewards.size() - onset;
    report.suffix_mean_reward = suffix_n ? suf / static_cast<double>(suffix_n) : 0.0;
    return report;
}

namespace {

std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

// Min-max over the report; 0.5 everywhere when the range is degenerate.
std::vector<double> normalized_intensity(const std::vector<double>& rewards) {
    std::vector<double> t(rewards.size(), 0.5);
    if (rewards.empty()) return t;
    double lo = rewards[0], hi = rewards[0];
    for (double r : rewards) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    if (hi - lo > 1e-12) {
        for (std::size_t i = 0; i < rewards.size(); ++i) t[i] = (rewards[i] - lo) / (hi - lo);
    }
    return t;
}

}  // namespace

std::string render_credit_report(const CreditReport& report, ReportFormat format) {
    std::vector<double> t = normalized_intensity(report.rewards);
    char buf[160];
    std::string out;

    if (format == ReportFormat::Html) {
        out += "<!doctype html>\n<html><head><meta charset=\"utf-8\">\n<style>\n"
               "body{font-family:monospace;font-size:14px;line-height:1.8;margin:2em}\n"
               ".t{padding:1px 2px;border-radius:2px;white-space:pre}\n"
               ".onset{border-left:3px solid #c00;margin-left:4px;padding-left:4px}\n"
               "</style></head><body>\n";
        if (report.error_onset_step >= 0) {
            std::snprintf(buf, sizeof(buf), "<p>error onset at step %d (token %td)</p>\n", report.error_onset_step,
                          report.onset_token);
            out += buf;
        }
        std::snprintf(buf, sizeof(buf), "<p>prefix mean %.6f, suffix mean %.6f</p>\n<p>\n", report.prefix_mean_reward,
                      report.suffix_mean_reward);
        out += buf;
        for (std::size_t i = 0; i < report.token_texts.size(); ++i) {
            // darker = higher reward
            int r = static_cast<int>(std::lround(255.0 - t[i] * 185.0));
            int g = static_cast<int>(std::lround(255.0 - t[i] * 155.0));
            int b = static_cast<int>(std::lround(255.0 - t[i] * 85.0));
            const char* fg = t[i] > 0.6 ? "#fff" : "#000";
            bool onset_here = report.onset_token >= 0 && static_cast<std::ptrdiff_t>(i) == report.onset_token;
            std::snprintf(buf, sizeof(buf), "<span class=\"t%s\" style=\"background:rgb(%d,%d,%d);color:%s\">",
                          onset_here ? " onset" : "", r, g, b, fg);
            out += buf;
            if (report.token_texts[i] == "\n") {
                out += "\\n</span><br>\n";
            } else {
                out += html_escape(report.token_texts[i]);
                out += "</span>";
            }
        }
        out += "\n</p></body></html>\n";
        return out;
    }

    for (std::size_t i = 0; i < report.token_texts.size(); ++i) {
        if (report.onset_token >= 0 && static_cast<std::ptrdiff_t>(i) == report.onset_token) {
            out += "\x1b[0m\x1b[31m[error-onset]\x1b[0m";
        }
        int shade = static_cast<int>(std::lround(255.0 - t[i] * 23.0));  // 255 light .. 232 dark
        int fg = t[i] > 0.6 ? 231 : 16;
        std::snprintf(buf, sizeof(buf), "\x1b[48;5;%dm\x1b[38;5;%dm", shade, fg);
        out += buf;
        if (report.token_texts[i] == "\n") {
            out += "\x1b[0m\n";
        } else {
            out += report.token_texts[i];
        }
    }
    out += "\x1b[0m\n";
    return out;
}

namespace {

EvalReport tally(const model::Parameters& params, const std::vector<taskgen::Problem>& problems, double temperature,
                 std::uint64_t seed, const sampler::SampleBudget& budget, int workers, std::string mode_label) {
    if (problems.empty()) throw std::invalid_argument("eval: empty problem set");
    std::vector<taskgen::Verdict> verdicts(problems.size());
    parallel_for(problems.size(), workers, [&](std::size_t i) {
        taskgen::Solution s = sampler::sample_solution(params, problems[i], temperature,
                                                       RandomStream::mix(seed, problems[i].id), budget);
        verdicts[i] = taskgen::verify_solution(problems[i], s);
    });
    EvalReport r;
    r.problem_count = problems.size();
    for (taskgen::Verdict v : verdicts) {
        switch (v) {
            case taskgen::Verdict::Correct: ++r.correct; break;
            case taskgen::Verdict::Incorrect: ++r.incorrect; break;
            case taskgen::Verdict::Unparseable: ++r.unparseable; break;
        }
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.problem_count);
    r.decoding_mode = std::move(mode_label);
    return r;
}

}  // namespace

EvalReport eval_greedy_accuracy(const model::Parameters& params, const std::vector<taskgen::Problem>& problems,
                                const sampler::SampleBudget& budget, int workers) {
    return tally(params, problems, 0.0, 0, budget, workers, "greedy");
}

EvalReport eval_sampled_accuracy(const model::Parameters& params, const std::vector<taskgen::Problem>& problems,
                                 double temperature, std::uint64_t seed, const sampler::SampleBudget& budget,
                                 int workers) {
    if (temperature <= 0.0) return eval_greedy_accuracy(params, problems, budget, workers);
    char label[64];
    std::snprintf(label, sizeof(label), "temperature=%.2f seed=%llu", temperature,
                  static_cast<unsigned long long>(seed));
    return tally(params, problems, temperature, seed, budget, workers, label);
}

void EvalReport::write(const std::string& path) const {
    json j{{"problem_count", problem_count}, {"correct", correct},       {"incorrect", incorrect},
           {"unparseable", unparseable},     {"accuracy", accuracy},     {"decoding_mode", decoding_mode}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("eval report: cannot open " + path);
    out << j.dump(2) << '\n';
}

EvalReport EvalReport::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("eval report: cannot open " + path);
    json j = json::parse(in);
    EvalReport r;
    r.problem_count = j.at("problem_count").get<std::size_t>();
    r.correct = j.at("correct").get<std::size_t>();
    r.incorrect = j.at("incorrect").get<std::size_t>();
    r.unparseable = j.at("unparseable").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.decoding_mode = j.at("decoding_mode").get<std::string>();
    return r;
}

SweepReport temperature_sweep(const model::Parameters& params, const std::vector<taskgen::Problem>& problems,
                              const std::vector<double>& temperatures, const std::vector<std::uint64_t>& seeds,
                              const sampler::SampleBudget& budget, int workers, const std::string& problem_set_id) {
    if (temperatures.empty()) throw std::invalid_argument("temperature_sweep: no temperatures");
    if (seeds.empty()) throw std::invalid_argument("temperature_sweep: no seeds");
    std::vector<double> temps = temperatures;
    std::sort(temps.begin(), temps.end());
    std::vector<std::uint64_t> ss = seeds;
    std::sort(ss.begin(), ss.end());

    SweepReport report;
    report.problem_set_id = problem_set_id;
    for (double t : temps) {
        for (std::uint64_t s : ss) {
            EvalReport r = eval_sampled_accuracy(params, problems, t, s, budget, workers);
            report.points.push_back({t, s, r.accuracy});
        }
    }
    return report;
}

void SweepReport::write(const std::string& path) const {
    json pts = json::array();
    for (const SweepPoint& p : points) pts.push_back({{"temperature", p.temperature}, {"seed", p.seed}, {"accuracy", p.accuracy}});
    json j{{"problem_set_id", problem_set_id}, {"points", pts}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("sweep report: cannot open " + path);
    out << j.dump(2) << '\n';
}

SweepReport SweepReport::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("sweep report: cannot open " + path);
    json j = json::parse(in);
    SweepReport r;
    r.problem_set_id = j.at("problem_set_id").get<std::string>();
    for (const auto& p : j.at("points")) {
        r.points.push_back({p.at("temperature").get<double>(), p.at("seed").get<std::uint64_t>(),
                            p.at("accuracy").get<double>()});
    }
    return r;
}

LocalizationStats credit_localization(const model::Parameters& policy, const model::Parameters& reference,
                                      const std::vector<forge::SCPair>& pairs, double beta, int workers) {
    LocalizationStats stats;
    stats.pairs = pairs.size();
    if (pairs.empty()) return stats;
    std::vector<char> localized(pairs.size(), 0);
    parallel_for(pairs.size(), workers, [&](std::size_t i) {
        CreditReport r = credit_report(policy, reference, pairs[i], beta);
        localized[i] = r.suffix_mean_reward < r.prefix_mean_reward ? 1 : 0;
    });
    for (char c : localized) stats.localized += static_cast<std::size_t>(c);
    stats.rate = static_cast<double>(stats.localized) / static_cast<double>(stats.pairs);
    return stats;
}

}  // namespace scdpo::analysis
