#include "scdpo/forge.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "scdpo/parallel.hpp"
#include "scdpo/rng.hpp"

namespace scdpo::forge {

using nlohmann::json;
using taskgen::Problem;
using taskgen::Solution;
using taskgen::Verdict;

namespace {

constexpr std::uint64_t kNaiveTag = 0x6e61697665ULL;
constexpr std::uint64_t kScTag = 0x7363ULL;
constexpr std::uint64_t kExpandTag = 0x657870616e64ULL;

char ascii_lower(char c) { return c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c; }

bool contains_ci(const std::string& haystack, const std::string& needle) {
    if (needle.empty() || haystack.size() < needle.size()) return false;
    for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        bool hit = true;
        for (std::size_t j = 0; j < needle.size() && hit; ++j) {
            hit = ascii_lower(haystack[i + j]) == ascii_lower(needle[j]);
        }
        if (hit) return true;
    }
    return false;
}

// Preferred-side eligibility: correct answers must also be clean and pass the
// exact step audit (the programmatic stand-in for a human solution review).
bool preferred_eligible(const Solution& s, DatasetManifest& manifest) {
    if (!is_clean(s)) {
        ++manifest.rejected_by_clean;
        return false;
    }
    if (!taskgen::steps_arithmetically_sound(s)) {
        ++manifest.rejected_unsound_steps;
        return false;
    }
    return true;
}

const Problem& problem_by_id(const std::vector<Problem>& problems, std::uint64_t id) {
    for (const Problem& p : problems) {
        if (p.id == id) return p;
    }
    throw std::runtime_error("forge: no problem with id " + std::to_string(id));
}

json solution_to_json(const Solution& s) {
    json offsets = json::array();
    for (const auto& span : s.steps) offsets.push_back(span.begin_token);
    return json{{"text", s.raw_text}, {"step_offsets", offsets}};
}

Solution solution_from_json(const Vocab& vocab, const json& j) {
    Solution s;
    s.raw_text = j.at("text").get<std::string>();
    s.tokens = vocab.encode(s.raw_text);
    std::vector<std::size_t> offsets = j.at("step_offsets").get<std::vector<std::size_t>>();
    if (offsets.empty() || offsets.front() != 0) throw std::runtime_error("step_offsets must start at 0");
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        std::size_t begin = offsets[i];
        std::size_t end = i + 1 < offsets.size() ? offsets[i + 1] : s.tokens.size();
        if (begin >= end || end > s.tokens.size()) throw std::runtime_error("step_offsets do not partition the tokens");
        taskgen::StepSpan span;
        span.index = static_cast<int>(i);
        span.begin_token = begin;
        span.end_token = end;
        span.text = vocab.decode(TokenSeq(s.tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                                          s.tokens.begin() + static_cast<std::ptrdiff_t>(end)));
        s.steps.push_back(std::move(span));
    }
    s.final_answer = taskgen::extract_final_answer(s.raw_text);
    if (s.final_answer && s.steps.back().text.find("The answer is ") == std::string::npos) {
        s.final_answer = std::nullopt;
    }
    return s;
}

}  // namespace

bool is_clean_text(const std::string& text) {
    for (const std::string& marker : kCleanMarkers) {
        if (contains_ci(text, marker)) return false;
    }
    return true;
}

bool is_clean(const Solution& s) { return is_clean_text(s.raw_text); }

void DatasetManifest::write(const std::string& path) const {
    json j{{"kind", kind},
           {"seed", seed},
           {"n_naive", n_naive},
           {"n_sc", n_sc},
           {"slots_attempted", slots_attempted},
           {"slots_emitted", slots_emitted},
           {"slots_skipped", slots_skipped},
           {"samples_drawn", samples_drawn},
           {"questions_with_correct", questions_with_correct},
           {"rejected_by_clean", rejected_by_clean},
           {"rejected_unsound_steps", rejected_unsound_steps},
           {"garbled_attempts", garbled_attempts},
           {"rejected_duplicates", rejected_duplicates},
           {"target_reached", target_reached}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("manifest: cannot open " + path);
    out << j.dump(2) << '\n';
}

DatasetManifest DatasetManifest::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("manifest: cannot open " + path);
    json j = json::parse(in);
    DatasetManifest m;
    m.kind = j.at("kind").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_naive = j.at("n_naive").get<std::size_t>();
    m.n_sc = j.at("n_sc").get<std::size_t>();
    m.slots_attempted = j.at("slots_attempted").get<std::size_t>();
    m.slots_emitted = j.at("slots_emitted").get<std::size_t>();
    m.slots_skipped = j.at("slots_skipped").get<std::size_t>();
    m.samples_drawn = j.at("samples_drawn").get<std::size_t>();
    m.questions_with_correct = j.value("questions_with_correct", std::size_t{0});
    m.rejected_by_clean = j.at("rejected_by_clean").get<std::size_t>();
    m.rejected_unsound_steps = j.at("rejected_unsound_steps").get<std::size_t>();
    m.garbled_attempts = j.at("garbled_attempts").get<std::size_t>();
    m.rejected_duplicates = j.at("rejected_duplicates").get<std::size_t>();
    m.target_reached = j.at("target_reached").get<bool>();
    return m;
}

std::pair<std::vector<NaivePair>, DatasetManifest> build_naive_pairs(const model::Parameters& params_sft,
                                                                     const std::vector<Problem>& problems,
                                                                     const sampler::SampleBudget& budget,
                                                                     const ForgeOptions& options) {
    if (problems.empty()) throw std::invalid_argument("build_naive_pairs: empty problem list");
    budget.validate();
    if (options.pairs_per_question <= 0) throw std::invalid_argument("build_naive_pairs: pairs_per_question must be positive");

    struct PerQuestion {
        std::vector<NaivePair> pairs;
        DatasetManifest stats;
    };
    std::vector<PerQuestion> results(problems.size());

    parallel_for(problems.size(), options.workers, [&](std::size_t qi) {
        const Problem& p = problems[qi];
        PerQuestion& r = results[qi];
        std::vector<Solution> preferred, dispreferred;
        const int need = options.pairs_per_question;
        for (int attempt = 0; attempt < budget.max_solutions_per_question; ++attempt) {
            ++r.stats.samples_drawn;
            Solution s = sampler::sample_solution(params_sft, p, 1.0,
                                                  RandomStream::mix(RandomStream::mix(options.seed, kNaiveTag),
                                                                    RandomStream::mix(p.id, static_cast<std::uint64_t>(attempt))),
                                                  budget);
            switch (taskgen::verify_solution(p, s)) {
                case Verdict::Correct:
                    r.stats.questions_with_correct = 1;
                    if (static_cast<int>(preferred.size()) < need && preferred_eligible(s, r.stats)) {
                        preferred.push_back(std::move(s));
                    }
                    break;
                case Verdict::Incorrect:
                    if (static_cast<int>(dispreferred.size()) < need) dispreferred.push_back(std::move(s));
                    break;
                case Verdict::Unparseable:
                    break;
            }
            if (static_cast<int>(preferred.size()) >= need && static_cast<int>(dispreferred.size()) >= need) break;
        }
        std::set<std::pair<std::string, std::string>> seen;
        std::size_t n = std::min(preferred.size(), dispreferred.size());
        for (std::size_t i = 0; i < n; ++i) {
            auto key = std::make_pair(preferred[i].raw_text, dispreferred[i].raw_text);
            if (!seen.insert(key).second) {
                ++r.stats.rejected_duplicates;
                continue;
            }
            r.pairs.push_back({p.id, p.question_text, preferred[i], dispreferred[i]});
        }
    });

    std::vector<NaivePair> pairs;
    DatasetManifest manifest;
    manifest.kind = "naive";
    manifest.seed = options.seed;
    for (std::size_t qi = 0; qi < results.size(); ++qi) {
        const PerQuestion& r = results[qi];
        manifest.samples_drawn += r.stats.samples_drawn;
        manifest.questions_with_correct += r.stats.questions_with_correct;
        manifest.rejected_by_clean += r.stats.rejected_by_clean;
        manifest.rejected_unsound_steps += r.stats.rejected_unsound_steps;
        manifest.rejected_duplicates += r.stats.rejected_duplicates;
        manifest.slots_attempted += static_cast<std::size_t>(options.pairs_per_question);
        manifest.slots_emitted += r.pairs.size();
        manifest.slots_skipped += static_cast<std::size_t>(options.pairs_per_question) - r.pairs.size();
        for (const NaivePair& pair : r.pairs) pairs.push_back(pair);
    }
    manifest.n_naive = pairs.size();
    return {std::move(pairs), std::move(manifest)};
}

std::pair<std::vector<SCPair>, DatasetManifest> build_sc_pairs(const model::Parameters& params_sft,
                                                               const std::vector<Problem>& problems,
                                                               const std::vector<NaivePair>& naive,
                                                               const sampler::TempSchedule& schedule,
                                                               const sampler::SampleBudget& budget,
                                                               const ForgeOptions& options,
                                                               std::vector<sampler::GenerationTrace>* all_traces) {
    if (naive.empty()) throw std::invalid_argument("build_sc_pairs: empty preferred pool");
    schedule.validate();
    budget.validate();
    if (options.sc_per_preferred <= 0) throw std::invalid_argument("build_sc_pairs: sc_per_preferred must be positive");

    struct Slot {
        const NaivePair* source;
        const Problem* problem;
        int k;
    };
    std::vector<Slot> slots;
    for (const NaivePair& pair : naive) {
        const Problem& p = problem_by_id(problems, pair.question_id);
        int m = pair.preferred.last_step_index();
        if (m < 1) continue;  // single-step solutions have no intermediate step
        // Uniform draw of distinct k values in [0, m-1].
        std::vector<int> ks(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) ks[static_cast<std::size_t>(i)] = i;
        RandomStream rng = RandomStream::keyed(options.seed, kScTag, pair.question_id, 0x6b706f6cULL);
        for (std::size_t i = ks.size(); i > 1; --i) {
            std::size_t j = rng.next_below(i);
            std::swap(ks[i - 1], ks[j]);
        }
        int take = std::min(options.sc_per_preferred, m);
        for (int i = 0; i < take; ++i) slots.push_back({&pair, &p, ks[static_cast<std::size_t>(i)]});
    }

    struct SlotResult {
        std::optional<SCPair> pair;
        std::vector<sampler::GenerationTrace> traces;
    };
    std::vector<SlotResult> results(slots.size());

    parallel_for(slots.size(), options.workers, [&](std::size_t si) {
        const Slot& slot = slots[si];
        SlotResult& r = results[si];
        auto got = sampler::sample_sc_continuation(
            params_sft, *slot.problem, slot.source->preferred, slot.k, schedule, budget,
            RandomStream::mix(RandomStream::mix(options.seed, kScTag),
                              RandomStream::mix(slot.problem->id, static_cast<std::uint64_t>(slot.k))),
            &r.traces);
        if (got) {
            SCPair pair;
            pair.question_id = slot.problem->id;
            pair.question_text = slot.problem->question_text;
            pair.preferred = slot.source->preferred;
            pair.dispreferred_sc = std::move(got->solution);
            pair.k = slot.k;
            pair.trace_temperatures = got->trace.step_temperatures;
            r.pair = std::move(pair);
        }
    });

    std::vector<SCPair> pairs;
    DatasetManifest manifest;
    manifest.kind = "sc";
    manifest.seed = options.seed;
    manifest.slots_attempted = slots.size();
    std::set<std::tuple<std::uint64_t, int, std::string, std::string>> seen;
    for (SlotResult& r : results) {
        for (const auto& t : r.traces) {
            manifest.samples_drawn += 1;
            if (t.termination == sampler::Termination::Garbled) ++manifest.garbled_attempts;
        }
        if (all_traces) {
            all_traces->insert(all_traces->end(), r.traces.begin(), r.traces.end());
        }
        if (!r.pair) {
            ++manifest.slots_skipped;
            continue;
        }
        auto key = std::make_tuple(r.pair->question_id, r.pair->k, r.pair->preferred.raw_text,
                                   r.pair->dispreferred_sc.raw_text);
        if (!seen.insert(key).second) {
            ++manifest.rejected_duplicates;
            ++manifest.slots_skipped;
            continue;
        }
        ++manifest.slots_emitted;
        pairs.push_back(std::move(*r.pair));
    }
    manifest.n_sc = pairs.size();
    return {std::move(pairs), std::move(manifest)};
}

std::pair<std::vector<NaivePair>, DatasetManifest> expand_naive_for_data_equal(
    const model::Parameters& params_sft, const std::vector<Problem>& problems,
    const std::vector<NaivePair>& existing, std::size_t target_count, const sampler::SampleBudget& budget,
    const ForgeOptions& options) {
    if (target_count < existing.size()) {
        throw std::invalid_argument("expand_naive_for_data_equal: target below current pair count");
    }
    budget.validate();

    std::vector<NaivePair> out = existing;
    DatasetManifest manifest;
    manifest.kind = "expand";
    manifest.seed = options.seed;
    manifest.slots_attempted = target_count;
    if (out.size() == target_count) {
        manifest.n_naive = out.size();
        manifest.slots_emitted = out.size();
        return {std::move(out), std::move(manifest)};
    }

    std::set<std::pair<std::string, std::string>> seen;
    for (const NaivePair& p : existing) seen.emplace(p.preferred.raw_text, p.dispreferred.raw_text);

    struct Pool {
        const Problem* problem;
        std::vector<Solution> preferred;
        std::vector<Solution> dispreferred;
        std::set<std::pair<std::size_t, std::size_t>> used;
    };
    std::vector<Pool> pools;
    pools.reserve(problems.size());
    for (const Problem& p : problems) pools.push_back({&p, {}, {}, {}});

    const int max_rounds = budget.max_solutions_per_question;
    for (int round = 0; round < max_rounds && out.size() < target_count; ++round) {
        // One fresh sample per question per round, drawn in parallel.
        std::vector<Solution> drawn(pools.size());
        parallel_for(pools.size(), options.workers, [&](std::size_t qi) {
            drawn[qi] = sampler::sample_solution(
                params_sft, *pools[qi].problem, 1.0,
                RandomStream::mix(RandomStream::mix(options.seed, kExpandTag),
                                  RandomStream::mix(pools[qi].problem->id, static_cast<std::uint64_t>(round))),
                budget);
        });
        for (std::size_t qi = 0; qi < pools.size() && out.size() < target_count; ++qi) {
            Pool& pool = pools[qi];
            Solution& s = drawn[qi];
            ++manifest.samples_drawn;
            switch (taskgen::verify_solution(*pool.problem, s)) {
                case Verdict::Correct:
                    if (preferred_eligible(s, manifest)) pool.preferred.push_back(std::move(s));
                    break;
                case Verdict::Incorrect:
                    pool.dispreferred.push_back(std::move(s));
                    break;
                case Verdict::Unparseable:
                    continue;
            }
            // Mint at most one new pair per question per round.
            for (std::size_t a = 0; a < pool.preferred.size() && out.size() < target_count; ++a) {
                bool minted = false;
                for (std::size_t b = 0; b < pool.dispreferred.size(); ++b) {
                    if (pool.used.count({a, b})) continue;
                    auto key = std::make_pair(pool.preferred[a].raw_text, pool.dispreferred[b].raw_text);
                    if (!seen.insert(key).second) {
                        pool.used.insert({a, b});
                        ++manifest.rejected_duplicates;
                        continue;
                    }
                    pool.used.insert({a, b});
                    out.push_back({pool.problem->id, pool.problem->question_text, pool.preferred[a],
                                   pool.dispreferred[b]});
                    minted = true;
                    break;
                }
                if (minted) break;
            }
        }
    }
    manifest.n_naive = out.size();
    manifest.slots_emitted = out.size();
    manifest.slots_skipped = target_count - out.size();
    manifest.target_reached = out.size() == target_count;
    return {std::move(out), std::move(manifest)};
}

void write_pairs(const std::string& path, const std::vector<NaivePair>& naive, const std::vector<SCPair>& sc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pairs: cannot open " + path);
    for (const NaivePair& p : naive) {
        json rec{{"kind", "naive"},
                 {"question_id", p.question_id},
                 {"question_text", p.question_text},
                 {"preferred", solution_to_json(p.preferred)},
                 {"dispreferred", solution_to_json(p.dispreferred)}};
        out << rec.dump() << '\n';
    }
    for (const SCPair& p : sc) {
        json rec{{"kind", "sc"},
                 {"question_id", p.question_id},
                 {"question_text", p.question_text},
                 {"preferred", solution_to_json(p.preferred)},
                 {"dispreferred", solution_to_json(p.dispreferred_sc)},
                 {"k", p.k},
                 {"trace_temperatures", p.trace_temperatures}};
        out << rec.dump() << '\n';
    }
}

PairFile read_pairs(const Vocab& vocab, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_pairs: cannot open " + path);
    PairFile file;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json rec = json::parse(line);
            std::string kind = rec.at("kind").get<std::string>();
            if (kind == "naive") {
                NaivePair p;
                p.question_id = rec.at("question_id").get<std::uint64_t>();
                p.question_text = rec.at("question_text").get<std::string>();
                p.preferred = solution_from_json(vocab, rec.at("preferred"));
                p.dispreferred = solution_from_json(vocab, rec.at("dispreferred"));
                if (p.preferred.raw_text == p.dispreferred.raw_text) {
                    throw std::runtime_error("degenerate pair: preferred equals dispreferred");
                }
                file.naive.push_back(std::move(p));
            } else if (kind == "sc") {
                SCPair p;
                p.question_id = rec.at("question_id").get<std::uint64_t>();
                p.question_text = rec.at("question_text").get<std::string>();
                p.preferred = solution_from_json(vocab, rec.at("preferred"));
                p.dispreferred_sc = solution_from_json(vocab, rec.at("dispreferred"));
                p.k = rec.at("k").get<int>();
                p.trace_temperatures = rec.at("trace_temperatures").get<std::vector<double>>();
                if (p.preferred.raw_text == p.dispreferred_sc.raw_text) {
                    throw std::runtime_error("degenerate pair: preferred equals dispreferred");
                }
                file.sc.push_back(std::move(p));
            } else {
                throw std::runtime_error("unknown record kind '" + kind + "'");
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("read_pairs: " + path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return file;
}

LintReport lint_pairs(const std::vector<Problem>& problems, const std::vector<NaivePair>& naive,
                      const std::vector<SCPair>& sc) {
    LintReport report;
    auto fail = [&](const std::string& what, std::uint64_t qid, std::size_t idx) {
        report.violations.push_back(what + " (question " + std::to_string(qid) + ", record " + std::to_string(idx) + ")");
    };

    for (std::size_t i = 0; i < naive.size(); ++i) {
        const NaivePair& p = naive[i];
        ++report.pairs_checked;
        const Problem& q = problem_by_id(problems, p.question_id);
        if (taskgen::verify_solution(q, p.preferred) != Verdict::Correct) fail("naive preferred not Correct", p.question_id, i);
        if (taskgen::verify_solution(q, p.dispreferred) != Verdict::Incorrect) fail("naive dispreferred not Incorrect", p.question_id, i);
        if (!is_clean(p.preferred)) fail("naive preferred not clean", p.question_id, i);
        if (!taskgen::steps_arithmetically_sound(p.preferred)) fail("naive preferred has an untrue step", p.question_id, i);
    }
    for (std::size_t i = 0; i < sc.size(); ++i) {
        const SCPair& p = sc[i];
        ++report.pairs_checked;
        const Problem& q = problem_by_id(problems, p.question_id);
        int m = p.preferred.last_step_index();
        if (taskgen::verify_solution(q, p.preferred) != Verdict::Correct) fail("sc preferred not Correct", p.question_id, i);
        if (taskgen::verify_solution(q, p.dispreferred_sc) != Verdict::Incorrect) fail("sc dispreferred not Incorrect", p.question_id, i);
        if (!is_clean(p.preferred)) fail("sc preferred not clean", p.question_id, i);
        if (!taskgen::steps_arithmetically_sound(p.preferred)) fail("sc preferred has an untrue step", p.question_id, i);
        if (p.k < 0 || p.k > m - 1) fail("sc k outside [0, m-1]", p.question_id, i);
        if (p.dispreferred_sc.last_step_index() < p.k + 1) {
            fail("sc dispreferred has no steps after k", p.question_id, i);
            continue;
        }
        for (int j = 0; j <= p.k; ++j) {
            const auto& a = p.preferred.steps[static_cast<std::size_t>(j)];
            const auto& b = p.dispreferred_sc.steps[static_cast<std::size_t>(j)];
            if (a.begin_token != b.begin_token || a.end_token != b.end_token || a.text != b.text) {
                fail("sc shared prefix differs at step " + std::to_string(j), p.question_id, i);
                break;
            }
        }
    }
    return report;
}

}  // namespace scdpo::forge
