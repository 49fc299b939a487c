#include "scdpo/taskgen.hpp"

#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "scdpo/rng.hpp"

namespace scdpo::taskgen {

using nlohmann::json;

const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::Correct: return "correct";
        case Verdict::Incorrect: return "incorrect";
        case Verdict::Unparseable: return "unparseable";
    }
    return "?";
}

const char* to_string(OpKind k) {
    switch (k) {
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
    }
    return "?";
}

std::optional<OpKind> op_from_string(const std::string& s) {
    if (s == "add") return OpKind::Add;
    if (s == "sub") return OpKind::Sub;
    if (s == "mul") return OpKind::Mul;
    return std::nullopt;
}

namespace {

std::int64_t apply_op(std::int64_t acc, const ChainOp& op) {
    std::int64_t out = 0;
    bool overflow = false;
    switch (op.op) {
        case OpKind::Add: overflow = __builtin_add_overflow(acc, op.operand, &out); break;
        case OpKind::Sub: overflow = __builtin_sub_overflow(acc, op.operand, &out); break;
        case OpKind::Mul: overflow = __builtin_mul_overflow(acc, op.operand, &out); break;
    }
    if (overflow) throw OverflowError("chain evaluation overflows int64");
    return out;
}

char op_symbol(OpKind k) {
    switch (k) {
        case OpKind::Add: return '+';
        case OpKind::Sub: return '-';
        case OpKind::Mul: return '*';
    }
    return '?';
}

const std::string kAnswerMarker = "The answer is ";

}  // namespace

std::int64_t eval_chain(const OpChain& chain) {
    std::int64_t acc = chain.start;
    for (const ChainOp& op : chain.ops) acc = apply_op(acc, op);
    return acc;
}

Problem generate_problem(std::uint64_t seed, int lo, int hi, std::int64_t value_cap) {
    if (lo < 2 || hi > 8 || lo > hi) throw std::invalid_argument("generate_problem: need 2 <= lo <= hi <= 8");
    RandomStream rng = RandomStream::keyed(seed, 0x70726f62ULL);  // domain tag
    for (int attempt = 0; attempt < 100000; ++attempt) {
        OpChain chain;
        chain.start = rng.next_range(kStartMin, kStartMax);
        int len = static_cast<int>(rng.next_range(lo, hi));
        chain.ops.reserve(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) {
            auto kind = static_cast<OpKind>(rng.next_range(0, 2));
            chain.ops.push_back({kind, rng.next_range(kOperandMin, kOperandMax)});
        }
        std::int64_t acc = chain.start;
        bool ok = true;
        for (const ChainOp& op : chain.ops) {
            acc = apply_op(acc, op);  // cap below makes int64 overflow unreachable
            if (acc > value_cap || acc < -value_cap) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        Problem p;
        p.id = seed;
        p.chain = std::move(chain);
        p.gold_answer = acc;
        std::string q = "Start with " + std::to_string(p.chain.start) + ".";
        for (const ChainOp& op : p.chain.ops) {
            switch (op.op) {
                case OpKind::Add: q += " Add " + std::to_string(op.operand) + "."; break;
                case OpKind::Sub: q += " Subtract " + std::to_string(op.operand) + "."; break;
                case OpKind::Mul: q += " Multiply by " + std::to_string(op.operand) + "."; break;
            }
        }
        p.question_text = std::move(q);
        return p;
    }
    throw std::runtime_error("generate_problem: rejection sampling failed to find a chain");
}

Solution render_gold_solution(const Problem& p, const Vocab& vocab) {
    std::string text;
    std::int64_t acc = p.chain.start;
    int display = 1;
    for (const ChainOp& op : p.chain.ops) {
        std::int64_t next = apply_op(acc, op);
        text += "Step " + std::to_string(display) + ": " + std::to_string(acc) + " " + op_symbol(op.op) +
                " " + std::to_string(op.operand) + " = " + std::to_string(next) + ".\n";
        acc = next;
        ++display;
    }
    text += kAnswerMarker + std::to_string(acc) + ".";
    return parse_solution(vocab, text);
}

std::vector<StepSpan> segment_tokens(const Vocab& vocab, const TokenSeq& ids) {
    std::vector<StepSpan> spans;
    if (ids.empty()) return spans;

    const TokenId step_kw = vocab.find("Step");
    const TokenId the_kw = vocab.find("The");
    const TokenId sp = vocab.find(" ");
    const TokenId answer_kw = vocab.find("answer");
    const TokenId is_kw = vocab.find("is");

    auto answer_marker_at = [&](std::size_t i) {
        return i + 4 < ids.size() && ids[i] == the_kw && ids[i + 1] == sp && ids[i + 2] == answer_kw &&
               ids[i + 3] == sp && ids[i + 4] == is_kw;
    };
    auto opens_step = [&](std::size_t i) { return ids[i] == step_kw || answer_marker_at(i); };

    std::vector<std::size_t> starts{0};
    for (std::size_t i = 1; i < ids.size(); ++i) {
        if (ids[i - 1] == vocab.newline_id() && opens_step(i)) starts.push_back(i);
    }
    for (std::size_t s = 0; s < starts.size(); ++s) {
        StepSpan span;
        span.index = static_cast<int>(s);
        span.begin_token = starts[s];
        span.end_token = s + 1 < starts.size() ? starts[s + 1] : ids.size();
        span.text = vocab.decode(TokenSeq(ids.begin() + static_cast<std::ptrdiff_t>(span.begin_token),
                                           ids.begin() + static_cast<std::ptrdiff_t>(span.end_token)));
        spans.push_back(std::move(span));
    }
    return spans;
}

std::vector<StepSpan> segment_steps(const Vocab& vocab, const std::string& text) {
    return segment_tokens(vocab, vocab.encode(text));
}

std::optional<std::int64_t> extract_final_answer(const std::string& text) {
    std::size_t pos = text.rfind(kAnswerMarker);
    if (pos == std::string::npos) return std::nullopt;
    std::size_t i = pos + kAnswerMarker.size();
    std::size_t begin = i;
    if (i < text.size() && text[i] == '-') ++i;
    std::size_t digits_begin = i;
    while (i < text.size() && text[i] >= '0' && text[i] <= '9') ++i;
    if (i == digits_begin || i - digits_begin > 18) return std::nullopt;
    if (i >= text.size() || text[i] != '.') return std::nullopt;
    return std::strtoll(text.substr(begin, i - begin).c_str(), nullptr, 10);
}

Solution parse_solution_tokens(const Vocab& vocab, const TokenSeq& ids) {
    Solution s;
    s.tokens = ids;
    s.raw_text = vocab.decode(ids);
    s.steps = segment_tokens(vocab, ids);
    s.final_answer = extract_final_answer(s.raw_text);
    if (s.final_answer &&
        (s.steps.empty() || s.steps.back().text.find(kAnswerMarker) == std::string::npos)) {
        s.final_answer = std::nullopt;
    }
    return s;
}

Solution parse_solution(const Vocab& vocab, const std::string& text) {
    Solution s = parse_solution_tokens(vocab, vocab.encode(text));
    s.raw_text = text;  // preserve original bytes even outside the task alphabet
    return s;
}

TokenSeq Solution::prefix_tokens(int k) const {
    if (k < 0 || k >= static_cast<int>(steps.size())) throw std::out_of_range("prefix_tokens: bad step index");
    return TokenSeq(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(steps[static_cast<std::size_t>(k)].end_token));
}

TokenSeq Solution::suffix_tokens(int k) const {
    if (k < 0 || k >= static_cast<int>(steps.size())) throw std::out_of_range("suffix_tokens: bad step index");
    return TokenSeq(tokens.begin() + static_cast<std::ptrdiff_t>(steps[static_cast<std::size_t>(k)].end_token), tokens.end());
}

Verdict verify_solution(const Problem& p, const Solution& s) {
    if (!s.final_answer) return Verdict::Unparseable;
    return *s.final_answer == p.gold_answer ? Verdict::Correct : Verdict::Incorrect;
}

namespace {

// Parses a signed integer; advances i past it. Returns nullopt on malformed input.
std::optional<std::int64_t> parse_int_at(const std::string& t, std::size_t& i) {
    std::size_t begin = i;
    if (i < t.size() && t[i] == '-') ++i;
    std::size_t digits = i;
    while (i < t.size() && t[i] >= '0' && t[i] <= '9') ++i;
    if (i == digits || i - digits > 18) return std::nullopt;
    return std::strtoll(t.substr(begin, i - begin).c_str(), nullptr, 10);
}

bool consume(const std::string& t, std::size_t& i, const char* lit) {
    std::size_t n = std::char_traits<char>::length(lit);
    if (t.compare(i, n, lit) != 0) return false;
    i += n;
    return true;
}

}  // namespace

std::optional<StepEquation> parse_step_equation(const std::string& line) {
    std::size_t i = 0;
    StepEquation eq;
    if (!consume(line, i, "Step ")) return std::nullopt;
    auto idx = parse_int_at(line, i);
    if (!idx || *idx < 1 || *idx > 1000000) return std::nullopt;
    eq.display_index = static_cast<int>(*idx);
    if (!consume(line, i, ": ")) return std::nullopt;
    auto lhs = parse_int_at(line, i);
    if (!lhs) return std::nullopt;
    eq.lhs = *lhs;
    if (!consume(line, i, " ")) return std::nullopt;
    if (i >= line.size()) return std::nullopt;
    switch (line[i]) {
        case '+': eq.op = OpKind::Add; break;
        case '-': eq.op = OpKind::Sub; break;
        case '*': eq.op = OpKind::Mul; break;
        default: return std::nullopt;
    }
    ++i;
    if (!consume(line, i, " ")) return std::nullopt;
    auto rhs = parse_int_at(line, i);
    if (!rhs) return std::nullopt;
    eq.rhs = *rhs;
    if (!consume(line, i, " = ")) return std::nullopt;
    auto res = parse_int_at(line, i);
    if (!res) return std::nullopt;
    eq.result = *res;
    if (!consume(line, i, ".")) return std::nullopt;
    if (i < line.size() && line[i] == '\n') ++i;
    return i == line.size() ? std::optional<StepEquation>(eq) : std::nullopt;
}

bool steps_arithmetically_sound(const Solution& s) {
    if (s.steps.empty()) return false;
    for (std::size_t j = 0; j < s.steps.size(); ++j) {
        const std::string& text = s.steps[j].text;
        bool is_last = j + 1 == s.steps.size();
        if (is_last) {
            if (text.find(kAnswerMarker) != 0) return false;
            continue;
        }
        auto eq = parse_step_equation(text);
        if (!eq) return false;
        std::int64_t expect = 0;
        try {
            expect = apply_op(eq->lhs, {eq->op, eq->rhs});
        } catch (const OverflowError&) {
            return false;
        }
        if (expect != eq->result) return false;
    }
    return true;
}

TokenSeq question_prompt(const Vocab& vocab, const std::string& question_text) {
    return vocab.encode(question_text + "\n");
}

TokenSeq completion_tokens(const Vocab& vocab, const Solution& s) {
    TokenSeq out = s.tokens;
    out.push_back(vocab.eos_id());
    return out;
}

void write_problems(const std::string& path, const std::vector<Problem>& problems) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_problems: cannot open " + path);
    for (const Problem& p : problems) {
        json ops = json::array();
        for (const ChainOp& op : p.chain.ops) ops.push_back({to_string(op.op), op.operand});
        json rec{{"id", p.id},
                 {"start", p.chain.start},
                 {"ops", ops},
                 {"question_text", p.question_text},
                 {"gold_answer", p.gold_answer}};
        out << rec.dump() << '\n';
    }
}

std::vector<Problem> read_problems(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_problems: cannot open " + path);
    std::vector<Problem> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("read_problems: " + path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        Problem p;
        p.id = rec.at("id").get<std::uint64_t>();
        p.chain.start = rec.at("start").get<std::int64_t>();
        for (const auto& op : rec.at("ops")) {
            auto kind = op_from_string(op.at(0).get<std::string>());
            if (!kind) throw std::runtime_error("read_problems: unknown operator at line " + std::to_string(line_no));
            p.chain.ops.push_back({*kind, op.at(1).get<std::int64_t>()});
        }
        p.question_text = rec.at("question_text").get<std::string>();
        p.gold_answer = rec.at("gold_answer").get<std::int64_t>();
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace scdpo::taskgen
