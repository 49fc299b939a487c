#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "scdpo/rng.hpp"
#include "scdpo/taskgen.hpp"
#include "scdpo/vocab.hpp"

using namespace scdpo;
using namespace scdpo::taskgen;

namespace {

// Independent chain evaluator over 128-bit integers; written before the main
// build and kept separate from eval_chain on purpose.
__int128 eval_chain_wide(const OpChain& chain) {
    __int128 acc = chain.start;
    for (const ChainOp& op : chain.ops) {
        switch (op.op) {
            case OpKind::Add: acc += op.operand; break;
            case OpKind::Sub: acc -= op.operand; break;
            case OpKind::Mul: acc *= op.operand; break;
        }
    }
    return acc;
}

Problem sample_problem(std::uint64_t seed = 7, int lo = 3, int hi = 3) { return generate_problem(seed, lo, hi); }

}  // namespace

TEST_CASE("eval_chain basic arithmetic") {
    CHECK(eval_chain({7, {{OpKind::Add, 0}}}) == 7);
    CHECK(eval_chain({5, {{OpKind::Add, 3}, {OpKind::Mul, 2}}}) == 16);
    CHECK(eval_chain({10, {{OpKind::Sub, 13}}}) == -3);
}

TEST_CASE("eval_chain overflow raises") {
    OpChain chain{std::int64_t{1} << 62, {{OpKind::Mul, 4}}};
    CHECK_THROWS_AS(eval_chain(chain), OverflowError);
}

TEST_CASE("eval_chain agrees with the wide-integer evaluator on 1000 random chains") {
    RandomStream rng(99);
    for (int i = 0; i < 1000; ++i) {
        OpChain chain;
        chain.start = rng.next_range(1, 50);
        int len = static_cast<int>(rng.next_range(2, 8));
        for (int j = 0; j < len; ++j) {
            chain.ops.push_back({static_cast<OpKind>(rng.next_range(0, 2)), rng.next_range(1, 20)});
        }
        __int128 wide = eval_chain_wide(chain);
        CHECK(static_cast<__int128>(eval_chain(chain)) == wide);
    }
}

TEST_CASE("generate_problem is deterministic in seed") {
    Problem a = generate_problem(0, 3, 3);
    Problem b = generate_problem(0, 3, 3);
    CHECK(a == b);
}

TEST_CASE("generate_problem varies across seeds") {
    int distinct = 0;
    Problem base = generate_problem(0, 3, 3);
    for (std::uint64_t s = 1; s <= 100; ++s) {
        if (!(generate_problem(s, 3, 3) == base)) ++distinct;
    }
    CHECK(distinct >= 99);
}

TEST_CASE("generate_problem output satisfies invariants") {
    for (std::uint64_t s = 0; s < 200; ++s) {
        Problem p = generate_problem(s, 2, 8);
        CHECK(p.gold_answer == eval_chain(p.chain));
        CHECK(p.chain.ops.size() >= 2);
        CHECK(p.chain.ops.size() <= 8);
        std::int64_t acc = p.chain.start;
        for (const ChainOp& op : p.chain.ops) {
            acc = eval_chain({acc, {op}});
            CHECK(std::abs(acc) <= kDefaultValueCap);
        }
    }
}

TEST_CASE("generate_problem rejects bad ranges") {
    CHECK_THROWS_AS(generate_problem(0, 1, 3), std::invalid_argument);
    CHECK_THROWS_AS(generate_problem(0, 3, 9), std::invalid_argument);
    CHECK_THROWS_AS(generate_problem(0, 5, 4), std::invalid_argument);
}

TEST_CASE("render_gold_solution step structure and verdict") {
    Vocab vocab = Vocab::task_vocab();
    Problem p;
    p.id = 1;
    p.chain = {5, {{OpKind::Add, 3}, {OpKind::Mul, 2}}};
    p.gold_answer = 16;
    p.question_text = "Start with 5. Add 3. Multiply by 2.";
    Solution s = render_gold_solution(p, vocab);

    REQUIRE(s.steps.size() == 3);
    CHECK(s.steps[0].text == "Step 1: 5 + 3 = 8.\n");
    CHECK(s.steps[1].text == "Step 2: 8 * 2 = 16.\n");
    CHECK(s.steps[2].text == "The answer is 16.");
    CHECK(s.final_answer == 16);
    CHECK(verify_solution(p, s) == Verdict::Correct);
    CHECK(steps_arithmetically_sound(s));
}

TEST_CASE("gold solutions round-trip through segmentation") {
    Vocab vocab = Vocab::task_vocab();
    for (std::uint64_t s = 0; s < 100; ++s) {
        Problem p = generate_problem(s, 2, 8);
        Solution gold = render_gold_solution(p, vocab);
        CHECK(extract_final_answer(gold.raw_text) == p.gold_answer);
        auto spans = segment_steps(vocab, gold.raw_text);
        REQUIRE(spans.size() == gold.steps.size());
        for (std::size_t i = 0; i < spans.size(); ++i) CHECK(spans[i] == gold.steps[i]);
        CHECK(vocab.round_trips(p.question_text));
    }
}

TEST_CASE("segment_steps covers text contiguously") {
    Vocab vocab = Vocab::task_vocab();
    SUBCASE("empty text gives empty list") { CHECK(segment_steps(vocab, "").empty()); }
    SUBCASE("no markers give a single span") {
        auto spans = segment_steps(vocab, "12 + 3\n45");
        REQUIRE(spans.size() == 1);
        CHECK(spans[0].text == "12 + 3\n45");
    }
    SUBCASE("spans concatenate to the original text") {
        RandomStream rng(5);
        for (int trial = 0; trial < 200; ++trial) {
            // random in-vocabulary text, including marker-shaped fragments
            std::string text;
            const char* fragments[] = {"Step ", "The answer is ", "12",  "+",  " ",
                                       "\n",    ":",              "= 4", ".",  "Multiply by 3"};
            int parts = 1 + static_cast<int>(rng.next_below(12));
            for (int i = 0; i < parts; ++i) text += fragments[rng.next_below(10)];
            auto spans = segment_steps(vocab, text);
            std::string joined;
            std::size_t expected_begin = 0;
            for (const auto& sp : spans) {
                CHECK(sp.begin_token == expected_begin);
                expected_begin = sp.end_token;
                joined += sp.text;
            }
            CHECK(joined == text);
        }
    }
}

TEST_CASE("extract_final_answer parses the canonical marker") {
    CHECK(extract_final_answer("Step 1: 5 + 3 = 8.\nThe answer is 16.") == 16);
    CHECK(extract_final_answer("The answer is -3.") == -3);
    CHECK_FALSE(extract_final_answer("Step 1: 5 + 3 = 8.").has_value());
    CHECK_FALSE(extract_final_answer("The answer is .").has_value());
    CHECK_FALSE(extract_final_answer("The answer is 16").has_value());  // missing period
    CHECK(extract_final_answer("The answer is 1.\nThe answer is 2.") == 2);
}

TEST_CASE("verify_solution verdicts") {
    Vocab vocab = Vocab::task_vocab();
    Problem p = sample_problem();
    Solution gold = render_gold_solution(p, vocab);
    CHECK(verify_solution(p, gold) == Verdict::Correct);

    std::string wrong = gold.raw_text;
    wrong.replace(wrong.rfind("The answer is "), std::string::npos, "The answer is 0.");
    REQUIRE(p.gold_answer != 0);
    CHECK(verify_solution(p, parse_solution(vocab, wrong)) == Verdict::Incorrect);

    std::string headless = gold.raw_text.substr(0, gold.raw_text.rfind("The answer is "));
    CHECK(verify_solution(p, parse_solution(vocab, headless)) == Verdict::Unparseable);
}

TEST_CASE("solutions that keep going after the answer line are unparseable") {
    Vocab vocab = Vocab::task_vocab();
    Solution s = parse_solution(vocab, "The answer is 4.\nStep 9: 1 + 1 = 2.");
    CHECK_FALSE(s.final_answer.has_value());
}

TEST_CASE("parse_step_equation accepts the grammar and rejects near misses") {
    auto eq = parse_step_equation("Step 3: -4 - -2 = -2.\n");
    REQUIRE(eq.has_value());
    CHECK(eq->display_index == 3);
    CHECK(eq->lhs == -4);
    CHECK(eq->op == OpKind::Sub);
    CHECK(eq->rhs == -2);
    CHECK(eq->result == -2);

    CHECK_FALSE(parse_step_equation("Step 3: 4 ? 2 = 2.").has_value());
    CHECK_FALSE(parse_step_equation("Step 3: 4 + 2 = .").has_value());
    CHECK_FALSE(parse_step_equation("Step : 4 + 2 = 6.").has_value());
    CHECK_FALSE(parse_step_equation("Step 3: 4 + 2 = 6. extra").has_value());
}

TEST_CASE("steps_arithmetically_sound flags untrue equations") {
    Vocab vocab = Vocab::task_vocab();
    CHECK(steps_arithmetically_sound(parse_solution(vocab, "Step 1: 2 + 2 = 4.\nThe answer is 4.")));
    CHECK_FALSE(steps_arithmetically_sound(parse_solution(vocab, "Step 1: 2 + 2 = 5.\nThe answer is 5.")));
    CHECK_FALSE(steps_arithmetically_sound(parse_solution(vocab, "just words")));
}

TEST_CASE("problem JSONL round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "scdpo-taskgen-test";
    fs::create_directories(dir);
    std::string path = (dir / "problems.jsonl").string();

    std::vector<Problem> problems;
    for (std::uint64_t s = 0; s < 25; ++s) problems.push_back(generate_problem(s, 2, 6));
    write_problems(path, problems);
    auto loaded = read_problems(path);
    REQUIRE(loaded.size() == problems.size());
    for (std::size_t i = 0; i < problems.size(); ++i) CHECK(loaded[i] == problems[i]);

    // malformed line reports its number
    {
        std::ofstream out(path, std::ios::app | std::ios::binary);
        out << "{broken\n";
    }
    CHECK_THROWS_WITH_AS(read_problems(path), doctest::Contains(":26:"), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("prefix and suffix tokens partition a solution") {
    Vocab vocab = Vocab::task_vocab();
    Problem p = generate_problem(11, 4, 4);
    Solution gold = render_gold_solution(p, vocab);
    for (int k = 0; k < gold.last_step_index(); ++k) {
        TokenSeq pre = gold.prefix_tokens(k);
        TokenSeq suf = gold.suffix_tokens(k);
        TokenSeq joined = pre;
        joined.insert(joined.end(), suf.begin(), suf.end());
        CHECK(joined == gold.tokens);
    }
}
