#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "scdpo/forge.hpp"
#include "scdpo/graph.hpp"
#include "scdpo/trainer.hpp"

using namespace scdpo;
using namespace scdpo::train;

namespace {

constexpr double kLn2 = 0.6931471805599453;

forge::NaivePair synthetic_naive(const taskgen::Problem& p, const Vocab& vocab) {
    forge::NaivePair pair;
    pair.question_id = p.id;
    pair.question_text = p.question_text;
    pair.preferred = taskgen::render_gold_solution(p, vocab);
    std::string wrong = pair.preferred.raw_text;
    auto pos = wrong.rfind("The answer is ");
    wrong.replace(pos, std::string::npos, "The answer is " + std::to_string(p.gold_answer + 3) + ".");
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
    REQUIRE(eq.has_value());
    std::int64_t acc = eq->result;
    text += "Step " + std::to_string(k + 2) + ": " + std::to_string(acc) + " - 2 = " + std::to_string(acc - 2) +
            ".\nThe answer is " + std::to_string(acc - 2) + ".";
    pair.dispreferred_sc = taskgen::parse_solution(vocab, text);
    pair.k = k;
    return pair;
}

model::Parameters tiny_params(std::uint64_t seed) {
    Vocab v = Vocab::task_vocab();
    model::ModelConfig c;
    c.vocab_size = v.size();
    c.context_length = 192;
    c.embed_dim = 16;
    c.layer_count = 1;
    c.head_count = 2;
    c.feedforward_dim = 32;
    return model::init_parameters(c, v, seed);
}

}  // namespace

TEST_CASE("initialization identity: policy equals reference") {
    model::Parameters policy = tiny_params(5);
    model::Parameters reference = policy;
    reference.role = model::Role::Reference;
    Vocab vocab = policy.vocab;

    for (std::uint64_t s = 0; s < 20; ++s) {
        taskgen::Problem p = taskgen::generate_problem(s, 2, 4);
        forge::NaivePair np = synthetic_naive(p, vocab);
        forge::SCPair sp = synthetic_sc(p, vocab, static_cast<int>(s) % 2);

        CHECK(std::fabs(loss_naive(policy, reference, np, 0.1) - kLn2) < 1e-9);
        CHECK(std::fabs(loss_sc(policy, reference, sp, 0.1) - kLn2) < 1e-9);
        CHECK(pair_margin(policy, reference, BatchItem::of(np), 0.1) == 0.0);
        CHECK(pair_margin(policy, reference, BatchItem::of(sp), 0.1) == 0.0);
    }
}

TEST_CASE("pair_logratio matches its defining formula and brute force") {
    model::Parameters policy = tiny_params(6);
    model::Parameters reference = tiny_params(7);
    reference.role = model::Role::Reference;
    const Vocab& vocab = policy.vocab;

    TokenSeq ctx = vocab.encode("Start with 4. Add 2.\n");
    TokenSeq comp = vocab.encode("Step 1: 4 + 2 = 6.\nThe answer is 6.");
    comp.push_back(vocab.eos_id());

    double lr = pair_logratio(policy, reference, ctx, comp, 0.1);
    CHECK(lr == 0.1 * (model::sequence_logprob(policy, ctx, comp) - model::sequence_logprob(reference, ctx, comp)));

    // brute force: per-position logits + test-side softmax, summed in test code
    auto brute_seq_logprob = [&](const model::Parameters& params) {
        TokenSeq full = ctx;
        full.insert(full.end(), comp.begin(), comp.end());
        double sum = 0.0;
        for (std::size_t pos = ctx.size(); pos < full.size(); ++pos) {
            TokenSeq prefix(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(pos));
            auto logits = model::logits_next(params, prefix);
            double mx = logits[0];
            for (double g : logits) mx = std::max(mx, g);
            double denom = 0.0;
            for (double g : logits) denom += std::exp(g - mx);
            sum += logits[static_cast<std::size_t>(full[pos])] - mx - std::log(denom);
        }
        return sum;
    };
    double brute = 0.1 * (brute_seq_logprob(policy) - brute_seq_logprob(reference));
    CHECK(lr == doctest::Approx(brute).epsilon(1e-12));

    // policy == reference gives exactly zero
    model::Parameters same = policy;
    same.role = model::Role::Reference;
    CHECK(pair_logratio(policy, same, ctx, comp, 0.1) == 0.0);
}

TEST_CASE("sft_loss on the uniform model is log V per token") {
    model::Parameters p = tiny_params(8);
    for (float& w : p.tensor("head").values) w = 0.0f;
    taskgen::Problem prob = taskgen::generate_problem(12, 2, 2);
    SftExample ex{prob.id, prob.question_text, taskgen::render_gold_solution(prob, p.vocab)};
    CHECK(sft_loss(p, ex) == doctest::Approx(std::log(p.config.vocab_size)).epsilon(1e-12));
}

TEST_CASE("loss_naive is -log sigmoid of the margin; the margin is beta-linear") {
    model::Parameters policy = tiny_params(9);
    model::Parameters reference = tiny_params(10);
    reference.role = model::Role::Reference;
    taskgen::Problem p = taskgen::generate_problem(3, 2, 3);
    forge::NaivePair pair = synthetic_naive(p, policy.vocab);

    double margin = pair_margin(policy, reference, BatchItem::of(pair), 0.1);
    double loss = loss_naive(policy, reference, pair, 0.1);
    double expect = margin < 0 ? -margin + std::log1p(std::exp(margin)) : std::log1p(std::exp(-margin));
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

    double m2 = pair_margin(policy, reference, BatchItem::of(pair), 0.2);
    CHECK(m2 == doctest::Approx(2.0 * margin).epsilon(1e-9));
}

TEST_CASE("loss_sc equals loss_sc_stepwise within 1e-9") {
    for (std::uint64_t seed : {31ULL, 32ULL, 33ULL}) {
        model::Parameters policy = tiny_params(seed);
        model::Parameters reference = tiny_params(seed + 100);
        reference.role = model::Role::Reference;
        Vocab vocab = policy.vocab;
        for (std::uint64_t s = 0; s < 30; ++s) {
            taskgen::Problem p = taskgen::generate_problem(s, 2, 4);
            int m = static_cast<int>(p.chain.ops.size());  // gold solution has steps 0..m
            forge::SCPair pair = synthetic_sc(p, vocab, static_cast<int>(s) % m);
            double direct = loss_sc(policy, reference, pair, 0.1);
            double stepwise = loss_sc_stepwise(policy, reference, pair, 0.1);
            CHECK(std::fabs(direct - stepwise) < 1e-9);
        }
    }
}

TEST_CASE("single-suffix-step pair reduces to the one-step form") {
    model::Parameters policy = tiny_params(34);
    model::Parameters reference = tiny_params(35);
    reference.role = model::Role::Reference;
    taskgen::Problem p = taskgen::generate_problem(40, 2, 2);
    forge::SCPair pair = synthetic_sc(p, policy.vocab, 1);  // suffix = answer step only

    auto rewards_pre =
        step_rewards(policy, reference, taskgen::question_prompt(policy.vocab, p), pair.preferred, pair.k, 0.1);
    REQUIRE(rewards_pre.size() == 1);
    double direct = loss_sc(policy, reference, pair, 0.1);
    double stepwise = loss_sc_stepwise(policy, reference, pair, 0.1);
    CHECK(std::fabs(direct - stepwise) < 1e-9);
}

TEST_CASE("per-step rewards sum to the suffix pair_logratio") {
    model::Parameters policy = tiny_params(36);
    model::Parameters reference = tiny_params(37);
    reference.role = model::Role::Reference;
    const Vocab& vocab = policy.vocab;
    taskgen::Problem p = taskgen::generate_problem(50, 3, 3);
    taskgen::Solution gold = taskgen::render_gold_solution(p, vocab);
    int k = 0;

    TokenSeq prompt = taskgen::question_prompt(vocab, p);
    auto rewards = step_rewards(policy, reference, prompt, gold, k, 0.1);
    double sum = 0.0;
    for (double r : rewards) sum += r;

    TokenSeq ctx = prompt;
    TokenSeq prefix = gold.prefix_tokens(k);
    ctx.insert(ctx.end(), prefix.begin(), prefix.end());
    TokenSeq suffix = gold.suffix_tokens(k);
    suffix.push_back(vocab.eos_id());
    CHECK(std::fabs(sum - pair_logratio(policy, reference, ctx, suffix, 0.1)) < 1e-9);
}

TEST_CASE("loss_scdpo breakdown") {
    model::Parameters policy = tiny_params(41);
    model::Parameters reference = policy;
    reference.role = model::Role::Reference;
    Vocab vocab = policy.vocab;

    std::vector<forge::NaivePair> naive;
    std::vector<forge::SCPair> sc;
    for (std::uint64_t s = 0; s < 4; ++s) {
        taskgen::Problem p = taskgen::generate_problem(s, 2, 3);
        naive.push_back(synthetic_naive(p, vocab));
        sc.push_back(synthetic_sc(p, vocab, 0));
    }

    SUBCASE("all-naive batch") {
        std::vector<BatchItem> batch;
        for (const auto& p : naive) batch.push_back(BatchItem::of(p));
        LossBreakdown b = loss_scdpo(policy, reference, batch, 0.1);
        CHECK(b.l_sc == 0.0);
        CHECK(b.total == b.l_naive);
        CHECK(b.naive_count == 4);
        CHECK(std::fabs(b.total - kLn2) < 1e-9);  // policy == reference
    }
    SUBCASE("mixed batch at initialization gives 2 ln 2") {
        std::vector<BatchItem> batch;
        for (const auto& p : naive) batch.push_back(BatchItem::of(p));
        for (const auto& p : sc) batch.push_back(BatchItem::of(p));
        LossBreakdown b = loss_scdpo(policy, reference, batch, 0.1);
        CHECK(std::fabs(b.l_naive - kLn2) < 1e-9);
        CHECK(std::fabs(b.l_sc - kLn2) < 1e-9);
        CHECK(std::fabs(b.total - 2 * kLn2) < 1e-9);
        CHECK(std::fabs(b.total - (b.l_naive + b.l_sc)) < 1e-12);
        CHECK(b.margin == 0.0);
    }
    SUBCASE("mixed batch equals hand-combined per-item losses") {
        model::Parameters other = tiny_params(42);
        other.role = model::Role::Reference;
        std::vector<BatchItem> batch{BatchItem::of(naive[0]), BatchItem::of(sc[0]), BatchItem::of(naive[1])};
        LossBreakdown b = loss_scdpo(policy, other, batch, 0.1);
        double n0 = loss_naive(policy, other, naive[0], 0.1);
        double n1 = loss_naive(policy, other, naive[1], 0.1);
        double s0 = loss_sc(policy, other, sc[0], 0.1);
        CHECK(b.l_naive == doctest::Approx((n0 + n1) / 2.0).epsilon(1e-12));
        CHECK(b.l_sc == doctest::Approx(s0).epsilon(1e-12));
        CHECK(b.total == doctest::Approx(b.l_naive + b.l_sc).epsilon(1e-12));
    }
    SUBCASE("empty batch is rejected") {
        CHECK_THROWS_AS(loss_scdpo(policy, reference, {}, 0.1), std::invalid_argument);
    }
}

TEST_CASE("tape losses match decoder-path losses and pass fd checks") {
    Vocab vocab = Vocab::task_vocab();
    taskgen::Problem p = taskgen::generate_problem(60, 2, 3);
    forge::NaivePair np = synthetic_naive(p, vocab);
    forge::SCPair sp = synthetic_sc(p, vocab, 0);

    for (std::uint64_t seed : {71ULL, 72ULL, 73ULL}) {
        model::Parameters policy = tiny_params(seed);
        model::Parameters reference = tiny_params(seed + 500);
        reference.role = model::Role::Reference;

        ItemGrad gn = pair_item_grad(policy, reference, BatchItem::of(np), 0.1);
        CHECK(std::fabs(gn.loss - loss_naive(policy, reference, np, 0.1)) < 1e-9);

        ItemGrad gs = pair_item_grad(policy, reference, BatchItem::of(sp), 0.1);
        CHECK(std::fabs(gs.loss - loss_sc(policy, reference, sp, 0.1)) < 1e-9);

        RandomStream rng(900 + seed);
        auto coords = diff::sample_coords(policy, 120, rng);

        auto naive_fn = [&](const model::Parameters& q) { return loss_naive(q, reference, np, 0.1); };
        diff::FdReport rn = diff::fd_check(naive_fn, gn.grad, policy, diff::kDefaultFdEps, coords);
        CHECK(rn.max_rel_error < 1e-4);

        auto sc_fn = [&](const model::Parameters& q) { return loss_sc(q, reference, sp, 0.1); };
        diff::FdReport rs = diff::fd_check(sc_fn, gs.grad, policy, diff::kDefaultFdEps, coords);
        CHECK(rs.max_rel_error < 1e-4);
    }
}

TEST_CASE("masking locality on a frozen per-position logit table") {
    // Toy whose per-position logits are independent parameters: the suffix-only
    // loss must ignore question/prefix rows exactly.
    const int positions = 12, vocab_size = 5;
    model::Parameters toy;
    toy.config.vocab_size = vocab_size;
    toy.config.context_length = positions;
    toy.config.embed_dim = 1;
    toy.config.layer_count = 1;
    toy.config.head_count = 1;
    toy.config.feedforward_dim = 1;
    model::NamedTensor table;
    table.name = "logit_table";
    table.rows = positions;
    table.cols = vocab_size;
    RandomStream rng(5);
    for (int i = 0; i < positions * vocab_size; ++i) {
        table.values.push_back(static_cast<float>(rng.next_gaussian()));
    }
    toy.tensors.push_back(table);

    const int suffix_begin = 7;  // rows < 7 play question+prefix, rows >= 7 the suffix
    std::vector<int> pick_rows;
    std::vector<TokenId> targets;
    for (int r = suffix_begin; r < positions; ++r) {
        pick_rows.push_back(r);
        targets.push_back(static_cast<TokenId>(r % vocab_size));
    }

    auto suffix_loss = [&](const model::Parameters& params) {
        diff::Tape tape(params);
        auto logits = tape.param("logit_table");
        auto lp = tape.logprob_pick(logits, pick_rows, targets);
        auto margin = tape.affine(tape.sum(lp), 0.1, 0.05);
        return tape.scalar(tape.affine(tape.log_sigmoid(margin), -1.0, 0.0));
    };

    diff::Tape tape(toy);
    auto logits = tape.param("logit_table");
    auto lp = tape.logprob_pick(logits, pick_rows, targets);
    auto margin = tape.affine(tape.sum(lp), 0.1, 0.05);
    auto loss = tape.affine(tape.log_sigmoid(margin), -1.0, 0.0);
    diff::GradientVector grad = tape.backward(loss);

    for (int r = 0; r < suffix_begin; ++r) {
        for (int c = 0; c < vocab_size; ++c) {
            CHECK(grad.tensors[0][static_cast<std::size_t>(r * vocab_size + c)] == 0.0);
        }
    }
    bool any_nonzero = false;
    for (int r = suffix_begin; r < positions; ++r) {
        for (int c = 0; c < vocab_size; ++c) {
            any_nonzero = any_nonzero || grad.tensors[0][static_cast<std::size_t>(r * vocab_size + c)] != 0.0;
        }
    }
    CHECK(any_nonzero);

    // perturbing prefix rows leaves the loss bit-identical
    double before = suffix_loss(toy);
    model::Parameters perturbed = toy;
    for (int r = 0; r < suffix_begin; ++r) {
        for (int c = 0; c < vocab_size; ++c) {
            perturbed.tensors[0].values[static_cast<std::size_t>(r * vocab_size + c)] += 0.37f;
        }
    }
    CHECK(suffix_loss(perturbed) == before);
}

TEST_CASE("train loop contracts") {
    const auto& lab = testing::micro_lab();
    Vocab vocab = lab.sft.vocab;

    Dataset data;
    for (std::size_t i = 0; i < 12; ++i) {
        data.naive.push_back(synthetic_naive(lab.problems[i], vocab));
        data.sc.push_back(synthetic_sc(lab.problems[i], vocab, 0));
    }
    Dataset heldout;
    for (std::size_t i = 12; i < 18; ++i) heldout.sc.push_back(synthetic_sc(lab.problems[i], vocab, 0));

    model::Parameters reference = lab.sft;
    reference.role = model::Role::Reference;
    std::string ref_hash_before = model::parameters_hash(reference);

    TrainConfig tc;
    tc.loss_mode = LossMode::Scdpo;
    tc.learning_rate = 1e-3;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.seed = 9;
    tc.workers = 2;

    SUBCASE("epochs=0 returns initial parameters unchanged") {
        model::Parameters policy = lab.sft;
        std::string before = model::parameters_hash(policy);
        TrainConfig zero = tc;
        zero.epochs = 0;
        TrainLog log = train::train(policy, &reference, data, zero);
        CHECK(model::parameters_hash(policy) == before);
        CHECK(log.epochs.empty());
    }
    SUBCASE("same seed twice gives bit-identical parameters; margins rise; reference frozen") {
        model::Parameters policy1 = lab.sft;
        model::Parameters policy2 = lab.sft;
        double margin_before = mean_margin(policy1, reference, heldout.pair_items(LossMode::Scdpo), tc.beta, 2);
        CHECK(margin_before == 0.0);  // policy starts equal to reference

        TrainLog log1 = train::train(policy1, &reference, data, tc, &heldout);
        TrainLog log2 = train::train(policy2, &reference, data, tc, &heldout);
        CHECK(model::parameters_hash(policy1) == model::parameters_hash(policy2));
        REQUIRE(!log1.epochs.empty());
        CHECK(log1.epochs.back().heldout_margin == log2.epochs.back().heldout_margin);

        double margin_after = mean_margin(policy1, reference, heldout.pair_items(LossMode::Scdpo), tc.beta, 2);
        CHECK(margin_after > margin_before);
        CHECK(model::parameters_hash(reference) == ref_hash_before);
        CHECK(log1.epochs.back().total < 2 * kLn2);
    }
    SUBCASE("worker count does not change the result") {
        model::Parameters policy1 = lab.sft;
        model::Parameters policy2 = lab.sft;
        TrainConfig one = tc;
        one.workers = 1;
        TrainConfig two = tc;
        two.workers = 2;
        train::train(policy1, &reference, data, one);
        train::train(policy2, &reference, data, two);
        CHECK(model::parameters_hash(policy1) == model::parameters_hash(policy2));
    }
    SUBCASE("dpo_naive mode ignores sc pairs") {
        model::Parameters policy = lab.sft;
        TrainConfig naive_only = tc;
        naive_only.loss_mode = LossMode::DpoNaive;
        TrainLog log = train::train(policy, &reference, data, naive_only);
        CHECK(log.epochs.back().l_sc == 0.0);
    }
    SUBCASE("NaN loss aborts with a batch diagnostic") {
        model::Parameters policy = lab.sft;
        policy.tensor("head").values[0] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(train::train(policy, &reference, data, tc), TrainAbortError);
    }
    SUBCASE("empty dataset and missing or mis-tagged reference are rejected") {
        model::Parameters policy = lab.sft;
        Dataset empty;
        CHECK_THROWS_AS(train::train(policy, &reference, empty, tc), std::invalid_argument);
        CHECK_THROWS_AS(train::train(policy, nullptr, data, tc), std::invalid_argument);
        model::Parameters not_ref = lab.sft;  // still tagged policy
        CHECK_THROWS_AS(train::train(policy, &not_ref, data, tc), std::invalid_argument);
    }
}
