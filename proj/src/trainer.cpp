#include "scdpo/trainer.hpp"

#include <cmath>
#include <fstream>

#include "scdpo/graph.hpp"
#include "scdpo/parallel.hpp"
#include "scdpo/rng.hpp"

namespace scdpo::train {

const char* to_string(LossMode m) {
    switch (m) {
        case LossMode::Sft: return "sft";
        case LossMode::DpoNaive: return "dpo_naive";
        case LossMode::Scdpo: return "scdpo";
    }
    return "?";
}

std::optional<LossMode> loss_mode_from_string(const std::string& s) {
    if (s == "sft") return LossMode::Sft;
    if (s == "dpo_naive") return LossMode::DpoNaive;
    if (s == "scdpo") return LossMode::Scdpo;
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (beta <= 0.0) throw std::invalid_argument("train config: beta must be positive");
    if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be positive");
    if (epochs < 0) throw std::invalid_argument("train config: epochs must be non-negative");
    if (batch_size <= 0) throw std::invalid_argument("train config: batch_size must be positive");
    if (sc_loss_weight < 0.0) throw std::invalid_argument("train config: sc_loss_weight must be non-negative");
}

std::vector<BatchItem> Dataset::pair_items(LossMode mode) const {
    std::vector<BatchItem> items;
    for (const auto& p : naive) items.push_back(BatchItem::of(p));
    if (mode == LossMode::Scdpo) {
        for (const auto& p : sc) items.push_back(BatchItem::of(p));
    }
    return items;
}

namespace {

// -log sigma(x) = softplus(-x), branch form.
double neg_log_sigmoid(double x) {
    return x < 0.0 ? -x + std::log1p(std::exp(x)) : std::log1p(std::exp(-x));
}

struct PairTokens {
    TokenSeq context;       // question prompt, plus shared prefix for SC pairs
    TokenSeq preferred;     // scored completion (with terminal <eos>)
    TokenSeq dispreferred;  // scored completion (with terminal <eos>)
};

PairTokens tokens_of(const Vocab& vocab, const forge::NaivePair& pair) {
    PairTokens t;
    t.context = taskgen::question_prompt(vocab, pair.question_text);
    t.preferred = taskgen::completion_tokens(vocab, pair.preferred);
    t.dispreferred = taskgen::completion_tokens(vocab, pair.dispreferred);
    return t;
}

PairTokens tokens_of(const Vocab& vocab, const forge::SCPair& pair) {
    PairTokens t;
    t.context = taskgen::question_prompt(vocab, pair.question_text);
    TokenSeq prefix = pair.preferred.prefix_tokens(pair.k);
    t.context.insert(t.context.end(), prefix.begin(), prefix.end());
    t.preferred = pair.preferred.suffix_tokens(pair.k);
    t.preferred.push_back(vocab.eos_id());
    t.dispreferred = pair.dispreferred_sc.suffix_tokens(pair.k);
    t.dispreferred.push_back(vocab.eos_id());
    if (t.preferred.size() <= 1 || t.dispreferred.size() <= 1) {
        throw std::invalid_argument("sc pair: suffixes must be non-empty");
    }
    return t;
}

PairTokens tokens_of(const Vocab& vocab, const BatchItem& item) {
    return item.kind == BatchItem::Kind::Naive ? tokens_of(vocab, *item.naive) : tokens_of(vocab, *item.sc);
}

double margin_of(const model::Parameters& policy, const model::Parameters& reference, const PairTokens& t,
                 double beta) {
    return pair_logratio(policy, reference, t.context, t.preferred, beta) -
           pair_logratio(policy, reference, t.context, t.dispreferred, beta);
}

}  // namespace

double pair_logratio(const model::Parameters& policy, const model::Parameters& reference, const TokenSeq& context,
                     const TokenSeq& completion, double beta) {
    return beta * (model::sequence_logprob(policy, context, completion) -
                   model::sequence_logprob(reference, context, completion));
}

double sft_loss(const model::Parameters& params, const SftExample& example) {
    TokenSeq prompt = taskgen::question_prompt(params.vocab, example.question_text);
    TokenSeq completion = taskgen::completion_tokens(params.vocab, example.gold);
    double sum = model::sequence_logprob(params, prompt, completion);
    return -sum / static_cast<double>(completion.size());
}

double loss_naive(const model::Parameters& policy, const model::Parameters& reference, const forge::NaivePair& pair,
                  double beta) {
    return neg_log_sigmoid(margin_of(policy, reference, tokens_of(policy.vocab, pair), beta));
}

double loss_sc(const model::Parameters& policy, const model::Parameters& reference, const forge::SCPair& pair,
               double beta) {
    return neg_log_sigmoid(margin_of(policy, reference, tokens_of(policy.vocab, pair), beta));
}

std::vector<double> step_rewards(const model::Parameters& policy, const model::Parameters& reference,
                                 const TokenSeq& question_prompt, const taskgen::Solution& solution, int k,
                                 double beta) {
    const Vocab& vocab = policy.vocab;
    const int m = solution.last_step_index();
    if (k < 0 || k >= m) throw std::invalid_argument("step_rewards: k must lie in [0, m-1]");
    std::vector<double> rewards;
    rewards.reserve(static_cast<std::size_t>(m - k));
    for (int j = k + 1; j <= m; ++j) {
        TokenSeq ctx = question_prompt;
        TokenSeq prefix = solution.prefix_tokens(j - 1);
        ctx.insert(ctx.end(), prefix.begin(), prefix.end());
        const auto& span = solution.steps[static_cast<std::size_t>(j)];
        TokenSeq step(solution.tokens.begin() + static_cast<std::ptrdiff_t>(span.begin_token),
                      solution.tokens.begin() + static_cast<std::ptrdiff_t>(span.end_token));
        if (j == m) step.push_back(vocab.eos_id());  // terminal step owns the <eos>
        rewards.push_back(beta * (model::sequence_logprob(policy, ctx, step) -
                                  model::sequence_logprob(reference, ctx, step)));
    }
    return rewards;
}

double loss_sc_stepwise(const model::Parameters& policy, const model::Parameters& reference,
                        const forge::SCPair& pair, double beta) {
    TokenSeq prompt = taskgen::question_prompt(policy.vocab, pair.question_text);
    double pre = 0.0, dis = 0.0;
    for (double r : step_rewards(policy, reference, prompt, pair.preferred, pair.k, beta)) pre += r;
    for (double r : step_rewards(policy, reference, prompt, pair.dispreferred_sc, pair.k, beta)) dis += r;
    return neg_log_sigmoid(pre - dis);
}

LossBreakdown loss_scdpo(const model::Parameters& policy, const model::Parameters& reference,
                         const std::vector<BatchItem>& batch, double beta, double sc_weight) {
    if (batch.empty()) throw std::invalid_argument("loss_scdpo: empty batch");
    LossBreakdown out;
    double naive_sum = 0.0, sc_sum = 0.0, margin_sum = 0.0;
    for (const BatchItem& item : batch) {
        PairTokens t = tokens_of(policy.vocab, item);
        double margin = margin_of(policy, reference, t, beta);
        margin_sum += margin;
        double loss = neg_log_sigmoid(margin);
        if (item.kind == BatchItem::Kind::Naive) {
            naive_sum += loss;
            ++out.naive_count;
        } else {
            sc_sum += loss;
            ++out.sc_count;
        }
    }
    out.l_naive = out.naive_count ? naive_sum / static_cast<double>(out.naive_count) : 0.0;
    out.l_sc = out.sc_count ? sc_weight * sc_sum / static_cast<double>(out.sc_count) : 0.0;
    out.total = out.l_naive + out.l_sc;
    out.margin = margin_sum / static_cast<double>(batch.size());
    return out;
}

double pair_margin(const model::Parameters& policy, const model::Parameters& reference, const BatchItem& item,
                   double beta) {
    return margin_of(policy, reference, tokens_of(policy.vocab, item), beta);
}

double mean_margin(const model::Parameters& policy, const model::Parameters& reference,
                   const std::vector<BatchItem>& items, double beta, int workers) {
    if (items.empty()) return 0.0;
    std::vector<double> margins(items.size());
    parallel_for(items.size(), workers, [&](std::size_t i) {
        margins[i] = pair_margin(policy, reference, items[i], beta);
    });
    double sum = 0.0;
    for (double m : margins) sum += m;
    return sum / static_cast<double>(items.size());
}

ItemGrad sft_item_grad(const model::Parameters& policy, const SftExample& example) {
    TokenSeq full = taskgen::question_prompt(policy.vocab, example.question_text);
    std::size_t ctx_len = full.size();
    TokenSeq completion = taskgen::completion_tokens(policy.vocab, example.gold);
    full.insert(full.end(), completion.begin(), completion.end());

    diff::Tape tape(policy);
    auto lp = graph::completion_logprobs(tape, policy, full, ctx_len);
    auto loss = tape.affine(tape.sum(lp), -1.0 / static_cast<double>(completion.size()), 0.0);
    ItemGrad out;
    out.loss = tape.scalar(loss);
    out.grad = tape.backward(loss);
    return out;
}

ItemGrad pair_item_grad(const model::Parameters& policy, const model::Parameters& reference, const BatchItem& item,
                        double beta) {
    PairTokens t = tokens_of(policy.vocab, item);
    double ref_pre = model::sequence_logprob(reference, t.context, t.preferred);
    double ref_dis = model::sequence_logprob(reference, t.context, t.dispreferred);

    TokenSeq pre_full = t.context;
    pre_full.insert(pre_full.end(), t.preferred.begin(), t.preferred.end());
    TokenSeq dis_full = t.context;
    dis_full.insert(dis_full.end(), t.dispreferred.begin(), t.dispreferred.end());

    diff::Tape tape(policy);
    auto lp_pre = tape.sum(graph::completion_logprobs(tape, policy, pre_full, t.context.size()));
    auto lp_dis = tape.sum(graph::completion_logprobs(tape, policy, dis_full, t.context.size()));
    auto margin = tape.affine(tape.sub(lp_pre, lp_dis), beta, beta * (ref_dis - ref_pre));
    auto loss = tape.affine(tape.log_sigmoid(margin), -1.0, 0.0);
    ItemGrad out;
    out.loss = tape.scalar(loss);
    out.grad = tape.backward(loss);
    return out;
}

AdamOptimizer::AdamOptimizer(const model::Parameters& params, double learning_rate, double beta1, double beta2,
                             double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params.tensors.size());
    v_.reserve(params.tensors.size());
    for (const auto& t : params.tensors) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void AdamOptimizer::step(model::Parameters& params, const diff::GradientVector& grad) {
    ++step_count_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        auto& w = params.tensors[t].values;
        const auto& g = grad.tensors[t];
        auto& m = m_[t];
        auto& v = v_[t];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            w[i] = static_cast<float>(static_cast<double>(w[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

void TrainLog::write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("train log: cannot open " + path);
    out << "epoch\tl_naive\tl_sc\ttotal\theldout_margin\n";
    char line[256];
    for (const EpochLog& e : epochs) {
        std::snprintf(line, sizeof(line), "%d\t%.9f\t%.9f\t%.9f\t%.9f\n", e.epoch, e.l_naive, e.l_sc, e.total,
                      e.heldout_margin);
        out << line;
    }
}

TrainLog train(model::Parameters& policy, const model::Parameters* reference, const Dataset& data,
               const TrainConfig& config, const Dataset* heldout) {
    config.validate();
    if (policy.role != model::Role::Policy) throw std::invalid_argument("train: policy parameters must carry the policy role");
    const bool is_sft = config.loss_mode == LossMode::Sft;
    if (!is_sft && reference == nullptr) throw std::invalid_argument("train: preference losses need a reference model");
    if (!is_sft && reference->role != model::Role::Reference) {
        throw std::invalid_argument("train: reference parameters must carry the reference role");
    }

    std::vector<BatchItem> items;
    std::size_t item_count = 0;
    if (is_sft) {
        item_count = data.sft.size();
    } else {
        items = data.pair_items(config.loss_mode);
        item_count = items.size();
    }
    if (item_count == 0) throw std::invalid_argument("train: dataset is empty for the selected mode");

    std::vector<BatchItem> heldout_items;
    if (heldout) heldout_items = heldout->pair_items(LossMode::Scdpo);

    AdamOptimizer opt(policy, config.learning_rate);
    TrainLog log;

    std::vector<std::size_t> order(item_count);
    for (std::size_t i = 0; i < item_count; ++i) order[i] = i;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        RandomStream shuffle_rng = RandomStream::keyed(config.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = shuffle_rng.next_below(i);
            std::swap(order[i - 1], order[j]);
        }

        double epoch_naive = 0.0, epoch_sc = 0.0;
        std::size_t epoch_naive_n = 0, epoch_sc_n = 0;
        std::size_t batch_index = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::size_t n = end - start;
            std::vector<ItemGrad> grads(n);
            try {
                parallel_for(n, config.workers, [&](std::size_t bi) {
                    std::size_t idx = order[start + bi];
                    if (is_sft) {
                        grads[bi] = sft_item_grad(policy, data.sft[idx]);
                    } else {
                        grads[bi] = pair_item_grad(policy, *reference, items[idx], config.beta);
                    }
                });
            } catch (const diff::NanGradientError& e) {
                throw TrainAbortError("train: NaN in epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_index) + ": " + e.what());
            }

            std::size_t n_naive = 0, n_sc = 0;
            if (is_sft) {
                n_naive = n;
            } else {
                for (std::size_t bi = 0; bi < n; ++bi) {
                    (items[order[start + bi]].kind == BatchItem::Kind::Naive ? n_naive : n_sc) += 1;
                }
            }

            diff::GradientVector batch_grad = diff::GradientVector::zeros_like(policy);
            double batch_loss = 0.0;
            for (std::size_t bi = 0; bi < n; ++bi) {
                double scale;
                if (is_sft) {
                    scale = 1.0 / static_cast<double>(n_naive);
                    epoch_naive += grads[bi].loss;
                    ++epoch_naive_n;
                } else if (items[order[start + bi]].kind == BatchItem::Kind::Naive) {
                    scale = 1.0 / static_cast<double>(n_naive);
                    epoch_naive += grads[bi].loss;
                    ++epoch_naive_n;
                } else {
                    scale = config.sc_loss_weight / static_cast<double>(n_sc);
                    epoch_sc += grads[bi].loss;
                    ++epoch_sc_n;
                }
                batch_loss += scale * grads[bi].loss;
                batch_grad.accumulate(grads[bi].grad, scale);
            }
            if (!std::isfinite(batch_loss)) {
                throw TrainAbortError("train: non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_index));
            }
            opt.step(policy, batch_grad);
            ++batch_index;
        }

        EpochLog e;
        e.epoch = epoch;
        e.l_naive = epoch_naive_n ? epoch_naive / static_cast<double>(epoch_naive_n) : 0.0;
        e.l_sc = epoch_sc_n ? config.sc_loss_weight * epoch_sc / static_cast<double>(epoch_sc_n) : 0.0;
        e.total = e.l_naive + e.l_sc;
        if (!heldout_items.empty() && !is_sft) {
            e.heldout_margin = mean_margin(policy, *reference, heldout_items, config.beta, config.workers);
        }
        log.epochs.push_back(e);
    }
    return log;
}

}  // namespace scdpo::train
