#pragma once

// Shared test fixture: a micro model SFT-trained in-process on a small
// problem set, so sampling- and training-path tests exercise a model that
// actually emits task-shaped text. Deterministic; trained once per binary.

#include <vector>

#include "scdpo/model.hpp"
#include "scdpo/taskgen.hpp"
#include "scdpo/trainer.hpp"

namespace scdpo::testing {

struct MicroLab {
    model::Parameters sft;
    std::vector<taskgen::Problem> problems;
    sampler::SampleBudget budget;
};

inline const MicroLab& micro_lab() {
    static MicroLab lab = [] {
        Vocab vocab = Vocab::task_vocab();
        model::ModelConfig config;
        config.vocab_size = vocab.size();
        config.context_length = 128;
        config.embed_dim = 24;
        config.layer_count = 1;
        config.head_count = 2;
        config.feedforward_dim = 48;

        MicroLab lab{model::init_parameters(config, vocab, 7, model::Role::Policy), {}, {}};
        lab.budget.max_tokens_per_solution = 96;

        for (std::uint64_t s = 0; s < 48; ++s) lab.problems.push_back(taskgen::generate_problem(s, 2, 3));

        train::Dataset data;
        for (const auto& p : lab.problems) {
            data.sft.push_back({p.id, p.question_text, taskgen::render_gold_solution(p, vocab)});
        }
        train::TrainConfig tc;
        tc.loss_mode = train::LossMode::Sft;
        tc.learning_rate = 3e-3;
        tc.epochs = 300;
        tc.batch_size = 16;
        tc.seed = 1;
        tc.workers = 2;
        train::train(lab.sft, nullptr, data, tc);
        return lab;
    }();
    return lab;
}

}  // namespace scdpo::testing
