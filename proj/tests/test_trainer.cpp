// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "chirploc/errors.hpp"
#include "chirploc/synth.hpp"
#include "chirploc/trainer.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace chirploc;
using ad::Tensor;

namespace {

struct SmallSet {
    std::vector<GrayImage> images;
    LabelMatrix labels;
};

SmallSet small_set(std::size_t n, std::uint64_t seed) {
    SynthConfig c;
    c.seed = seed;
    SmallSet s;
    std::vector<ChirpParams> params;
    for (std::size_t i = 0; i < n; ++i) {
        SynthSample sample = synthesize_sample(c, i);
        s.images.push_back(to_image(sample.spectrogram));
        params.push_back(sample.params);
    }
    s.labels = labels_from_params(params);
    return s;
}

ModelConfig small_model() {
    ModelConfig c;
    c.image_size = 32;
    c.embed_dim = 16;
    c.num_layers = 1;
    c.ffn_dim = 32;
    c.lora_rank = 2;
    c.lora_alpha = 2.0;
    return c;
}

TrainConfig quick(std::size_t epochs) {
    TrainConfig t;
    t.epochs_max = epochs;
    t.batch_size = 8;
    t.lr = 1e-3;
    t.eval_batch_size = 16;
    return t;
}

double checksum(const TensorRecord& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        s += r.values[i] * static_cast<double>(i % 7 + 1);
    }
    return s;
}

}  // namespace

TEST_SUITE("trainer") {
    TEST_CASE("mse loss sums squared norms and divides by batch") {
        const auto zero = mse_loss(Tensor<double>::constant({2, 3}, {1, 2, 3, 4, 5, 6}),
                                   Tensor<double>::constant({2, 3}, {1, 2, 3, 4, 5, 6}));
        CHECK(zero.item() == 0.0);
        const auto one = mse_loss(Tensor<double>::constant({1, 3}, {1, 0, 0}), Tensor<double>::zeros({1, 3}));
        CHECK(one.item() == 1.0);
        const auto two = mse_loss(Tensor<double>::constant({2, 3}, {1, 0, 0, 0, 2, 0}), Tensor<double>::zeros({2, 3}));
        CHECK(two.item() == 2.5);
        CHECK_THROWS_AS(mse_loss(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({3, 2})), ShapeError);
    }

    TEST_CASE("adamw matches a scalar reference over 100 steps") {
        const AdamWConfig cfg{1e-2, 0.9, 0.999, 1e-8, 0.05};
        RandomState rng(5);
        const std::size_t n = 16;
        std::vector<double> theta = oracle::random_values(n, rng);
        std::vector<double> m(n, 0.0);
        std::vector<double> v(n, 0.0);
        std::vector<oracle::ScalarAdamW> refs(n, oracle::ScalarAdamW{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                                                                      cfg.weight_decay});
        std::vector<double> ref_theta = theta;
        double worst = 0.0;
        for (std::size_t step = 1; step <= 100; ++step) {
            std::vector<double> grad(n);
            for (std::size_t i = 0; i < n; ++i) {
                grad[i] = 2.0 * theta[i] + std::sin(static_cast<double>(step * (i + 1)));
            }
            adamw_update<double>(theta, grad, m, v, step, cfg);
            for (std::size_t i = 0; i < n; ++i) {
                ref_theta[i] = refs[i].step(ref_theta[i], grad[i]);
                worst = std::max(worst, std::abs(theta[i] - ref_theta[i]));
            }
        }
        CHECK(worst < 1e-10);
    }

    TEST_CASE("adamw single-step examples") {
        const AdamWConfig no_decay{1e-3, 0.9, 0.999, 1e-8, 0.0};
        std::vector<double> theta{1.0};
        std::vector<double> m{0.0};
        std::vector<double> v{0.0};
        adamw_update<double>(theta, std::vector<double>{1.0}, m, v, 1, no_decay);
        CHECK(theta[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));

        theta = {2.0};
        m = {0.0};
        v = {0.0};
        adamw_update<double>(theta, std::vector<double>{0.0}, m, v, 1, no_decay);
        CHECK(theta[0] == 2.0);

        const AdamWConfig decay{1e-2, 0.9, 0.999, 1e-8, 0.1};
        theta = {2.0};
        m = {0.0};
        v = {0.0};
        for (std::size_t s = 1; s <= 3; ++s) {
            adamw_update<double>(theta, std::vector<double>{0.0}, m, v, s, decay);
        }
        CHECK(theta[0] == doctest::Approx(2.0 * std::pow(1.0 - 1e-3, 3)).epsilon(1e-14));

        std::vector<double> g{std::nan("")};
        CHECK_THROWS_AS(adamw_update<double>(theta, g, m, v, 4, decay), NumericError);
    }

    TEST_CASE("one optimizer step decreases a quadratic") {
        auto theta = Tensor<double>::parameter({3}, {0.5, -1.5, 2.0});
        AdamW<double> opt({theta}, AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.01});
        const auto loss0 = ad::sum(ad::mul(theta, theta));
        loss0.backward();
        opt.step();
        opt.zero_grad();
        CHECK_FALSE(theta.has_grad());
        CHECK(ad::sum(ad::mul(theta, theta)).item() < loss0.item());
        CHECK(opt.steps_taken() == 1);
    }

    TEST_CASE("plateau scheduler traces") {
        auto trace = [](std::vector<double> losses, std::size_t k) {
            PlateauState s;
            double lr = 1.0;
            std::vector<double> out;
            for (double l : losses) {
                lr = lr_schedule_step(lr, l, s, 0.5, k);
                out.push_back(lr);
            }
            return out;
        };
        CHECK(trace({1.0, 0.9, 0.8}, 2) == std::vector<double>{1.0, 1.0, 1.0});
        CHECK(trace({1.0, 1.0, 1.0}, 2) == std::vector<double>{1.0, 1.0, 0.5});
        CHECK(trace({1.0, 1.0, 1.0, 1.0, 1.0}, 2) == std::vector<double>{1.0, 1.0, 0.5, 0.5, 0.25});
        // Improvements within the tolerance do not count.
        CHECK(trace({1.0, 1.0 - 1e-9, 1.0 - 2e-9}, 2) == std::vector<double>{1.0, 1.0, 0.5});
    }

    TEST_CASE("early stopping traces") {
        const std::vector<double> falling{1.0, 0.9, 0.8, 0.7, 0.6};
        for (std::size_t n = 1; n <= falling.size(); ++n) {
            CHECK(early_stop_check(std::span(falling).first(n), 1) == StopDecision::Continue);
        }
        const std::vector<double> bump{0.5, 0.6};
        CHECK(early_stop_check(std::span(bump).first(1), 1) == StopDecision::Continue);
        CHECK(early_stop_check(bump, 1) == StopDecision::Stop);
        const std::vector<double> wobble{0.5, 0.52, 0.51};
        CHECK(early_stop_check(std::span(wobble).first(2), 2) == StopDecision::Continue);
        CHECK(early_stop_check(wobble, 2) == StopDecision::Stop);
        const std::vector<double> recovered{0.5, 0.6, 0.4};
        CHECK(early_stop_check(recovered, 2) == StopDecision::Continue);
    }

    TEST_CASE("config validation") {
        TrainConfig t;
        t.scheduler_factor = 1.0;
        CHECK_THROWS_AS(t.validate(), ConfigError);
        t = TrainConfig{};
        t.early_stop_patience = 0;
        CHECK_THROWS_AS(t.validate(), ConfigError);
        t = TrainConfig{};
        t.epochs_max = 0;
        CHECK_THROWS_AS(t.validate(), ConfigError);
        t = TrainConfig{};
        t.batch_size = 0;
        CHECK_THROWS_AS(t.validate(), ConfigError);
    }

    TEST_CASE("training is deterministic and reports consistently") {
        const SmallSet set = small_set(40, 3);
        const TrainConfig cfg = quick(3);
        const TrainData data = prepare_train_data(set.images, set.labels, cfg);
        CHECK(data.split.test.size() == 8);

        VitRegressor<float> a(small_model(), 7);
        VitRegressor<float> b(small_model(), 7);
        const TrainResult ra = train(a, data, cfg);
        const TrainResult rb = train(b, data, cfg);
        REQUIRE(ra.report.completed_epochs() == rb.report.completed_epochs());
        for (std::size_t i = 0; i < ra.report.epochs.size(); ++i) {
            CHECK(ra.report.epochs[i].train_loss == rb.report.epochs[i].train_loss);
            CHECK(ra.report.epochs[i].test_loss == rb.report.epochs[i].test_loss);
        }
        for (const auto& [name, rec] : ra.final_state) {
            CHECK(rec.values == rb.final_state.at(name).values);
        }
        for (std::size_t i = 1; i < ra.report.epochs.size(); ++i) {
            CHECK(ra.report.epochs[i].lr <= ra.report.epochs[i - 1].lr);
        }
        CHECK(ra.report.best_epoch >= 1);
        CHECK(ra.report.best_epoch <= ra.report.completed_epochs());

        test_support::TempDir dir;
        ra.report.write_csv(dir.path() / "report.csv");
        std::ifstream in(dir.path() / "report.csv");
        std::string header;
        std::getline(in, header);
        CHECK(header == "epoch,train_loss,test_loss,r_t0,r_f0,r_f1,lr,epoch_seconds");
        std::size_t rows = 0;
        for (std::string line; std::getline(in, line);) {
            ++rows;
        }
        CHECK(rows == ra.report.completed_epochs());
    }

    TEST_CASE("lora fine-tuning leaves the backbone untouched") {
        const SmallSet set = small_set(24, 4);
        TrainConfig cfg = quick(2);
        cfg.mode = TrainMode::LoraFinetune;
        const TrainData data = prepare_train_data(set.images, set.labels, cfg);
        VitRegressor<float> m(small_model(), 3);
        const StateDict before = m.state();
        const TrainResult r = train(m, data, cfg);
        bool lora_moved = false;
        for (const auto& [name, rec] : r.final_state) {
            if (rec.role == ParamRole::Backbone) {
                CHECK(checksum(rec) == checksum(before.at(name)));
            } else if (rec.role == ParamRole::Lora && rec.values != before.at(name).values) {
                lora_moved = true;
            }
        }
        CHECK(lora_moved);
    }

    TEST_CASE("divergence reports epoch, batch and learning rate") {
        const SmallSet set = small_set(16, 5);
        TrainConfig cfg = quick(3);
        cfg.lr = 1e30;
        const TrainData data = prepare_train_data(set.images, set.labels, cfg);
        VitRegressor<float> m(small_model(), 3);
        try {
            train(m, data, cfg);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("epoch") != std::string::npos);
            CHECK(msg.find("batch") != std::string::npos);
            CHECK(msg.find("lr") != std::string::npos);
        }
    }

    TEST_CASE("stats may come from the train split only") {
        const SmallSet set = small_set(30, 6);
        TrainConfig cfg = quick(1);
        const TrainData all = prepare_train_data(set.images, set.labels, cfg);
        cfg.stats_from_train_only = true;
        const TrainData train_only = prepare_train_data(set.images, set.labels, cfg);
        CHECK(all.stats.mu == compute_stats(set.labels).mu);
        CHECK(train_only.stats.mu == compute_stats(set.labels.select(train_only.split.train)).mu);
    }
}
