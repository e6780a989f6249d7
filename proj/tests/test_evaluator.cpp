// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "chirploc/errors.hpp"
#include "chirploc/evaluator.hpp"
#include "support/tempdir.hpp"

using namespace chirploc;

namespace {

std::vector<GrayImage> blank_images(std::size_t n) {
    GrayImage g;
    g.width = 4;
    g.height = 4;
    g.pixels.assign(16, 0);
    return std::vector<GrayImage>(n, g);
}

LabelMatrix ramp_labels(std::size_t n) {
    LabelMatrix m;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i);
        m.rows.push_back({x, 100.0 - x, std::sqrt(x + 1.0)});
    }
    return m;
}

}  // namespace

TEST_SUITE("evaluator") {
    TEST_CASE("pearson examples") {
        const std::vector<double> a{1, 2, 3};
        const std::vector<double> b{1, 2, 4};
        const std::vector<double> neg{-1, -2, -3};
        CHECK(pearson_r(a, a) == doctest::Approx(1.0));
        CHECK(pearson_r(a, neg) == doctest::Approx(-1.0));
        CHECK(pearson_r(a, b) == doctest::Approx(0.9819805060619657).epsilon(1e-12));
        const std::vector<double> flat{2, 2, 2};
        try {
            pearson_r(flat, a);
            FAIL("expected MetricError");
        } catch (const MetricError& e) {
            CHECK(std::string(e.what()).find("predicted") != std::string::npos);
        }
        try {
            pearson_r(a, flat);
            FAIL("expected MetricError");
        } catch (const MetricError& e) {
            CHECK(std::string(e.what()).find("true") != std::string::npos);
        }
        CHECK_THROWS_AS(pearson_r(std::vector<double>{1}, std::vector<double>{1}), MetricError);
        CHECK_THROWS_AS(pearson_r(a, std::vector<double>{1, 2}), MetricError);
    }

    TEST_CASE("histograms") {
        const std::vector<double> pm{-1.0, 1.0};
        Histogram h = error_histogram(pm, 2);
        CHECK(h.counts == std::vector<std::size_t>{1, 1});
        CHECK(h.edges.front() == -1.0);
        CHECK(h.edges.back() == 1.0);

        const std::vector<double> zeros(7, 0.0);
        h = error_histogram(zeros, 5);
        std::size_t populated = 0;
        for (std::size_t c : h.counts) {
            populated += c > 0 ? 1 : 0;
            if (c > 0) {
                CHECK(c == 7);
            }
        }
        CHECK(populated == 1);
        CHECK_THROWS_AS(error_histogram(std::vector<double>{}, 3), MetricError);
        CHECK_THROWS_AS(error_histogram(pm, 1), MetricError);

        RandomState rng(12);
        std::vector<double> normal(100000);
        for (double& v : normal) {
            v = rng.normal();
        }
        h = error_histogram(normal, 50);
        std::size_t total = 0;
        for (std::size_t c : h.counts) {
            total += c;
        }
        CHECK(total == normal.size());
        CHECK(std::abs(sample_skewness(normal)) < 0.05);
    }

    TEST_CASE("skewness of simple samples") {
        CHECK(sample_skewness(std::vector<double>{1, 2, 3}) == doctest::Approx(0.0));
        CHECK(sample_skewness(std::vector<double>{0, 0, 0, 10}) > 1.0);
        CHECK(sample_skewness(std::vector<double>{4, 4}) == 0.0);
    }

    TEST_CASE("report lines reproduce the reference sample byte for byte") {
        LabelMatrix pred;
        pred.rows = {{44.91, 26.78, 23.65}};
        LabelMatrix truth;
        truth.rows = {{43.33, 24.33, 19.14}};
        const std::string expected =
            "Predictions and Real Labels:\n"
            "Sample 1:\n"
            "  Predicted: A chirp pattern was observed starting at time 44.91 with a start frequency of 26.78 Hz "
            "and an end frequency of 23.65 Hz.\n"
            "  Real: A chirp pattern was observed starting at time 43.33 with a start frequency of 24.33 Hz and "
            "an end frequency of 19.14 Hz.\n"
            "-----\n";
        CHECK(format_prediction_report(pred, truth) == expected);
        LabelMatrix two = pred;
        two.rows.push_back({1.005, 2.0, 100.0});
        CHECK_THROWS_AS(format_prediction_report(two, truth), UsageError);
        CHECK(describe_chirp({6.7249, 94.16, 98.25}).find("time 6.72 ") != std::string::npos);
    }

    TEST_CASE("oracle predictor yields perfect scores") {
        const std::size_t n = 40;
        const auto images = blank_images(n);
        const LabelMatrix truth = ramp_labels(n);
        const NormalizationStats stats = compute_stats(truth);
        const LabelMatrix normalized = normalize_labels(truth, stats);
        const Predictor oracle_model = [&](const ImageBatch& batch, std::span<const std::size_t> idx) {
            CHECK(batch.batch == idx.size());
            LabelMatrix m;
            for (std::size_t i : idx) {
                m.rows.push_back(normalized.rows[i]);
            }
            return m;
        };
        std::vector<std::size_t> indices;
        for (std::size_t i = 0; i < n; i += 2) {
            indices.push_back(i);
        }
        const EvalReport r = evaluate(oracle_model, images, truth, indices, stats, 4, 7);
        CHECK(r.n_samples == 20);
        for (std::size_t j = 0; j < kNumTargets; ++j) {
            CHECK(r.pearson[j] == doctest::Approx(1.0));
            CHECK(r.errors[j].size() == 20);
            for (double e : r.errors[j]) {
                CHECK(std::abs(e) < 1e-9);
            }
        }
        CHECK(r.mse < 1e-18);
        CHECK(r.inference_seconds > 0.0);
        CHECK(r.sample_ids == indices);
        CHECK_THROWS_AS(evaluate(oracle_model, images, truth, std::span<const std::size_t>{}, stats, 4),
                        UsageError);

        test_support::TempDir dir;
        write_eval_outputs(r, dir.path(), 10);
        for (const char* f : {"metrics.json", "predictions.csv", "histograms.csv"}) {
            CHECK(std::filesystem::exists(dir.path() / f));
        }
        std::ifstream pc(dir.path() / "predictions.csv");
        std::string header;
        std::getline(pc, header);
        CHECK(header == "sample_id,target,pred,true,error");
    }

    TEST_CASE("inference time scales with the number of samples") {
        const std::size_t n = 64;
        const auto images = blank_images(n);
        const LabelMatrix truth = ramp_labels(n);
        const NormalizationStats stats = compute_stats(truth);
        const Predictor slow = [](const ImageBatch& batch, std::span<const std::size_t>) {
            std::this_thread::sleep_for(std::chrono::milliseconds(2 * batch.batch));
            LabelMatrix m;
            for (std::size_t i = 0; i < batch.batch; ++i) {
                m.rows.push_back({static_cast<double>(i), static_cast<double>(i % 3), static_cast<double>(i % 5)});
            }
            return m;
        };
        std::vector<std::size_t> small(16);
        std::vector<std::size_t> large(32);
        for (std::size_t i = 0; i < 32; ++i) {
            if (i < 16) {
                small[i] = i;
            }
            large[i] = i;
        }
        const double t1 = evaluate(slow, images, truth, small, stats, 4, 8).inference_seconds;
        const double t2 = evaluate(slow, images, truth, large, stats, 4, 8).inference_seconds;
        CHECK(t2 / t1 > 1.5);
        CHECK(t2 / t1 < 3.0);
    }
}
