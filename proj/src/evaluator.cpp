// SPDX-License-Identifier: Apache-2.0

#include "chirploc/evaluator.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "chirploc/errors.hpp"

namespace chirploc {

double pearson_r(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw MetricError(fmt::format("pearson_r: length mismatch ({} vs {})", pred.size(), truth.size()));
    }
    const std::size_t n = pred.size();
    if (n < 2) {
        throw MetricError(fmt::format("pearson_r needs at least 2 samples, got {}", n));
    }
    double mp = 0.0;
    double mt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mp += pred[i];
        mt += truth[i];
    }
    mp /= static_cast<double>(n);
    mt /= static_cast<double>(n);
    double cov = 0.0;
    double vp = 0.0;
    double vt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = pred[i] - mp;
        const double b = truth[i] - mt;
        cov += a * b;
        vp += a * a;
        vt += b * b;
    }
    if (!(vp > 0.0)) {
        throw MetricError("pearson_r: predicted values have zero variance");
    }
    if (!(vt > 0.0)) {
        throw MetricError("pearson_r: true values have zero variance");
    }
    return std::clamp(cov / std::sqrt(vp * vt), -1.0, 1.0);
}

double sample_skewness(std::span<const double> x) {
    if (x.empty()) {
        throw MetricError("skewness of an empty sample");
    }
    const auto n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) {
        mean += v;
    }
    mean /= n;
    double m2 = 0.0;
    double m3 = 0.0;
    for (double v : x) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    return m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
}

Histogram error_histogram(std::span<const double> errors, std::size_t n_bins) {
    if (errors.empty()) {
        throw MetricError("histogram of an empty sample");
    }
    if (n_bins < 2) {
        throw MetricError(fmt::format("histogram needs at least 2 bins (got {})", n_bins));
    }
    auto [lo_it, hi_it] = std::minmax_element(errors.begin(), errors.end());
    double lo = *lo_it;
    double hi = *hi_it;
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.edges.resize(n_bins + 1);
    const double width = (hi - lo) / static_cast<double>(n_bins);
    for (std::size_t i = 0; i <= n_bins; ++i) {
        h.edges[i] = lo + width * static_cast<double>(i);
    }
    h.edges.back() = hi;
    h.counts.assign(n_bins, 0);
    for (double e : errors) {
        auto bin = static_cast<std::size_t>((e - lo) / width);
        bin = std::min(bin, n_bins - 1);
        ++h.counts[bin];
    }
    return h;
}

std::string describe_chirp(const LabelRow& row) {
    return fmt::format(
        "A chirp pattern was observed starting at time {:.2f} with a start frequency of {:.2f} Hz "
        "and an end frequency of {:.2f} Hz.",
        row[0], row[1], row[2]);
}

std::string format_prediction_report(const LabelMatrix& pred, const LabelMatrix& truth) {
    if (pred.size() != truth.size()) {
        throw UsageError(fmt::format("report needs equal row counts ({} predicted, {} real)", pred.size(),
                                     truth.size()));
    }
    std::string out = "Predictions and Real Labels:\n";
    for (std::size_t i = 0; i < pred.size(); ++i) {
        out += fmt::format("Sample {}:\n", i + 1);
        out += "  Predicted: " + describe_chirp(pred.rows[i]) + "\n";
        out += "  Real: " + describe_chirp(truth.rows[i]) + "\n";
        out += "-----\n";
    }
    return out;
}

template <typename T>
Predictor make_predictor(const VitRegressor<T>& model) {
    return [&model](const ImageBatch& batch, std::span<const std::size_t>) {
        const ad::NoGradGuard no_grad;
        const ad::Tensor<T> out = model.forward(batch);
        LabelMatrix m;
        m.rows.resize(batch.batch);
        const auto v = out.values();
        for (std::size_t i = 0; i < batch.batch; ++i) {
            for (std::size_t j = 0; j < kNumTargets; ++j) {
                m.rows[i][j] = static_cast<double>(v[i * kNumTargets + j]);
            }
        }
        return m;
    };
}

template Predictor make_predictor(const VitRegressor<float>&);
template Predictor make_predictor(const VitRegressor<double>&);

EvalReport evaluate(const Predictor& predict, std::span<const GrayImage> images,
                    const LabelMatrix& truth, std::span<const std::size_t> indices,
                    const NormalizationStats& stats, std::size_t image_size, std::size_t batch_size) {
    if (indices.empty()) {
        throw UsageError("evaluate called on an empty split");
    }
    if (batch_size == 0) {
        throw UsageError("evaluate needs batch_size >= 1");
    }
    EvalReport report;
    report.n_samples = indices.size();
    report.sample_ids.assign(indices.begin(), indices.end());
    report.truths = truth.select(indices);

    LabelMatrix normalized_pred;
    normalized_pred.rows.reserve(indices.size());
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t pos = 0; pos < indices.size(); pos += batch_size) {
        const auto chunk = indices.subspan(pos, std::min(batch_size, indices.size() - pos));
        const ImageBatch batch = make_image_batch(images, chunk, image_size);
        const LabelMatrix out = predict(batch, chunk);
        if (out.size() != chunk.size()) {
            throw UsageError(fmt::format("predictor returned {} rows for {} images", out.size(), chunk.size()));
        }
        normalized_pred.rows.insert(normalized_pred.rows.end(), out.rows.begin(), out.rows.end());
    }
    report.inference_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    report.predictions = denormalize_predictions(normalized_pred, stats);
    const LabelMatrix normalized_truth = normalize_labels(report.truths, stats);
    double sq = 0.0;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        for (std::size_t j = 0; j < kNumTargets; ++j) {
            const double d = normalized_pred.rows[i][j] - normalized_truth.rows[i][j];
            sq += d * d;
            report.errors[j].push_back(report.predictions.rows[i][j] - report.truths.rows[i][j]);
        }
    }
    report.mse = sq / static_cast<double>(indices.size());
    for (std::size_t j = 0; j < kNumTargets; ++j) {
        const auto p = report.predictions.column(j);
        const auto t = report.truths.column(j);
        report.pearson[j] = pearson_r(p, t);
    }
    return report;
}

void write_eval_outputs(const EvalReport& report, const std::filesystem::path& dir, std::size_t n_bins) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json metrics;
    metrics["n_samples"] = report.n_samples;
    metrics["mse_normalized"] = report.mse;
    metrics["inference_seconds"] = report.inference_seconds;
    for (std::size_t j = 0; j < kNumTargets; ++j) {
        nlohmann::ordered_json t;
        t["name"] = kTargetNames[j];
        t["pearson_r"] = report.pearson[j];
        t["error_skewness"] = sample_skewness(report.errors[j]);
        double mae = 0.0;
        for (double e : report.errors[j]) {
            mae += std::abs(e);
        }
        t["mean_abs_error"] = mae / static_cast<double>(report.errors[j].size());
        metrics["targets"][kTargetKeys[j]] = t;
    }
    std::ofstream mj(dir / "metrics.json", std::ios::binary);
    mj << metrics.dump(2) << '\n';

    std::ofstream pc(dir / "predictions.csv", std::ios::binary);
    pc << "sample_id,target,pred,true,error\n";
    for (std::size_t i = 0; i < report.n_samples; ++i) {
        for (std::size_t j = 0; j < kNumTargets; ++j) {
            pc << fmt::format("{},{},{},{},{}\n", report.sample_ids[i], kTargetKeys[j],
                              report.predictions.rows[i][j], report.truths.rows[i][j], report.errors[j][i]);
        }
    }

    std::ofstream hc(dir / "histograms.csv", std::ios::binary);
    hc << "target,bin,lower,upper,count\n";
    for (std::size_t j = 0; j < kNumTargets; ++j) {
        const Histogram h = error_histogram(report.errors[j], n_bins);
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            hc << fmt::format("{},{},{},{},{}\n", kTargetKeys[j], b, h.edges[b], h.edges[b + 1], h.counts[b]);
        }
    }
    if (!mj || !pc || !hc) {
        throw IoError("cannot write evaluation outputs to " + dir.string());
    }
}

}  // namespace chirploc
