// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "chirploc/dataset.hpp"
#include "chirploc/model.hpp"

namespace chirploc {

/// Pearson correlation with population (divisor N) moments.
/// Throws MetricError when either side has zero variance.
double pearson_r(std::span<const double> pred, std::span<const double> truth);

/// Population-moment skewness m3 / m2^1.5; zero for constant input.
double sample_skewness(std::span<const double> x);

struct Histogram {
    std::vector<double> edges;  // n_bins + 1, increasing
    std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max]. A degenerate range is widened to
/// [v - 0.5, v + 0.5] so that all samples share one bin.
Histogram error_histogram(std::span<const double> errors, std::size_t n_bins);

/// Figure-style stanza per sample:
///   Sample i:
///     Predicted: A chirp pattern was observed starting at time ...
///     Real: ...
///   -----
std::string format_prediction_report(const LabelMatrix& pred, const LabelMatrix& truth);
/// The single descriptive sentence for one (t0, f0, f1) row.
std::string describe_chirp(const LabelRow& row);

/// Produces normalized predictions for the images selected by `indices`.
/// `batch` holds those images preprocessed, in the same order.
using Predictor = std::function<LabelMatrix(const ImageBatch& batch, std::span<const std::size_t> indices)>;

template <typename T>
Predictor make_predictor(const VitRegressor<T>& model);

struct EvalReport {
    LabelRow pearson{};
    std::array<std::vector<double>, kNumTargets> errors;  // pred - true, physical units
    LabelMatrix predictions;                              // physical units
    LabelMatrix truths;                                   // physical units
    std::vector<std::size_t> sample_ids;
    double mse = 0.0;                // mean per-sample squared norm, normalized units
    double inference_seconds = 0.0;  // preprocessing + forward over the split
    std::size_t n_samples = 0;
};

/// Runs `predict` over `indices` in batches, denormalizes and scores.
EvalReport evaluate(const Predictor& predict, std::span<const GrayImage> images,
                    const LabelMatrix& truth, std::span<const std::size_t> indices,
                    const NormalizationStats& stats, std::size_t image_size,
                    std::size_t batch_size = 32);

/// Writes metrics.json, predictions.csv and histograms.csv into `dir`.
void write_eval_outputs(const EvalReport& report, const std::filesystem::path& dir,
                        std::size_t n_bins = 50);

}  // namespace chirploc
