// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chirploc/image_io.hpp"
#include "chirploc/synth.hpp"

namespace chirploc {

inline constexpr std::size_t kNumTargets = 3;
inline constexpr std::array<const char*, kNumTargets> kTargetNames = {
    "Chirp Start Time", "Chirp Start Freq", "Chirp End Freq"};
/// Short column keys used in CSV and JSON outputs.
inline constexpr std::array<const char*, kNumTargets> kTargetKeys = {"t0", "f0", "f1"};

using LabelRow = std::array<double, kNumTargets>;

/// N x 3 regression targets: (onset time, onset frequency, offset frequency).
struct LabelMatrix {
    std::vector<LabelRow> rows;

    std::size_t size() const { return rows.size(); }
    std::vector<double> column(std::size_t j) const;
    LabelMatrix select(std::span<const std::size_t> indices) const;
};

LabelMatrix labels_from_params(std::span<const ChirpParams> params);

/// Per-column mean and population standard deviation.
struct NormalizationStats {
    LabelRow mu{};
    LabelRow sigma{};

    void save(const std::filesystem::path& path) const;
    static NormalizationStats load(const std::filesystem::path& path);
};

NormalizationStats compute_stats(const LabelMatrix& labels);
LabelMatrix normalize_labels(const LabelMatrix& labels, const NormalizationStats& stats);
LabelMatrix denormalize_predictions(const LabelMatrix& pred, const NormalizationStats& stats);

struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded Fisher-Yates over 0..n-1; the first round(test_fraction * n)
/// shuffled indices form the test block.
DatasetSplit split_dataset(std::size_t n, double test_fraction, std::uint64_t seed);

inline constexpr std::size_t kDefaultImageSize = 224;

/// Bilinear resize (half-pixel centres) to size x size, scale by 1/255 and
/// lay out channel-first as 3 x size x size. Gray inputs are replicated.
std::vector<double> preprocess_image(const GrayImage& image, std::size_t size = kDefaultImageSize);

/// Channel-first batch in [0, 1].
struct ImageBatch {
    std::size_t batch = 0;
    std::size_t size = 0;
    std::vector<double> values;  // batch x 3 x size x size
};

ImageBatch make_image_batch(std::span<const GrayImage> images, std::span<const std::size_t> indices,
                            std::size_t size);

/// Images and parameters of a generated dataset directory.
struct ChirpDataset {
    std::vector<GrayImage> images;
    std::vector<ChirpParams> params;

    std::size_t size() const { return params.size(); }
    LabelMatrix labels() const { return labels_from_params(params); }
};

/// Parses labels.csv (strict header check).
std::vector<ChirpParams> read_labels_csv(const std::filesystem::path& path);

/// Reads labels.csv and spectrogram_{i}.png for every row.
ChirpDataset load_dataset(const std::filesystem::path& dir);

}  // namespace chirploc
