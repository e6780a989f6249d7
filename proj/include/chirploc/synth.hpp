// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chirploc/image_io.hpp"
#include "chirploc/random.hpp"

namespace chirploc {

enum class ChirpType { Linear, Exponential };

std::string_view to_string(ChirpType type);
/// Parses the CSV spelling (`linear` / `exponential`).
ChirpType parse_chirp_type(std::string_view text);

/// Ground truth for one embedded chirp.
struct ChirpParams {
    double t0 = 0.0;  // onset time, seconds
    double f0 = 1.0;  // start frequency, Hz
    double f1 = 1.0;  // end frequency, Hz
    double dt = 1.0;  // duration, seconds
    ChirpType type = ChirpType::Linear;
};

struct SynthConfig {
    std::size_t n_f = 128;
    std::size_t n_t = 128;
    double duration = 60.0;  // total window T, seconds
    double f_max = 100.0;
    double sigma_spread = 0.5;  // bins
    double noise_low = 0.09;
    double noise_high = 0.3;
    double sigma_filter = 1.0;  // bins; 0 disables smoothing
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the first violated bound.
    void validate() const;
};

/// Throws DomainError if `params` violates the window or frequency bounds of `config`.
void validate_params(const ChirpParams& params, const SynthConfig& config);

/// n_f x n_t intensity matrix. Row i is frequency bin i (0 = lowest),
/// column j is time bin j. Storage is row-major.
class Spectrogram {
public:
    Spectrogram() = default;
    Spectrogram(std::size_t n_f, std::size_t n_t) : n_f_(n_f), n_t_(n_t), data_(n_f * n_t, 0.0) {}

    std::size_t n_f() const { return n_f_; }
    std::size_t n_t() const { return n_t_; }
    double& at(std::size_t f, std::size_t t) { return data_[f * n_t_ + t]; }
    double at(std::size_t f, std::size_t t) const { return data_[f * n_t_ + t]; }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }
    double sum() const;

private:
    std::size_t n_f_ = 0;
    std::size_t n_t_ = 0;
    std::vector<double> data_;
};

Spectrogram init_spectrogram(const SynthConfig& config);

/// Draw order: chirp type, t0, dt, f0, f1.
ChirpParams sample_chirp_params(const SynthConfig& config, RandomState& rng);

/// sin(2*pi*(f0*t + (f1 - f0)*t^2 / (2*tc))) for t in [0, tc].
double linear_chirp_value(double t, double f0, double f1, double tc);
/// sin(2*pi*f0*(k^t - 1)/ln k), k = (f1/f0)^(1/tc); pure tone when f1 ~= f0.
double exponential_chirp_value(double t, double f0, double f1, double tc);
/// Growth factor k = (f1/f0)^(1/tc).
double exponential_growth_factor(double f0, double f1, double tc);

struct BinRange {
    std::size_t start = 0;
    std::size_t end = 0;
};

/// Ceiling mapping of onset and offset time, clamped to [0, n_t - 1].
BinRange map_time_bins(double t0, double dt, const SynthConfig& config);
/// Start bin uses the ceiling, end bin rounds to nearest; both clamped to [1, n_f - 1].
BinRange map_freq_bins(double f0, double f1, const SynthConfig& config);

/// Real-valued frequency-bin centre of the chirp at time bin `t_b`.
double chirp_center_bin(ChirpType type, const BinRange& time_bins, const BinRange& freq_bins,
                        std::size_t t_b);

/// Adds Gaussian-spread intensity along the chirp trajectory. Never decreases an entry.
void render_chirp(Spectrogram& spec, const ChirpParams& params, const SynthConfig& config);

/// Draws eta from the configured noise range, then adds eta * N(0,1) to every
/// entry in row-major order. Returns eta.
double add_noise(Spectrogram& spec, RandomState& rng, const SynthConfig& config);
/// Adds eta * N(0,1) with a caller-fixed level.
void add_noise_with_level(Spectrogram& spec, RandomState& rng, double eta);

/// Normalized 1-D Gaussian taps of radius ceil(3*sigma).
std::vector<double> gaussian_kernel(double sigma);
/// Separable 2-D Gaussian convolution with half-sample symmetric (reflect) padding.
Spectrogram gaussian_smooth(const Spectrogram& spec, double sigma_filter);

/// Clips negatives, min-max scales to [0, 255], and flips so that image row 0
/// holds the highest frequency bin. Width n_t, height n_f.
GrayImage to_image(const Spectrogram& spec);

/// One fully synthesized sample.
struct SynthSample {
    ChirpParams params;
    double eta = 0.0;
    Spectrogram spectrogram;
};

/// Sample `index` of a run: RNG stream derived from (config.seed, index).
SynthSample synthesize_sample(const SynthConfig& config, std::uint64_t index);

struct GenerationManifest {
    std::filesystem::path output_dir;
    std::vector<std::filesystem::path> images;
    std::filesystem::path labels;
    SynthConfig config;
    std::size_t count = 0;
};

inline constexpr std::string_view kLabelsHeader = "t0,f0,f1,dt,chirp_type";

/// Writes spectrogram_{i}.png, labels.csv and manifest.json into `output_dir`.
GenerationManifest generate_dataset(const SynthConfig& config, std::size_t count,
                                    const std::filesystem::path& output_dir);

/// One CSV data row, full round-trip precision.
std::string format_label_row(const ChirpParams& params);

}  // namespace chirploc
