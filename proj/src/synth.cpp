// SPDX-License-Identifier: Apache-2.0

#include "chirploc/synth.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "chirploc/errors.hpp"
#include "chirploc/version.hpp"

namespace chirploc {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Relative gap |f1/f0 - 1| below which the exponential chirp degenerates to a tone.
constexpr double kToneTolerance = 1e-9;

std::size_t clamp_bin(double raw, std::size_t lo, std::size_t hi) {
    if (!(raw > static_cast<double>(lo))) {
        return lo;
    }
    if (raw > static_cast<double>(hi)) {
        return hi;
    }
    return static_cast<std::size_t>(raw);
}

// Half-sample symmetric reflection: ... b a | a b c ... c | c b ...
std::size_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
    const std::ptrdiff_t period = 2 * n;
    std::ptrdiff_t m = i % period;
    if (m < 0) {
        m += period;
    }
    return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

}  // namespace

std::string_view to_string(ChirpType type) {
    return type == ChirpType::Linear ? "linear" : "exponential";
}

ChirpType parse_chirp_type(std::string_view text) {
    if (text == "linear") {
        return ChirpType::Linear;
    }
    if (text == "exponential") {
        return ChirpType::Exponential;
    }
    throw DomainError(fmt::format("unknown chirp_type '{}'", text));
}

void SynthConfig::validate() const {
    if (n_f < 2) {
        throw ConfigError(fmt::format("n_f must be >= 2 (got {})", n_f));
    }
    if (n_t < 2) {
        throw ConfigError(fmt::format("n_t must be >= 2 (got {})", n_t));
    }
    if (!(duration > 0.0) || !std::isfinite(duration)) {
        throw ConfigError(fmt::format("duration must be > 0 (got {})", duration));
    }
    if (!(f_max > 0.0) || !std::isfinite(f_max)) {
        throw ConfigError(fmt::format("f_max must be > 0 (got {})", f_max));
    }
    if (!(sigma_spread > 0.0)) {
        throw ConfigError(fmt::format("sigma_spread must be > 0 (got {})", sigma_spread));
    }
    if (!(sigma_filter >= 0.0)) {
        throw ConfigError(fmt::format("sigma_filter must be >= 0 (got {})", sigma_filter));
    }
    if (!(noise_low >= 0.0) || !(noise_low <= noise_high) || !std::isfinite(noise_high)) {
        throw ConfigError(fmt::format("noise range must satisfy 0 <= low <= high (got [{}, {}])",
                                      noise_low, noise_high));
    }
}

void validate_params(const ChirpParams& p, const SynthConfig& config) {
    const double slack = 1e-9 * config.duration;
    if (!(p.t0 >= 0.0)) {
        throw DomainError(fmt::format("t0 must be >= 0 (got {})", p.t0));
    }
    if (!(p.dt > 0.0)) {
        throw DomainError(fmt::format("dt must be > 0 (got {})", p.dt));
    }
    if (!(p.t0 + p.dt <= config.duration + slack)) {
        throw DomainError(fmt::format("t0 + dt = {} exceeds the window T = {}", p.t0 + p.dt,
                                      config.duration));
    }
    if (!(p.f0 > 0.0 && p.f0 <= config.f_max)) {
        throw DomainError(fmt::format("f0 must lie in (0, {}] (got {})", config.f_max, p.f0));
    }
    if (!(p.f1 > 0.0 && p.f1 <= config.f_max)) {
        throw DomainError(fmt::format("f1 must lie in (0, {}] (got {})", config.f_max, p.f1));
    }
}

double Spectrogram::sum() const {
    return std::accumulate(data_.begin(), data_.end(), 0.0);
}

Spectrogram init_spectrogram(const SynthConfig& config) {
    config.validate();
    return Spectrogram(config.n_f, config.n_t);
}

ChirpParams sample_chirp_params(const SynthConfig& config, RandomState& rng) {
    const double window = config.duration;
    ChirpParams p;
    p.type = rng.coin() ? ChirpType::Exponential : ChirpType::Linear;
    p.t0 = rng.uniform(0.0, 0.75 * window);
    p.dt = rng.uniform(0.1 * window, std::min(0.5 * window, window - p.t0));
    p.f0 = rng.uniform(0.05 * config.f_max, config.f_max);
    p.f1 = rng.uniform(0.05 * config.f_max, config.f_max);
    return p;
}

double linear_chirp_value(double t, double f0, double f1, double tc) {
    if (!(tc > 0.0)) {
        throw DomainError(fmt::format("chirp duration must be > 0 (got {})", tc));
    }
    if (!(t >= 0.0 && t <= tc)) {
        throw DomainError(fmt::format("t = {} outside [0, {}]", t, tc));
    }
    return std::sin(kTwoPi * (f0 * t + (f1 - f0) * t * t / (2.0 * tc)));
}

double exponential_growth_factor(double f0, double f1, double tc) {
    if (!(f0 > 0.0) || !(f1 > 0.0)) {
        throw DomainError(
            fmt::format("exponential chirp needs f0 > 0 and f1 > 0 (got {}, {})", f0, f1));
    }
    if (!(tc > 0.0)) {
        throw DomainError(fmt::format("chirp duration must be > 0 (got {})", tc));
    }
    return std::pow(f1 / f0, 1.0 / tc);
}

double exponential_chirp_value(double t, double f0, double f1, double tc) {
    const double k = exponential_growth_factor(f0, f1, tc);
    if (!(t >= 0.0 && t <= tc)) {
        throw DomainError(fmt::format("t = {} outside [0, {}]", t, tc));
    }
    if (std::abs(f1 / f0 - 1.0) < kToneTolerance) {
        return std::sin(kTwoPi * f0 * t);
    }
    return std::sin(kTwoPi * f0 * (std::pow(k, t) - 1.0) / std::log(k));
}

BinRange map_time_bins(double t0, double dt, const SynthConfig& config) {
    if (!(t0 >= 0.0) || !(dt >= 0.0)) {
        throw DomainError(fmt::format("time bins need t0 >= 0 and dt >= 0 (got {}, {})", t0, dt));
    }
    if (!(t0 + dt <= config.duration * (1.0 + 1e-9))) {
        throw DomainError(
            fmt::format("t0 + dt = {} exceeds the window T = {}", t0 + dt, config.duration));
    }
    const auto n = static_cast<double>(config.n_t);
    const std::size_t last = config.n_t - 1;
    BinRange bins;
    bins.start = clamp_bin(std::ceil(t0 / config.duration * n), 0, last);
    bins.end = clamp_bin(std::ceil((t0 + dt) / config.duration * n), 0, last);
    return bins;
}

BinRange map_freq_bins(double f0, double f1, const SynthConfig& config) {
    if (!(f0 > 0.0) || !(f1 > 0.0)) {
        throw DomainError(fmt::format("frequency bins need f0 > 0 and f1 > 0 (got {}, {})", f0, f1));
    }
    const auto n = static_cast<double>(config.n_f);
    const std::size_t last = config.n_f - 1;
    BinRange bins;
    bins.start = clamp_bin(std::ceil(f0 / config.f_max * n), 1, last);
    // The offset bracket is read as round-to-nearest (half away from zero).
    bins.end = clamp_bin(std::round(f1 / config.f_max * n), 1, last);
    return bins;
}

double chirp_center_bin(ChirpType type, const BinRange& time_bins, const BinRange& freq_bins,
                        std::size_t t_b) {
    const double tau = time_bins.end == time_bins.start
                           ? 0.0
                           : static_cast<double>(t_b - time_bins.start) /
                                 static_cast<double>(time_bins.end - time_bins.start);
    const auto fs = static_cast<double>(freq_bins.start);
    const auto fe = static_cast<double>(freq_bins.end);
    if (type == ChirpType::Linear) {
        return fs + (fe - fs) * tau;
    }
    return fs * std::pow(fe / fs, tau);
}

void render_chirp(Spectrogram& spec, const ChirpParams& params, const SynthConfig& config) {
    validate_params(params, config);
    if (spec.n_f() != config.n_f || spec.n_t() != config.n_t) {
        throw ShapeError(fmt::format("spectrogram is {}x{}, config expects {}x{}", spec.n_f(),
                                     spec.n_t(), config.n_f, config.n_t));
    }
    const BinRange tb = map_time_bins(params.t0, params.dt, config);
    const BinRange fb = map_freq_bins(params.f0, params.f1, config);
    const double denom = 2.0 * config.sigma_spread * config.sigma_spread;
    for (std::size_t t = tb.start; t <= tb.end; ++t) {
        const double center = chirp_center_bin(params.type, tb, fb, t);
        for (std::size_t f = 0; f < spec.n_f(); ++f) {
            const double d = static_cast<double>(f) - center;
            spec.at(f, t) += std::exp(-d * d / denom);
        }
    }
}

void add_noise_with_level(Spectrogram& spec, RandomState& rng, double eta) {
    for (double& v : spec.values()) {
        v += eta * rng.normal();
    }
}

double add_noise(Spectrogram& spec, RandomState& rng, const SynthConfig& config) {
    const double eta = rng.uniform(config.noise_low, config.noise_high);
    add_noise_with_level(spec, rng, eta);
    return eta;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) {
        return {1.0};
    }
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        const auto x = static_cast<double>(i);
        taps[static_cast<std::size_t>(i + radius)] = std::exp(-x * x / (2.0 * sigma * sigma));
    }
    const double total = std::accumulate(taps.begin(), taps.end(), 0.0);
    for (double& w : taps) {
        w /= total;
    }
    return taps;
}

Spectrogram gaussian_smooth(const Spectrogram& spec, double sigma_filter) {
    if (!(sigma_filter >= 0.0)) {
        throw ConfigError(fmt::format("sigma_filter must be >= 0 (got {})", sigma_filter));
    }
    if (sigma_filter == 0.0) {
        return spec;
    }
    const std::vector<double> taps = gaussian_kernel(sigma_filter);
    const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
    const auto rows = static_cast<std::ptrdiff_t>(spec.n_f());
    const auto cols = static_cast<std::ptrdiff_t>(spec.n_t());

    Spectrogram along_time(spec.n_f(), spec.n_t());
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        for (std::ptrdiff_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                acc += taps[static_cast<std::size_t>(k + radius)] *
                       spec.at(static_cast<std::size_t>(r), reflect_index(c + k, cols));
            }
            along_time.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
        }
    }
    Spectrogram out(spec.n_f(), spec.n_t());
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        for (std::ptrdiff_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                acc += taps[static_cast<std::size_t>(k + radius)] *
                       along_time.at(reflect_index(r + k, rows), static_cast<std::size_t>(c));
            }
            out.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
        }
    }
    return out;
}

GrayImage to_image(const Spectrogram& spec) {
    GrayImage img;
    img.width = spec.n_t();
    img.height = spec.n_f();
    img.channels = 1;
    img.pixels.assign(img.width * img.height, 0);

    double lo = 0.0;
    double hi = 0.0;
    bool first = true;
    for (double v : spec.values()) {
        const double c = std::max(v, 0.0);
        lo = first ? c : std::min(lo, c);
        hi = first ? c : std::max(hi, c);
        first = false;
    }
    const double range = hi - lo;
    if (!(range > 0.0)) {
        return img;
    }
    for (std::size_t f = 0; f < spec.n_f(); ++f) {
        const std::size_t row = spec.n_f() - 1 - f;
        for (std::size_t t = 0; t < spec.n_t(); ++t) {
            const double scaled = (std::max(spec.at(f, t), 0.0) - lo) / range * 255.0;
            img.pixels[row * img.width + t] =
                static_cast<std::uint8_t>(std::clamp(std::lround(scaled), 0L, 255L));
        }
    }
    return img;
}

SynthSample synthesize_sample(const SynthConfig& config, std::uint64_t index) {
    config.validate();
    RandomState rng = RandomState::for_stream(config.seed, index);
    SynthSample sample;
    sample.params = sample_chirp_params(config, rng);
    Spectrogram spec = init_spectrogram(config);
    render_chirp(spec, sample.params, config);
    sample.eta = add_noise(spec, rng, config);
    sample.spectrogram = gaussian_smooth(spec, config.sigma_filter);
    return sample;
}

std::string format_label_row(const ChirpParams& p) {
    return fmt::format("{},{},{},{},{}", p.t0, p.f0, p.f1, p.dt, to_string(p.type));
}

GenerationManifest generate_dataset(const SynthConfig& config, std::size_t count,
                                    const std::filesystem::path& output_dir) {
    config.validate();
    if (count < 1) {
        throw ConfigError("count must be >= 1 (got 0)");
    }
    std::error_code ec;
    std::filesystem::create_directories(output_dir, ec);
    if (ec) {
        throw IoError(fmt::format("cannot create output directory {}: {}", output_dir.string(),
                                  ec.message()));
    }

    GenerationManifest manifest;
    manifest.output_dir = output_dir;
    manifest.config = config;
    manifest.count = count;
    manifest.labels = output_dir / "labels.csv";
    manifest.images.reserve(count);

    std::vector<ChirpParams> rows;
    rows.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const SynthSample sample = synthesize_sample(config, i);
        const auto path = output_dir / fmt::format("spectrogram_{}.png", i);
        try {
            write_png(path, to_image(sample.spectrogram));
        } catch (const IoError& e) {
            throw IoError(fmt::format("{} (wrote {} of {} images)", e.what(), i, count));
        }
        manifest.images.push_back(path);
        rows.push_back(sample.params);
    }

    std::ofstream csv(manifest.labels, std::ios::binary);
    csv << kLabelsHeader << '\n';
    for (const ChirpParams& p : rows) {
        csv << format_label_row(p) << '\n';
    }
    csv.close();
    if (!csv) {
        throw IoError(fmt::format("cannot write {} ({} images written)", manifest.labels.string(),
                                  count));
    }

    nlohmann::ordered_json meta;
    meta["tool"] = "chirploc";
    meta["version"] = std::string(kVersion);
    meta["layout_version"] = kLayoutVersion;
    meta["count"] = count;
    meta["seed"] = config.seed;
    meta["image_orientation"] = "row 0 = highest frequency bin; width = n_t, height = n_f";
    meta["image_scaling"] = "negatives clipped to 0, per-image min-max to [0, 255], 8-bit gray";
    meta["config"] = {{"n_f", config.n_f},
                      {"n_t", config.n_t},
                      {"duration", config.duration},
                      {"f_max", config.f_max},
                      {"sigma_spread", config.sigma_spread},
                      {"noise_low", config.noise_low},
                      {"noise_high", config.noise_high},
                      {"sigma_filter", config.sigma_filter},
                      {"seed", config.seed}};
    std::ofstream mf(output_dir / "manifest.json", std::ios::binary);
    mf << meta.dump(2) << '\n';
    if (!mf) {
        throw IoError("cannot write manifest.json in " + output_dir.string());
    }
    return manifest;
}

}  // namespace chirploc
