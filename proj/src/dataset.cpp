// SPDX-License-Identifier: Apache-2.0

#include "chirploc/dataset.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "chirploc/errors.hpp"
#include "chirploc/random.hpp"

namespace chirploc {

std::vector<double> LabelMatrix::column(std::size_t j) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const LabelRow& r : rows) {
        out.push_back(r.at(j));
    }
    return out;
}

LabelMatrix LabelMatrix::select(std::span<const std::size_t> indices) const {
    LabelMatrix out;
    out.rows.reserve(indices.size());
    for (std::size_t i : indices) {
        out.rows.push_back(rows.at(i));
    }
    return out;
}

LabelMatrix labels_from_params(std::span<const ChirpParams> params) {
    LabelMatrix m;
    m.rows.reserve(params.size());
    for (const ChirpParams& p : params) {
        m.rows.push_back({p.t0, p.f0, p.f1});
    }
    return m;
}

NormalizationStats compute_stats(const LabelMatrix& labels) {
    const std::size_t n = labels.size();
    if (n < 2) {
        throw NormalizationError(fmt::format("need at least 2 label rows, got {}", n));
    }
    NormalizationStats s;
    for (std::size_t j = 0; j < kNumTargets; ++j) {
        double mu = 0.0;
        for (const LabelRow& r : labels.rows) {
            if (!std::isfinite(r[j])) {
                throw NormalizationError(fmt::format("non-finite value in column '{}' ({})", kTargetKeys[j], kTargetNames[j]));
            }
            mu += r[j];
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (const LabelRow& r : labels.rows) {
            var += (r[j] - mu) * (r[j] - mu);
        }
        var /= static_cast<double>(n);
        if (!(var > 0.0)) {
            throw NormalizationError(
                fmt::format("column '{}' ({}) is constant; its standard deviation is zero", kTargetKeys[j],
                            kTargetNames[j]));
        }
        s.mu[j] = mu;
        s.sigma[j] = std::sqrt(var);
    }
    return s;
}

LabelMatrix normalize_labels(const LabelMatrix& labels, const NormalizationStats& stats) {
    LabelMatrix out = labels;
    for (LabelRow& r : out.rows) {
        for (std::size_t j = 0; j < kNumTargets; ++j) {
            r[j] = (r[j] - stats.mu[j]) / stats.sigma[j];
        }
    }
    return out;
}

LabelMatrix denormalize_predictions(const LabelMatrix& pred, const NormalizationStats& stats) {
    LabelMatrix out = pred;
    for (LabelRow& r : out.rows) {
        for (std::size_t j = 0; j < kNumTargets; ++j) {
            r[j] = r[j] * stats.sigma[j] + stats.mu[j];
        }
    }
    return out;
}

void NormalizationStats::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json j;
    j["columns"] = kTargetKeys;
    j["names"] = kTargetNames;
    j["mu"] = mu;
    j["sigma"] = sigma;
    std::ofstream out(path, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError("cannot write normalization stats to " + path.string());
    }
}

NormalizationStats NormalizationStats::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("normalization stats file not found: " + path.string());
    }
    NormalizationStats s;
    try {
        const auto j = nlohmann::json::parse(in);
        s.mu = j.at("mu").get<LabelRow>();
        s.sigma = j.at("sigma").get<LabelRow>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("malformed normalization stats {}: {}", path.string(), e.what()));
    }
    for (std::size_t k = 0; k < kNumTargets; ++k) {
        if (!(s.sigma[k] > 0.0) || !std::isfinite(s.mu[k])) {
            throw NormalizationError(
                fmt::format("stats in {} have invalid entry for '{}'", path.string(), kTargetKeys[k]));
        }
    }
    return s;
}

DatasetSplit split_dataset(std::size_t n, double test_fraction, std::uint64_t seed) {
    if (n < 2) {
        throw ConfigError(fmt::format("split needs n >= 2 (got {})", n));
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError(fmt::format("test_fraction must lie in (0, 1) (got {})", test_fraction));
    }
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    if (n_test == n) {
        throw ConfigError(fmt::format("test_fraction {} on {} samples leaves an empty train set", test_fraction, n));
    }
    RandomState rng(seed);
    std::vector<std::size_t> order = shuffled_indices(n, rng);
    DatasetSplit split;
    split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    return split;
}

std::vector<double> preprocess_image(const GrayImage& image, std::size_t size) {
    if (image.empty()) {
        throw UsageError("preprocess_image: empty image");
    }
    if (image.channels != 1 && image.channels != 3) {
        throw UsageError(fmt::format("preprocess_image: unsupported channel count {}", image.channels));
    }
    if (size == 0) {
        throw UsageError("preprocess_image: target size must be > 0");
    }
    const std::size_t plane = size * size;
    std::vector<double> out(3 * plane);
    const double sy = static_cast<double>(image.height) / static_cast<double>(size);
    const double sx = static_cast<double>(image.width) / static_cast<double>(size);
    const auto max_y = static_cast<double>(image.height - 1);
    const auto max_x = static_cast<double>(image.width - 1);

    for (std::size_t r = 0; r < size; ++r) {
        const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, max_y);
        const auto y0 = static_cast<std::size_t>(y);
        const std::size_t y1 = std::min(y0 + 1, image.height - 1);
        const double wy = y - static_cast<double>(y0);
        for (std::size_t c = 0; c < size; ++c) {
            const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, max_x);
            const auto x0 = static_cast<std::size_t>(x);
            const std::size_t x1 = std::min(x0 + 1, image.width - 1);
            const double wx = x - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const std::size_t src_ch = image.channels == 1 ? 0 : ch;
                const double top = (1.0 - wx) * image.at(y0, x0, src_ch) + wx * image.at(y0, x1, src_ch);
                const double bot = (1.0 - wx) * image.at(y1, x0, src_ch) + wx * image.at(y1, x1, src_ch);
                const double v = ((1.0 - wy) * top + wy * bot) / 255.0;
                out[ch * plane + r * size + c] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return out;
}

ImageBatch make_image_batch(std::span<const GrayImage> images, std::span<const std::size_t> indices,
                            std::size_t size) {
    ImageBatch b;
    b.batch = indices.size();
    b.size = size;
    b.values.reserve(b.batch * 3 * size * size);
    for (std::size_t i : indices) {
        if (i >= images.size()) {
            throw UsageError(fmt::format("image index {} out of range ({} images)", i, images.size()));
        }
        const std::vector<double> one = preprocess_image(images[i], size);
        b.values.insert(b.values.end(), one.begin(), one.end());
    }
    return b;
}

namespace {

double parse_double(std::string_view field, const std::filesystem::path& path, std::size_t line) {
    double v = 0.0;
    const auto* end = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(field.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        throw IoError(fmt::format("{}:{}: cannot parse number '{}'", path.string(), line, field));
    }
    return v;
}

}  // namespace

std::vector<ChirpParams> read_labels_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("labels file not found: " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw IoError("labels file is empty: " + path.string());
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != kLabelsHeader) {
        throw IoError(fmt::format("{}: expected header '{}', got '{}'", path.string(), kLabelsHeader, line));
    }
    std::vector<ChirpParams> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string_view> fields;
        std::string_view rest = line;
        for (std::size_t pos = rest.find(','); pos != std::string_view::npos; pos = rest.find(',')) {
            fields.push_back(rest.substr(0, pos));
            rest.remove_prefix(pos + 1);
        }
        fields.push_back(rest);
        if (fields.size() != 5) {
            throw IoError(fmt::format("{}:{}: expected 5 fields, got {}", path.string(), line_no, fields.size()));
        }
        ChirpParams p;
        p.t0 = parse_double(fields[0], path, line_no);
        p.f0 = parse_double(fields[1], path, line_no);
        p.f1 = parse_double(fields[2], path, line_no);
        p.dt = parse_double(fields[3], path, line_no);
        try {
            p.type = parse_chirp_type(fields[4]);
        } catch (const DomainError& e) {
            throw IoError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        }
        rows.push_back(p);
    }
    return rows;
}

ChirpDataset load_dataset(const std::filesystem::path& dir) {
    ChirpDataset ds;
    ds.params = read_labels_csv(dir / "labels.csv");
    if (ds.params.empty()) {
        throw IoError("labels file has no rows: " + (dir / "labels.csv").string());
    }
    ds.images.reserve(ds.params.size());
    for (std::size_t i = 0; i < ds.params.size(); ++i) {
        ds.images.push_back(read_png(dir / fmt::format("spectrogram_{}.png", i)));
    }
    return ds;
}

}  // namespace chirploc
