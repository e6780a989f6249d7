// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "chirploc/checkpoint.hpp"
#include "chirploc/dataset.hpp"
#include "chirploc/errors.hpp"
#include "chirploc/evaluator.hpp"
#include "chirploc/synth.hpp"
#include "chirploc/version.hpp"

namespace py = pybind11;
using namespace chirploc;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Spectrogram& s) {
    py::array_t<double> out({s.n_f(), s.n_t()});
    std::copy(s.values().begin(), s.values().end(), out.mutable_data());
    return out;
}

Spectrogram from_numpy(const F64Array& a) {
    if (a.ndim() != 2) {
        throw UsageError("expected a 2-D array");
    }
    Spectrogram s(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), s.values().begin());
    return s;
}

LabelMatrix labels_from_numpy(const F64Array& a) {
    if (a.ndim() != 2 || a.shape(1) != static_cast<py::ssize_t>(kNumTargets)) {
        throw UsageError("expected an N x 3 array");
    }
    LabelMatrix m;
    m.rows.resize(static_cast<std::size_t>(a.shape(0)));
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        for (std::size_t j = 0; j < kNumTargets; ++j) {
            m.rows[i][j] = a.at(i, j);
        }
    }
    return m;
}

py::array_t<double> labels_to_numpy(const LabelMatrix& m) {
    py::array_t<double> out({m.size(), kNumTargets});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < kNumTargets; ++j) {
            w(i, j) = m.rows[i][j];
        }
    }
    return out;
}

GrayImage image_from_numpy(const U8Array& a) {
    if (a.ndim() != 2) {
        throw UsageError("expected a 2-D uint8 image");
    }
    GrayImage g;
    g.height = static_cast<std::size_t>(a.shape(0));
    g.width = static_cast<std::size_t>(a.shape(1));
    g.pixels.assign(a.data(), a.data() + a.size());
    return g;
}

// Loads a checkpoint once and predicts physical-unit labels for images.
class CheckpointPredictor {
public:
    explicit CheckpointPredictor(const std::filesystem::path& checkpoint,
                       const std::optional<std::filesystem::path>& stats_path)
        : ckpt_(load_checkpoint(checkpoint)), model_(ckpt_.config, 0) {
        model_.load_state(ckpt_.state);
        if (stats_path) {
            stats_ = NormalizationStats::load(*stats_path);
        } else if (ckpt_.stats) {
            stats_ = *ckpt_.stats;
        } else {
            throw IoError("checkpoint carries no normalization stats; pass stats_path");
        }
    }

    py::array_t<double> predict(const std::vector<U8Array>& arrays) const {
        std::vector<GrayImage> images;
        images.reserve(arrays.size());
        for (const auto& a : arrays) {
            images.push_back(image_from_numpy(a));
        }
        std::vector<std::size_t> idx(images.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            idx[i] = i;
        }
        LabelMatrix pred;
        {
            py::gil_scoped_release release;
            const ImageBatch batch = make_image_batch(images, idx, ckpt_.config.image_size);
            pred = denormalize_predictions(make_predictor(model_)(batch, idx), stats_);
        }
        return labels_to_numpy(pred);
    }

    const ModelConfig& config() const { return ckpt_.config; }

private:
    Checkpoint ckpt_;
    VitRegressor<float> model_;
    NormalizationStats stats_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "chirploc native core";
    m.attr("__version__") = std::string(kVersion);

    auto base = py::register_exception<Error>(m, "ChirplocError");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DomainError>(m, "DomainError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<NormalizationError>(m, "NormalizationError", base.ptr());
    py::register_exception<MetricError>(m, "MetricError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<UsageError>(m, "UsageError", base.ptr());

    py::class_<SynthConfig>(m, "SynthConfig")
        .def(py::init<>())
        .def_readwrite("n_f", &SynthConfig::n_f)
        .def_readwrite("n_t", &SynthConfig::n_t)
        .def_readwrite("duration", &SynthConfig::duration)
        .def_readwrite("f_max", &SynthConfig::f_max)
        .def_readwrite("sigma_spread", &SynthConfig::sigma_spread)
        .def_readwrite("noise_low", &SynthConfig::noise_low)
        .def_readwrite("noise_high", &SynthConfig::noise_high)
        .def_readwrite("sigma_filter", &SynthConfig::sigma_filter)
        .def_readwrite("seed", &SynthConfig::seed)
        .def("validate", &SynthConfig::validate);

    py::class_<ChirpParams>(m, "ChirpParams")
        .def(py::init([](double t0, double f0, double f1, double dt, const std::string& type) {
                 return ChirpParams{t0, f0, f1, dt, parse_chirp_type(type)};
             }),
             py::arg("t0"), py::arg("f0"), py::arg("f1"), py::arg("dt"), py::arg("type") = "linear")
        .def_readwrite("t0", &ChirpParams::t0)
        .def_readwrite("f0", &ChirpParams::f0)
        .def_readwrite("f1", &ChirpParams::f1)
        .def_readwrite("dt", &ChirpParams::dt)
        .def_property(
            "type", [](const ChirpParams& p) { return std::string(to_string(p.type)); },
            [](ChirpParams& p, const std::string& t) { p.type = parse_chirp_type(t); })
        .def("__repr__", [](const ChirpParams& p) {
            return "ChirpParams(" + format_label_row(p) + ")";
        });

    m.def(
        "synthesize",
        [](const SynthConfig& config, std::uint64_t index) {
            SynthSample s = synthesize_sample(config, index);
            return py::make_tuple(s.params, s.eta, to_numpy(s.spectrogram));
        },
        py::arg("config"), py::arg("index"),
        "Returns (params, noise level, n_f x n_t spectrogram) for sample `index`.");
    m.def(
        "render",
        [](const ChirpParams& params, const SynthConfig& config) {
            Spectrogram s = init_spectrogram(config);
            render_chirp(s, params, config);
            return to_numpy(s);
        },
        py::arg("params"), py::arg("config"), "Noise-free, unsmoothed chirp rendering.");
    m.def(
        "gaussian_smooth", [](const F64Array& a, double sigma) { return to_numpy(gaussian_smooth(from_numpy(a), sigma)); },
        py::arg("spectrogram"), py::arg("sigma"));
    m.def(
        "to_image",
        [](const F64Array& a) {
            const GrayImage g = to_image(from_numpy(a));
            py::array_t<std::uint8_t> out({g.height, g.width});
            std::copy(g.pixels.begin(), g.pixels.end(), out.mutable_data());
            return out;
        },
        py::arg("spectrogram"));
    m.def("generate_dataset",
          [](const SynthConfig& config, std::size_t count, const std::filesystem::path& out) {
              return generate_dataset(config, count, out).count;
          },
          py::arg("config"), py::arg("count"), py::arg("output_dir"));

    m.def(
        "compute_stats",
        [](const F64Array& y) {
            const NormalizationStats s = compute_stats(labels_from_numpy(y));
            return py::make_tuple(std::vector<double>(s.mu.begin(), s.mu.end()),
                                  std::vector<double>(s.sigma.begin(), s.sigma.end()));
        },
        py::arg("labels"), "Returns (mu, sigma) per target.");
    auto stats_from = [](const std::vector<double>& mu, const std::vector<double>& sigma) {
        if (mu.size() != kNumTargets || sigma.size() != kNumTargets) {
            throw UsageError("mu and sigma must have 3 entries");
        }
        NormalizationStats s;
        std::copy(mu.begin(), mu.end(), s.mu.begin());
        std::copy(sigma.begin(), sigma.end(), s.sigma.begin());
        return s;
    };
    m.def(
        "normalize_labels",
        [stats_from](const F64Array& y, const std::vector<double>& mu, const std::vector<double>& sigma) {
            return labels_to_numpy(normalize_labels(labels_from_numpy(y), stats_from(mu, sigma)));
        },
        py::arg("labels"), py::arg("mu"), py::arg("sigma"));
    m.def(
        "denormalize_predictions",
        [stats_from](const F64Array& y, const std::vector<double>& mu, const std::vector<double>& sigma) {
            return labels_to_numpy(denormalize_predictions(labels_from_numpy(y), stats_from(mu, sigma)));
        },
        py::arg("predictions"), py::arg("mu"), py::arg("sigma"));
    m.def(
        "split_dataset", [](std::size_t n, double f, std::uint64_t seed) {
            const DatasetSplit s = split_dataset(n, f, seed);
            return py::make_tuple(s.train, s.test);
        },
        py::arg("n"), py::arg("test_fraction") = 0.2, py::arg("seed") = 42);

    m.def(
        "pearson_r", [](const std::vector<double>& p, const std::vector<double>& t) { return pearson_r(p, t); },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "sample_skewness", [](const std::vector<double>& x) { return sample_skewness(x); }, py::arg("x"));
    m.def(
        "format_prediction_report",
        [](const F64Array& pred, const F64Array& truth) {
            return format_prediction_report(labels_from_numpy(pred), labels_from_numpy(truth));
        },
        py::arg("pred"), py::arg("truth"));

    py::class_<CheckpointPredictor>(m, "Predictor")
        .def(py::init<const std::filesystem::path&, const std::optional<std::filesystem::path>&>(),
             py::arg("checkpoint"), py::arg("stats_path") = py::none())
        .def("predict", &CheckpointPredictor::predict, py::arg("images"),
             "Predicts (t0, f0, f1) in physical units for a list of 2-D uint8 images.")
        .def_property_readonly("image_size", [](const CheckpointPredictor& p) { return p.config().image_size; });
}
