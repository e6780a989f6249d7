// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "chirploc/dataset.hpp"
#include "chirploc/errors.hpp"
#include "chirploc/synth.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace chirploc;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_SUITE("synth") {
    TEST_CASE("init_spectrogram shapes and bounds") {
        SynthConfig c;
        c.n_f = 4;
        c.n_t = 3;
        const Spectrogram s = init_spectrogram(c);
        CHECK(s.n_f() == 4);
        CHECK(s.n_t() == 3);
        CHECK(s.sum() == 0.0);
        CHECK(init_spectrogram(SynthConfig{}).values().size() == 128 * 128);
        c.n_f = 1;
        c.n_t = 5;
        CHECK_THROWS_AS(init_spectrogram(c), ConfigError);
    }

    TEST_CASE("config validation names the bound") {
        SynthConfig c;
        c.noise_low = 0.5;
        c.noise_high = 0.1;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = SynthConfig{};
        c.sigma_spread = 0.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = SynthConfig{};
        c.sigma_filter = -1.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }

    TEST_CASE("sample_chirp_params respects the window and is balanced") {
        const SynthConfig c;
        RandomState rng(123);
        std::size_t linear = 0;
        for (int i = 0; i < 10000; ++i) {
            const ChirpParams p = sample_chirp_params(c, rng);
            CHECK(p.t0 >= 0.0);
            CHECK(p.t0 <= 0.75 * c.duration);
            CHECK(p.t0 + p.dt <= c.duration);
            CHECK(p.dt >= 0.1 * c.duration);
            CHECK(p.f0 >= 0.05 * c.f_max);
            CHECK(p.f1 <= c.f_max);
            linear += p.type == ChirpType::Linear ? 1 : 0;
        }
        CHECK(linear >= 4700);
        CHECK(linear <= 5300);

        RandomState a(5);
        RandomState b(5);
        const ChirpParams pa = sample_chirp_params(c, a);
        const ChirpParams pb = sample_chirp_params(c, b);
        CHECK(pa.t0 == pb.t0);
        CHECK(pa.f1 == pb.f1);
    }

    TEST_CASE("linear chirp waveform") {
        CHECK(linear_chirp_value(0.0, 3.0, 7.0, 2.0) == 0.0);
        CHECK(linear_chirp_value(0.5, 1.0, 3.0, 1.0) == doctest::Approx(std::sin(kTwoPi * 0.75)).epsilon(1e-12));
        CHECK_THROWS_AS(linear_chirp_value(1.5, 1.0, 3.0, 1.0), DomainError);
        CHECK_THROWS_AS(linear_chirp_value(-0.1, 1.0, 3.0, 1.0), DomainError);
    }

    TEST_CASE("exponential chirp waveform") {
        CHECK(exponential_chirp_value(0.0, 10.0, 100.0, 1.0) == 0.0);
        CHECK(exponential_growth_factor(10.0, 100.0, 1.0) == doctest::Approx(10.0));
        const double k = 10.0;
        const double t = 0.3;
        const double expect = std::sin(kTwoPi * 10.0 * (std::pow(k, t) - 1.0) / std::log(k));
        CHECK(std::abs(exponential_chirp_value(t, 10.0, 100.0, 1.0) - expect) < 1e-12);
        CHECK_THROWS_AS(exponential_chirp_value(0.1, 0.0, 5.0, 1.0), DomainError);
        CHECK_THROWS_AS(exponential_chirp_value(0.1, 5.0, -1.0, 1.0), DomainError);
    }

    TEST_CASE("pure-tone limit on a 1000-point grid") {
        const double f = 7.3;
        const double tc = 2.0;
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const double t = tc * static_cast<double>(i) / 999.0;
            const double tone = std::sin(kTwoPi * f * t);
            worst = std::max(worst, std::abs(exponential_chirp_value(t, f, f, tc) - tone));
            worst = std::max(worst, std::abs(linear_chirp_value(t, f, f, tc) - tone));
            worst = std::max(worst, std::abs(exponential_chirp_value(t, f, f, tc) - linear_chirp_value(t, f, f, tc)));
        }
        CHECK(worst < 1e-9);
    }

    TEST_CASE("time and frequency bin mapping") {
        const SynthConfig c;
        BinRange r = map_time_bins(30.0, 15.0, c);
        CHECK(r.start == 64);
        CHECK(r.end == 96);
        r = map_time_bins(0.0, 60.0, c);
        CHECK(r.start == 0);
        CHECK(r.end == 127);
        r = map_time_bins(0.1, 0.1, c);
        CHECK(r.start == 1);
        CHECK(r.end == 1);
        CHECK_THROWS_AS(map_time_bins(50.0, 20.0, c), DomainError);

        CHECK(map_freq_bins(50.0, 25.1, c).start == 64);
        CHECK(map_freq_bins(50.0, 25.1, c).end == 32);
        CHECK(map_freq_bins(100.0, 100.0, c).start == 127);
        CHECK(map_freq_bins(100.0, 100.0, c).end == 127);
        CHECK(map_freq_bins(0.01, 0.01, c).start == 1);
        CHECK(map_freq_bins(0.01, 0.01, c).end == 1);
        CHECK_THROWS_AS(map_freq_bins(0.0, 10.0, c), DomainError);
    }

    TEST_CASE("gaussian spreading weights") {
        SynthConfig c;
        c.n_f = 40;
        c.n_t = 40;
        // f0 = f1 maps to a constant center row, so every column peaks there.
        ChirpParams p{0.0, 25.0, 25.0, 60.0, ChirpType::Linear};
        Spectrogram s = init_spectrogram(c);
        render_chirp(s, p, c);
        const std::size_t fb = map_freq_bins(25.0, 25.0, c).start;
        CHECK(s.at(fb, 5) == doctest::Approx(1.0));
        CHECK(s.at(fb + 1, 5) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
        CHECK(s.at(fb - 1, 5) == doctest::Approx(0.1353352832366127).epsilon(1e-12));

        BinRange t{10, 20};
        BinRange f{10, 20};
        CHECK(chirp_center_bin(ChirpType::Linear, t, f, 15) == doctest::Approx(15.0));
        CHECK(chirp_center_bin(ChirpType::Exponential, t, f, 15) == doctest::Approx(10.0 * std::sqrt(2.0)));
        BinRange single{7, 7};
        CHECK(chirp_center_bin(ChirpType::Linear, single, f, 7) == doctest::Approx(10.0));
    }

    TEST_CASE("render matches the brute-force renderer on 200 random chirps") {
        SynthConfig c;
        RandomState rng(2024);
        double worst = 0.0;
        for (int i = 0; i < 200; ++i) {
            const ChirpParams p = sample_chirp_params(c, rng);
            Spectrogram s = init_spectrogram(c);
            render_chirp(s, p, c);
            const auto ref = oracle::brute_force_render(p, c);
            for (std::size_t k = 0; k < ref.size(); ++k) {
                worst = std::max(worst, std::abs(ref[k] - s.values()[k]));
            }
        }
        CHECK(worst < 1e-9);
    }

    TEST_CASE("render never decreases an entry") {
        SynthConfig c;
        RandomState rng(9);
        Spectrogram s = init_spectrogram(c);
        add_noise_with_level(s, rng, 0.3);
        const auto before = s.values();
        render_chirp(s, sample_chirp_params(c, rng), c);
        for (std::size_t k = 0; k < before.size(); ++k) {
            REQUIRE(s.values()[k] >= before[k]);
        }
    }

    TEST_CASE("chirp geometry: argmax row follows the rounded center") {
        SynthConfig c;
        RandomState rng(77);
        for (int trial = 0; trial < 20; ++trial) {
            ChirpParams p = sample_chirp_params(c, rng);
            p.type = ChirpType::Linear;
            Spectrogram s = init_spectrogram(c);
            render_chirp(s, p, c);
            const BinRange tb = map_time_bins(p.t0, p.dt, c);
            const BinRange fb = map_freq_bins(p.f0, p.f1, c);
            for (std::size_t t = tb.start; t <= tb.end; ++t) {
                const double centre = chirp_center_bin(ChirpType::Linear, tb, fb, t);
                // Exact half-way centres tie between two rows; skip them.
                if (std::abs(centre - std::floor(centre) - 0.5) < 1e-9) {
                    continue;
                }
                std::size_t best = 0;
                for (std::size_t f = 1; f < c.n_f; ++f) {
                    if (s.at(f, t) > s.at(best, t)) {
                        best = f;
                    }
                }
                REQUIRE(best == static_cast<std::size_t>(std::lround(centre)));
            }
        }
    }

    TEST_CASE("noise moments at a fixed level") {
        SynthConfig c;
        c.n_f = 1000;
        c.n_t = 1000;
        Spectrogram s = init_spectrogram(c);
        RandomState rng(31337);
        add_noise_with_level(s, rng, 0.2);
        double sum = 0.0;
        double sq = 0.0;
        for (double v : s.values()) {
            sum += v;
            sq += v * v;
        }
        const double n = static_cast<double>(s.values().size());
        const double mean = sum / n;
        const double sd = std::sqrt(sq / n - mean * mean);
        CHECK(std::abs(mean) <= 0.001);
        CHECK(std::abs(sd - 0.2) <= 0.002);
    }

    TEST_CASE("noise level draws stay in range; zero range is the identity") {
        SynthConfig c;
        c.n_f = 2;
        c.n_t = 2;
        RandomState rng(4);
        for (int i = 0; i < 10000; ++i) {
            Spectrogram s = init_spectrogram(c);
            const double eta = add_noise(s, rng, c);
            REQUIRE(eta >= 0.09);
            REQUIRE(eta <= 0.3);
        }
        c.noise_low = 0.0;
        c.noise_high = 0.0;
        Spectrogram s = init_spectrogram(c);
        s.at(1, 1) = 3.0;
        CHECK(add_noise(s, rng, c) == 0.0);
        CHECK(s.at(1, 1) == 3.0);
        CHECK(s.at(0, 0) == 0.0);
    }

    TEST_CASE("gaussian smoothing") {
        const auto k = gaussian_kernel(1.0);
        CHECK(k.size() == 7);
        double ks = 0.0;
        for (double v : k) {
            ks += v;
        }
        CHECK(ks == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(k[3] > k[2]);

        Spectrogram flat(20, 30);
        for (double& v : flat.values()) {
            v = 2.5;
        }
        const Spectrogram fs = gaussian_smooth(flat, 1.0);
        for (double v : fs.values()) {
            REQUIRE(v == doctest::Approx(2.5).epsilon(1e-12));
        }

        SynthConfig c;
        RandomState rng(8);
        Spectrogram s = init_spectrogram(c);
        render_chirp(s, sample_chirp_params(c, rng), c);
        add_noise(s, rng, c);
        const Spectrogram same = gaussian_smooth(s, 0.0);
        CHECK(same.values() == s.values());
        for (double sigma : {0.5, 1.0, 2.5}) {
            const Spectrogram sm = gaussian_smooth(s, sigma);
            CHECK(std::abs(sm.sum() - s.sum()) <= 1e-6 * std::abs(s.sum()));
        }

        Spectrogram impulse(41, 41);
        impulse.at(20, 20) = 1.0;
        const Spectrogram ir = gaussian_smooth(impulse, 1.0);
        CHECK(ir.sum() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(ir.at(20, 20) == doctest::Approx(k[3] * k[3]).epsilon(1e-12));
        CHECK(ir.at(21, 19) == doctest::Approx(k[4] * k[2]).epsilon(1e-12));
        double peak = 0.0;
        for (double v : ir.values()) {
            peak = std::max(peak, v);
        }
        CHECK(peak == ir.at(20, 20));
    }

    TEST_CASE("image export orientation and scaling") {
        Spectrogram s(3, 2);
        s.at(0, 0) = -1.0;  // clipped to 0
        s.at(2, 1) = 4.0;
        s.at(1, 0) = 2.0;
        const GrayImage img = to_image(s);
        CHECK(img.width == 2);
        CHECK(img.height == 3);
        CHECK(img.at(0, 1) == 255);  // highest frequency on top
        CHECK(img.at(2, 0) == 0);
        CHECK(img.at(1, 0) == 128);
    }

    TEST_CASE("generate_dataset writes images, labels and a manifest deterministically") {
        test_support::TempDir a;
        test_support::TempDir b;
        SynthConfig c;
        c.seed = 99;
        const GenerationManifest m = generate_dataset(c, 5, a.path());
        generate_dataset(c, 5, b.path());
        CHECK(m.count == 5);
        CHECK(m.images.size() == 5);
        CHECK(std::filesystem::exists(a.path() / "manifest.json"));
        CHECK(slurp(a.path() / "labels.csv") == slurp(b.path() / "labels.csv"));
        for (int i = 0; i < 5; ++i) {
            const auto name = "spectrogram_" + std::to_string(i) + ".png";
            const GrayImage ia = read_png(a.path() / name);
            const GrayImage ib = read_png(b.path() / name);
            CHECK(ia.width == 128);
            CHECK(ia.height == 128);
            CHECK(ia.pixels == ib.pixels);
        }
        const auto params = read_labels_csv(a.path() / "labels.csv");
        REQUIRE(params.size() == 5);
        for (const auto& p : params) {
            CHECK_NOTHROW(validate_params(p, c));
        }
        CHECK(slurp(a.path() / "labels.csv").rfind(std::string(kLabelsHeader) + "\n", 0) == 0);

        test_support::TempDir d;
        CHECK_THROWS_AS(generate_dataset(c, 0, d.path()), ConfigError);
    }

    TEST_CASE("labels re-parse to the generated parameters") {
        SynthConfig c;
        c.seed = 3;
        for (std::uint64_t i = 0; i < 1000; ++i) {
            const SynthSample s = synthesize_sample(c, i);
            REQUIRE_NOTHROW(validate_params(s.params, c));
        }
        test_support::TempDir dir;
        generate_dataset(c, 3, dir.path());
        const auto params = read_labels_csv(dir.path() / "labels.csv");
        for (std::uint64_t i = 0; i < 3; ++i) {
            const SynthSample s = synthesize_sample(c, i);
            CHECK(params[i].t0 == s.params.t0);
            CHECK(params[i].f0 == s.params.f0);
            CHECK(params[i].f1 == s.params.f1);
            CHECK(params[i].dt == s.params.dt);
            CHECK(params[i].type == s.params.type);
        }
    }
}
