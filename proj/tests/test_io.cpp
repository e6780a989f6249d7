// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "chirploc/checkpoint.hpp"
#include "chirploc/config_io.hpp"
#include "chirploc/errors.hpp"
#include "chirploc/image_io.hpp"
#include "support/tempdir.hpp"

using namespace chirploc;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

Checkpoint sample_checkpoint(Precision precision) {
    VitRegressor<float> m(ModelConfig{}, 5);
    Checkpoint c;
    c.config = m.config();
    c.precision = precision;
    c.state = m.state();
    c.mode = TrainMode::LoraFinetune;
    c.stats = NormalizationStats{{1.0, 2.0, 3.0}, {0.5, 0.25, 4.0}};
    c.metadata = {{"best_epoch", 3}};
    return c;
}

}  // namespace

TEST_SUITE("io") {
    TEST_CASE("png round trip") {
        test_support::TempDir dir;
        GrayImage img;
        img.width = 5;
        img.height = 3;
        for (int i = 0; i < 15; ++i) {
            img.pixels.push_back(static_cast<std::uint8_t>(i * 17));
        }
        write_png(dir.path() / "x.png", img);
        const GrayImage back = read_png(dir.path() / "x.png");
        CHECK(back.width == 5);
        CHECK(back.height == 3);
        CHECK(back.channels == 1);
        CHECK(back.pixels == img.pixels);
        CHECK_THROWS_AS(read_png(dir.path() / "missing.png"), IoError);
        write_bytes(dir.path() / "bad.png", "not a png");
        CHECK_THROWS_AS(read_png(dir.path() / "bad.png"), IoError);
    }

    TEST_CASE("checkpoint round trip in both precisions") {
        test_support::TempDir dir;
        for (Precision p : {Precision::Float32, Precision::Float64}) {
            const Checkpoint c = sample_checkpoint(p);
            save_checkpoint(dir.path() / "m.ckpt", c);
            const Checkpoint back = load_checkpoint(dir.path() / "m.ckpt");
            CHECK(back.precision == p);
            CHECK(back.mode == TrainMode::LoraFinetune);
            CHECK(back.config.embed_dim == c.config.embed_dim);
            REQUIRE(back.stats.has_value());
            CHECK(back.stats->sigma == c.stats->sigma);
            CHECK(back.metadata.at("best_epoch") == 3);
            REQUIRE(back.state.size() == c.state.size());
            for (const auto& [name, rec] : c.state) {
                CHECK(back.state.at(name).values == rec.values);
                CHECK(back.state.at(name).shape == rec.shape);
                CHECK(back.state.at(name).role == rec.role);
            }
            VitRegressor<float> m(back.config, 0);
            CHECK_NOTHROW(m.load_state(back.state));
        }
    }

    TEST_CASE("header records the trainable partition") {
        test_support::TempDir dir;
        save_checkpoint(dir.path() / "m.ckpt", sample_checkpoint(Precision::Float32));
        const std::string bytes = read_bytes(dir.path() / "m.ckpt");
        CHECK(bytes.substr(0, 8) == "CHIRPLOC");
        std::uint64_t len = 0;
        std::memcpy(&len, bytes.data() + 12, 8);
        const auto header = nlohmann::json::parse(bytes.substr(20, len));
        for (const auto& t : header.at("tensors")) {
            CHECK(t.at("trainable").get<bool>() == (t.at("role").get<std::string>() != "backbone"));
        }
    }

    TEST_CASE("corrupted, truncated and foreign files are rejected") {
        test_support::TempDir dir;
        const fs::path path = dir.path() / "m.ckpt";
        save_checkpoint(path, sample_checkpoint(Precision::Float32));
        const std::string good = read_bytes(path);

        std::string flipped = good;
        flipped[good.size() / 2] = static_cast<char>(flipped[good.size() / 2] ^ 0x40);
        write_bytes(path, flipped);
        CHECK_THROWS_AS(load_checkpoint(path), IoError);

        write_bytes(path, good.substr(0, good.size() - 100));
        CHECK_THROWS_AS(load_checkpoint(path), IoError);

        std::string foreign = good;
        foreign[0] = 'X';
        write_bytes(path, foreign);
        CHECK_THROWS_AS(load_checkpoint(path), IoError);

        write_bytes(path, "");
        CHECK_THROWS_AS(load_checkpoint(path), IoError);
        CHECK_THROWS_AS(load_checkpoint(dir.path() / "absent.ckpt"), IoError);
    }

    TEST_CASE("run config round trip and overrides") {
        test_support::TempDir dir;
        RunConfig c;
        c.synth.n_f = 64;
        c.model.num_layers = 2;
        c.train.lr = 3e-4;
        c.train.mode = TrainMode::LoraFinetune;
        save_run_config(dir.path() / "c.json", c);
        const RunConfig back = load_run_config(dir.path() / "c.json");
        CHECK(back.synth.n_f == 64);
        CHECK(back.model.num_layers == 2);
        CHECK(back.train.lr == 3e-4);
        CHECK(back.train.mode == TrainMode::LoraFinetune);
        CHECK(back.train.batch_size == TrainConfig{}.batch_size);

        write_bytes(dir.path() / "partial.json", R"({"train": {"epochs_max": 4}})");
        const RunConfig partial = load_run_config(dir.path() / "partial.json");
        CHECK(partial.train.epochs_max == 4);
        CHECK(partial.model.embed_dim == 64);
    }

    TEST_CASE("config errors name the offending key") {
        test_support::TempDir dir;
        auto expect_error = [&](const std::string& body, const std::string& needle) {
            write_bytes(dir.path() / "c.json", body);
            try {
                load_run_config(dir.path() / "c.json");
                FAIL("expected ConfigError for " << body);
            } catch (const ConfigError& e) {
                CHECK(std::string(e.what()).find(needle) != std::string::npos);
            }
        };
        expect_error(R"({"train": {"learning_rate": 1}})", "train.learning_rate");
        expect_error(R"({"optimizer": {}})", "optimizer");
        expect_error(R"({"model": {"embed_dim": "wide"}})", "model.embed_dim");
        expect_error("{ not json", "not valid JSON");
        CHECK_THROWS_AS(load_run_config(dir.path() / "nope.json"), ConfigError);
    }
}
