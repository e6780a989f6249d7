// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "chirploc/model.hpp"
#include "chirploc/synth.hpp"
#include "chirploc/trainer.hpp"

namespace chirploc {

/// Unified run configuration: one JSON document with "synth", "model" and
/// "train" sections. Missing keys keep their defaults; unknown keys are errors.
struct RunConfig {
    SynthConfig synth;
    ModelConfig model;
    TrainConfig train;

    void validate() const;
};

nlohmann::ordered_json to_json(const SynthConfig& c);
nlohmann::ordered_json to_json(const ModelConfig& c);
nlohmann::ordered_json to_json(const TrainConfig& c);
nlohmann::ordered_json to_json(const RunConfig& c);

/// Overlay `j` onto `c`. Throws ConfigError naming any unknown or mistyped key.
void apply_json(SynthConfig& c, const nlohmann::json& j);
void apply_json(ModelConfig& c, const nlohmann::json& j);
void apply_json(TrainConfig& c, const nlohmann::json& j);
void apply_json(RunConfig& c, const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

}  // namespace chirploc
