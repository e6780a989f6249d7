// SPDX-License-Identifier: Apache-2.0

// Checkpoint container layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "CHIRPLOC"
//   offset 8   u32       container version (1)
//   offset 12  u64       header length H
//   offset 20  H bytes   UTF-8 JSON header
//   ...        payload   tensor data, packed in header order
//   last 4     u32       CRC-32 of every preceding byte
//
// The JSON header holds "model_config", "precision" ("float32" | "float64"),
// optional "stats" {mu, sigma}, free-form "metadata", and "tensors": a list of
// {name, shape, role, trainable, offset, nbytes} where offset is relative to
// the start of the payload.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "chirploc/dataset.hpp"
#include "chirploc/model.hpp"

namespace chirploc {

enum class Precision { Float32, Float64 };
std::string_view to_string(Precision p);

struct Checkpoint {
    ModelConfig config;
    Precision precision = Precision::Float32;
    StateDict state;
    std::optional<NormalizationStats> stats;
    /// Parameters marked trainable; recorded per tensor in the header.
    TrainMode mode = TrainMode::Full;
    nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError on a missing, truncated or corrupted file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace chirploc
