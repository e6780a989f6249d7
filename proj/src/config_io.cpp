// SPDX-License-Identifier: Apache-2.0

#include "chirploc/config_io.hpp"

#include <fmt/format.h>

#include <fstream>
#include <functional>
#include <map>
#include <string>

#include "chirploc/errors.hpp"

namespace chirploc {

namespace {

using Setter = std::function<void(const nlohmann::json&)>;

template <typename V>
Setter bind(V& field) {
    return [&field](const nlohmann::json& v) { field = v.get<V>(); };
}

void apply_fields(const nlohmann::json& j, std::string_view section, const std::map<std::string, Setter>& fields) {
    if (!j.is_object()) {
        throw ConfigError(fmt::format("section '{}' must be an object", section));
    }
    for (const auto& [key, value] : j.items()) {
        const auto it = fields.find(key);
        if (it == fields.end()) {
            throw ConfigError(fmt::format("unknown key '{}.{}'", section, key));
        }
        try {
            it->second(value);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(fmt::format("key '{}.{}' has the wrong type: {}", section, key, e.what()));
        }
    }
}

}  // namespace

nlohmann::ordered_json to_json(const SynthConfig& c) {
    nlohmann::ordered_json j;
    j["n_f"] = c.n_f;
    j["n_t"] = c.n_t;
    j["duration"] = c.duration;
    j["f_max"] = c.f_max;
    j["sigma_spread"] = c.sigma_spread;
    j["noise_low"] = c.noise_low;
    j["noise_high"] = c.noise_high;
    j["sigma_filter"] = c.sigma_filter;
    j["seed"] = c.seed;
    return j;
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["image_size"] = c.image_size;
    j["patch_size"] = c.patch_size;
    j["embed_dim"] = c.embed_dim;
    j["num_layers"] = c.num_layers;
    j["num_heads"] = c.num_heads;
    j["ffn_dim"] = c.ffn_dim;
    j["lora_rank"] = c.lora_rank;
    j["lora_alpha"] = c.lora_alpha;
    j["head_dims"] = c.head_dims;
    j["dropout_p"] = c.dropout_p;
    j["use_cls_token"] = c.use_cls_token;
    j["use_pooler"] = c.use_pooler;
    j["layer_norm_eps"] = c.layer_norm_eps;
    return j;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["epochs_max"] = c.epochs_max;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["weight_decay"] = c.weight_decay;
    j["scheduler_factor"] = c.scheduler_factor;
    j["scheduler_patience"] = c.scheduler_patience;
    j["early_stop_patience"] = c.early_stop_patience;
    j["improvement_tol"] = c.improvement_tol;
    j["seed"] = c.seed;
    j["mode"] = std::string(to_string(c.mode));
    j["test_fraction"] = c.test_fraction;
    j["split_seed"] = c.split_seed;
    j["stats_from_train_only"] = c.stats_from_train_only;
    j["eval_batch_size"] = c.eval_batch_size;
    return j;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["synth"] = to_json(c.synth);
    j["model"] = to_json(c.model);
    j["train"] = to_json(c.train);
    return j;
}

void apply_json(SynthConfig& c, const nlohmann::json& j) {
    apply_fields(j, "synth",
                 {{"n_f", bind(c.n_f)},
                  {"n_t", bind(c.n_t)},
                  {"duration", bind(c.duration)},
                  {"f_max", bind(c.f_max)},
                  {"sigma_spread", bind(c.sigma_spread)},
                  {"noise_low", bind(c.noise_low)},
                  {"noise_high", bind(c.noise_high)},
                  {"sigma_filter", bind(c.sigma_filter)},
                  {"seed", bind(c.seed)}});
}

void apply_json(ModelConfig& c, const nlohmann::json& j) {
    apply_fields(j, "model",
                 {{"image_size", bind(c.image_size)},
                  {"patch_size", bind(c.patch_size)},
                  {"embed_dim", bind(c.embed_dim)},
                  {"num_layers", bind(c.num_layers)},
                  {"num_heads", bind(c.num_heads)},
                  {"ffn_dim", bind(c.ffn_dim)},
                  {"lora_rank", bind(c.lora_rank)},
                  {"lora_alpha", bind(c.lora_alpha)},
                  {"head_dims", bind(c.head_dims)},
                  {"dropout_p", bind(c.dropout_p)},
                  {"use_cls_token", bind(c.use_cls_token)},
                  {"use_pooler", bind(c.use_pooler)},
                  {"layer_norm_eps", bind(c.layer_norm_eps)}});
}

void apply_json(TrainConfig& c, const nlohmann::json& j) {
    apply_fields(j, "train",
                 {{"epochs_max", bind(c.epochs_max)},
                  {"batch_size", bind(c.batch_size)},
                  {"lr", bind(c.lr)},
                  {"beta1", bind(c.beta1)},
                  {"beta2", bind(c.beta2)},
                  {"adam_eps", bind(c.adam_eps)},
                  {"weight_decay", bind(c.weight_decay)},
                  {"scheduler_factor", bind(c.scheduler_factor)},
                  {"scheduler_patience", bind(c.scheduler_patience)},
                  {"early_stop_patience", bind(c.early_stop_patience)},
                  {"improvement_tol", bind(c.improvement_tol)},
                  {"seed", bind(c.seed)},
                  {"mode", [&c](const nlohmann::json& v) { c.mode = parse_train_mode(v.get<std::string>()); }},
                  {"test_fraction", bind(c.test_fraction)},
                  {"split_seed", bind(c.split_seed)},
                  {"stats_from_train_only", bind(c.stats_from_train_only)},
                  {"eval_batch_size", bind(c.eval_batch_size)}});
}

void apply_json(RunConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("run configuration must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "synth") {
            apply_json(c.synth, value);
        } else if (key == "model") {
            apply_json(c.model, value);
        } else if (key == "train") {
            apply_json(c.train, value);
        } else {
            throw ConfigError(fmt::format("unknown section '{}' (expected synth, model, train)", key));
        }
    }
}

void RunConfig::validate() const {
    synth.validate();
    model.validate();
    train.validate();
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(fmt::format("config file {} is not valid JSON: {}", path.string(), e.what()));
    }
    RunConfig c;
    apply_json(c, j);
    return c;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
    std::ofstream out(path, std::ios::binary);
    out << to_json(c).dump(2) << '\n';
    if (!out) {
        throw IoError("cannot write config echo " + path.string());
    }
}

}  // namespace chirploc
