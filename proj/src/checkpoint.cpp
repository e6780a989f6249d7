// SPDX-License-Identifier: Apache-2.0

#include "chirploc/checkpoint.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "chirploc/config_io.hpp"
#include "chirploc/errors.hpp"

namespace chirploc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'H', 'I', 'R', 'P', 'L', 'O', 'C'};
constexpr std::uint32_t kContainerVersion = 1;

template <typename V>
void put(std::string& buf, V v) {
    char bytes[sizeof(V)];
    std::memcpy(bytes, &v, sizeof(V));
    buf.append(bytes, sizeof(V));
}

template <typename V>
V get(const std::string& buf, std::size_t& pos, const std::filesystem::path& path) {
    if (pos + sizeof(V) > buf.size()) {
        throw IoError(fmt::format("checkpoint {} is truncated", path.string()));
    }
    V v;
    std::memcpy(&v, buf.data() + pos, sizeof(V));
    pos += sizeof(V);
    return v;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

ParamRole parse_role(const std::string& s) {
    for (ParamRole r : {ParamRole::Backbone, ParamRole::Lora, ParamRole::Pooler, ParamRole::Head}) {
        if (to_string(r) == s) {
            return r;
        }
    }
    throw IoError(fmt::format("unknown parameter role '{}'", s));
}

}  // namespace

std::string_view to_string(Precision p) {
    return p == Precision::Float32 ? "float32" : "float64";
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::size_t elem = ckpt.precision == Precision::Float32 ? 4 : 8;
    nlohmann::ordered_json header;
    header["format"] = "chirploc-checkpoint";
    header["model_config"] = to_json(ckpt.config);
    header["precision"] = std::string(to_string(ckpt.precision));
    header["mode"] = std::string(to_string(ckpt.mode));
    if (ckpt.stats) {
        header["stats"] = {{"mu", ckpt.stats->mu}, {"sigma", ckpt.stats->sigma}};
    }
    header["metadata"] = ckpt.metadata;

    std::string payload;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (const auto& [name, rec] : ckpt.state) {
        const bool trainable = ckpt.mode == TrainMode::Full || rec.role != ParamRole::Backbone;
        tensors.push_back({{"name", name},
                           {"shape", rec.shape},
                           {"role", std::string(to_string(rec.role))},
                           {"trainable", trainable},
                           {"offset", payload.size()},
                           {"nbytes", rec.values.size() * elem}});
        for (double v : rec.values) {
            if (elem == 4) {
                put(payload, static_cast<float>(v));
            } else {
                put(payload, v);
            }
        }
    }
    header["tensors"] = std::move(tensors);

    const std::string head = header.dump();
    std::string buf(kMagic, sizeof(kMagic));
    put(buf, kContainerVersion);
    put(buf, static_cast<std::uint64_t>(head.size()));
    buf += head;
    buf += payload;
    put(buf, crc_of(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.close();
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("checkpoint not found: " + path.string());
    }
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) + 4 + 8 + 4 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IoError(fmt::format("{} is not a chirploc checkpoint", path.string()));
    }
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    if (crc_of(buf.data(), buf.size() - 4) != stored_crc) {
        throw IoError(fmt::format("checkpoint {} failed its CRC check (corrupted)", path.string()));
    }
    std::size_t pos = sizeof(kMagic);
    const auto version = get<std::uint32_t>(buf, pos, path);
    if (version != kContainerVersion) {
        throw IoError(fmt::format("checkpoint {} has unsupported version {}", path.string(), version));
    }
    const auto head_len = get<std::uint64_t>(buf, pos, path);
    if (pos + head_len > buf.size() - 4) {
        throw IoError(fmt::format("checkpoint {} is truncated", path.string()));
    }
    const std::size_t payload_start = pos + head_len;
    const std::size_t payload_len = buf.size() - 4 - payload_start;

    Checkpoint ckpt;
    try {
        const auto header = nlohmann::json::parse(buf.substr(pos, head_len));
        apply_json(ckpt.config, header.at("model_config"));
        const std::string precision = header.at("precision").get<std::string>();
        if (precision != "float32" && precision != "float64") {
            throw IoError(fmt::format("unknown precision '{}'", precision));
        }
        ckpt.precision = precision == "float32" ? Precision::Float32 : Precision::Float64;
        ckpt.mode = parse_train_mode(header.at("mode").get<std::string>());
        if (header.contains("stats")) {
            NormalizationStats s;
            s.mu = header["stats"].at("mu").get<LabelRow>();
            s.sigma = header["stats"].at("sigma").get<LabelRow>();
            ckpt.stats = s;
        }
        ckpt.metadata = header.value("metadata", nlohmann::json::object());
        const std::size_t elem = ckpt.precision == Precision::Float32 ? 4 : 8;
        for (const auto& t : header.at("tensors")) {
            TensorRecord rec;
            rec.shape = t.at("shape").get<ad::Shape>();
            rec.role = parse_role(t.at("role").get<std::string>());
            const auto offset = t.at("offset").get<std::size_t>();
            const auto nbytes = t.at("nbytes").get<std::size_t>();
            const std::size_t count = ad::numel(rec.shape);
            if (nbytes != count * elem || offset + nbytes > payload_len) {
                throw IoError(fmt::format("tensor '{}' has an inconsistent extent",
                                          t.at("name").get<std::string>()));
            }
            rec.values.resize(count);
            std::size_t p = payload_start + offset;
            for (std::size_t i = 0; i < count; ++i) {
                rec.values[i] = elem == 4 ? static_cast<double>(get<float>(buf, p, path)) : get<double>(buf, p, path);
            }
            ckpt.state.emplace(t.at("name").get<std::string>(), std::move(rec));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("checkpoint {} has a malformed header: {}", path.string(), e.what()));
    } catch (const ConfigError& e) {
        throw IoError(fmt::format("checkpoint {} has an invalid config: {}", path.string(), e.what()));
    }
    return ckpt;
}

}  // namespace chirploc
