// SPDX-License-Identifier: Apache-2.0

#include "chirploc/model.hpp"

#include <fmt/format.h>

#include <cmath>

#include "chirploc/errors.hpp"
#include "chirploc/random.hpp"

namespace chirploc {

ModelConfig ModelConfig::paper_scale() {
    ModelConfig c;
    c.image_size = 224;
    c.patch_size = 16;
    c.embed_dim = 768;
    c.num_layers = 12;
    c.num_heads = 1;
    c.ffn_dim = 3072;
    c.head_dims = {256, 128};
    return c;
}

void ModelConfig::validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
        throw ConfigError(fmt::format("image_size ({}) must be a positive multiple of patch_size ({})",
                                      image_size, patch_size));
    }
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
        throw ConfigError(fmt::format("embed_dim ({}) must be divisible by num_heads ({})", embed_dim,
                                      num_heads));
    }
    if (num_layers == 0) {
        throw ConfigError("num_layers must be >= 1");
    }
    if (ffn_dim == 0) {
        throw ConfigError("ffn_dim must be >= 1");
    }
    if (lora_rank == 0) {
        throw ConfigError("lora_rank must be >= 1");
    }
    if (!(lora_alpha > 0.0)) {
        throw ConfigError(fmt::format("lora_alpha must be > 0 (got {})", lora_alpha));
    }
    if (dropout_p != 0.0) {
        throw ConfigError(fmt::format("dropout_p must be 0 (got {})", dropout_p));
    }
    if (!(layer_norm_eps > 0.0)) {
        throw ConfigError("layer_norm_eps must be > 0");
    }
}

std::size_t ModelConfig::num_patches() const {
    const std::size_t side = image_size / patch_size;
    return side * side;
}

std::size_t ModelConfig::sequence_length() const {
    return num_patches() + (use_cls_token ? 1 : 0);
}

std::array<std::size_t, 2> ModelConfig::resolved_head_dims() const {
    std::array<std::size_t, 2> dims = head_dims;
    const std::array<double, 2> paper{256.0, 128.0};
    // Narrower ReLU layers tend to die early in training and stall at the mean.
    const std::array<std::size_t, 2> floor{64, 32};
    for (std::size_t i = 0; i < 2; ++i) {
        if (dims[i] == 0) {
            const double scaled = std::round(paper[i] * static_cast<double>(embed_dim) / 768.0);
            dims[i] = std::max(floor[i], static_cast<std::size_t>(scaled));
        }
    }
    return dims;
}

std::string_view to_string(ParamRole role) {
    switch (role) {
        case ParamRole::Backbone: return "backbone";
        case ParamRole::Lora: return "lora";
        case ParamRole::Pooler: return "pooler";
        case ParamRole::Head: return "head";
    }
    return "backbone";
}

std::string_view to_string(TrainMode mode) {
    return mode == TrainMode::Full ? "full" : "lora_finetune";
}

TrainMode parse_train_mode(std::string_view text) {
    if (text == "full") {
        return TrainMode::Full;
    }
    if (text == "lora_finetune") {
        return TrainMode::LoraFinetune;
    }
    throw ConfigError(fmt::format("mode must be 'full' or 'lora_finetune' (got '{}')", text));
}

std::vector<double> unfold_patches(const ImageBatch& images, std::size_t patch_size) {
    const std::size_t s = images.size;
    if (patch_size == 0 || s % patch_size != 0) {
        throw ShapeError(fmt::format("image size {} is not a multiple of patch size {}", s, patch_size));
    }
    if (images.values.size() != images.batch * 3 * s * s) {
        throw ShapeError(fmt::format("image batch holds {} values, expected {} x 3 x {} x {}",
                                     images.values.size(), images.batch, s, s));
    }
    const std::size_t grid = s / patch_size;
    const std::size_t cols = 3 * patch_size * patch_size;
    std::vector<double> out(images.batch * grid * grid * cols);
    std::size_t k = 0;
    for (std::size_t b = 0; b < images.batch; ++b) {
        const double* img = images.values.data() + b * 3 * s * s;
        for (std::size_t py = 0; py < grid; ++py) {
            for (std::size_t px = 0; px < grid; ++px) {
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    for (std::size_t y = 0; y < patch_size; ++y) {
                        const double* row = img + ch * s * s + (py * patch_size + y) * s + px * patch_size;
                        for (std::size_t x = 0; x < patch_size; ++x) {
                            out[k++] = row[x];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
ad::Tensor<T> Linear<T>::forward(const ad::Tensor<T>& x) const {
    return ad::add(ad::matmul(x, ad::transpose(weight)), bias);
}

template <typename T>
ad::Tensor<T> LoraLinear<T>::forward(const ad::Tensor<T>& x) const {
    ad::Tensor<T> y = base.forward(x);
    if (!enabled) {
        return y;
    }
    const ad::Tensor<T> down = ad::matmul(x, ad::transpose(lora_a));
    const ad::Tensor<T> up = ad::matmul(down, ad::transpose(lora_b));
    return ad::add(y, ad::scale(up, scale));
}

template <typename T>
std::vector<T> LoraLinear<T>::merged_weight() const {
    const std::size_t out = base.weight.size(0);
    const std::size_t in = base.weight.size(1);
    const std::size_t r = lora_a.size(0);
    std::vector<T> w(base.weight.values().begin(), base.weight.values().end());
    if (!enabled) {
        return w;
    }
    const auto a = lora_a.values();
    const auto b = lora_b.values();
    for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < in; ++i) {
            T delta = T(0);
            for (std::size_t k = 0; k < r; ++k) {
                delta += b[o * r + k] * a[k * in + i];
            }
            w[o * in + i] += scale * delta;
        }
    }
    return w;
}

template <typename T>
ad::Tensor<T> LayerNormAffine<T>::forward(const ad::Tensor<T>& x) const {
    return ad::add(ad::mul(ad::layer_norm(x, eps), gamma), beta);
}

template <typename T>
ad::Tensor<T> EncoderLayer<T>::attention(const ad::Tensor<T>& z) const {
    if (z.rank() != 3) {
        throw ShapeError(fmt::format("attention expects B x S x D, got {}", ad::shape_str(z.shape())));
    }
    const std::size_t d = z.size(2);
    if (d != query.base.weight.size(1)) {
        throw ShapeError(fmt::format("attention input width {} does not match layer width {}", d,
                                     query.base.weight.size(1)));
    }
    const ad::Tensor<T> q = query.forward(z);
    const ad::Tensor<T> k = key.forward(z);
    const ad::Tensor<T> v = value.forward(z);
    const std::size_t dk = d / num_heads;
    const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));

    auto head = [&](const ad::Tensor<T>& qh, const ad::Tensor<T>& kh, const ad::Tensor<T>& vh) {
        const ad::Tensor<T> scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dk);
        return ad::matmul(ad::softmax_lastdim(scores), vh);
    };
    ad::Tensor<T> mixed;
    if (num_heads == 1) {
        mixed = head(q, k, v);
    } else {
        std::vector<ad::Tensor<T>> heads;
        heads.reserve(num_heads);
        for (std::size_t h = 0; h < num_heads; ++h) {
            heads.push_back(head(ad::slice(q, 2, h * dk, dk), ad::slice(k, 2, h * dk, dk),
                                 ad::slice(v, 2, h * dk, dk)));
        }
        mixed = ad::concat(heads, 2);
    }
    return out_proj.forward(mixed);
}

template <typename T>
ad::Tensor<T> EncoderLayer<T>::forward(const ad::Tensor<T>& x) const {
    const ad::Tensor<T> h = ad::add(x, attention(ln_attn.forward(x)));
    const ad::Tensor<T> ffn = fc2.forward(ad::gelu(fc1.forward(ln_ffn.forward(h))));
    return ad::add(h, ffn);
}

namespace {

template <typename T>
std::vector<T> trunc_normal(std::size_t n, double std_dev, RandomState& rng) {
    std::vector<T> v(n);
    for (T& x : v) {
        double z = rng.normal();
        while (std::abs(z) > 2.0) {
            z = rng.normal();
        }
        x = static_cast<T>(z * std_dev);
    }
    return v;
}

template <typename T>
std::vector<T> normal(std::size_t n, double std_dev, RandomState& rng) {
    std::vector<T> v(n);
    for (T& x : v) {
        x = static_cast<T>(rng.normal() * std_dev);
    }
    return v;
}

template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, RandomState& rng) {
    return Linear<T>{ad::Tensor<T>::parameter({out, in}, trunc_normal<T>(out * in, 0.02, rng)),
                     ad::Tensor<T>::zeros({out}, true)};
}

template <typename T>
Linear<T> make_head_linear(std::size_t in, std::size_t out, RandomState& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    auto uniform = [&](std::size_t n) {
        std::vector<T> v(n);
        for (T& x : v) {
            x = static_cast<T>(rng.uniform(-bound, bound));
        }
        return v;
    };
    auto w = uniform(out * in);
    auto b = uniform(out);
    return Linear<T>{ad::Tensor<T>::parameter({out, in}, std::move(w)), ad::Tensor<T>::parameter({out}, std::move(b))};
}

template <typename T>
LayerNormAffine<T> make_layer_norm(std::size_t d, double eps) {
    return LayerNormAffine<T>{ad::Tensor<T>::full({d}, T(1), true), ad::Tensor<T>::zeros({d}, true),
                              static_cast<T>(eps)};
}

template <typename T>
LoraLinear<T> make_lora(std::size_t in, std::size_t out, const ModelConfig& c, RandomState& rng) {
    LoraLinear<T> l;
    l.base = make_linear<T>(in, out, rng);
    const std::size_t r = c.lora_rank;
    l.lora_a = ad::Tensor<T>::parameter({r, in}, normal<T>(r * in, 1.0 / static_cast<double>(r), rng));
    l.lora_b = ad::Tensor<T>::zeros({out, r}, true);
    l.scale = static_cast<T>(c.lora_scale());
    return l;
}

}  // namespace

template <typename T>
VitRegressor<T>::VitRegressor(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    RandomState rng(seed);
    const std::size_t d = config_.embed_dim;
    const std::size_t patch_in = 3 * config_.patch_size * config_.patch_size;

    patch_proj_ = make_linear<T>(patch_in, d, rng);
    register_parameter("embed.patch.weight", ParamRole::Backbone, patch_proj_.weight);
    register_parameter("embed.patch.bias", ParamRole::Backbone, patch_proj_.bias);
    if (config_.use_cls_token) {
        cls_token_ = ad::Tensor<T>::parameter({1, d}, trunc_normal<T>(d, 0.02, rng));
        register_parameter("embed.cls", ParamRole::Backbone, cls_token_);
    }
    const std::size_t seq = config_.sequence_length();
    pos_embed_ = ad::Tensor<T>::parameter({seq, d}, trunc_normal<T>(seq * d, 0.02, rng));
    register_parameter("embed.position", ParamRole::Backbone, pos_embed_);

    layers_.reserve(config_.num_layers);
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
        EncoderLayer<T> layer;
        layer.num_heads = config_.num_heads;
        layer.ln_attn = make_layer_norm<T>(d, config_.layer_norm_eps);
        layer.query = make_lora<T>(d, d, config_, rng);
        layer.key = make_linear<T>(d, d, rng);
        layer.value = make_lora<T>(d, d, config_, rng);
        layer.out_proj = make_linear<T>(d, d, rng);
        layer.ln_ffn = make_layer_norm<T>(d, config_.layer_norm_eps);
        layer.fc1 = make_linear<T>(d, config_.ffn_dim, rng);
        layer.fc2 = make_linear<T>(config_.ffn_dim, d, rng);

        const std::string p = fmt::format("encoder.{}.", i);
        register_parameter(p + "ln_attn.gamma", ParamRole::Backbone, layer.ln_attn.gamma);
        register_parameter(p + "ln_attn.beta", ParamRole::Backbone, layer.ln_attn.beta);
        register_parameter(p + "attn.query.weight", ParamRole::Backbone, layer.query.base.weight);
        register_parameter(p + "attn.query.bias", ParamRole::Backbone, layer.query.base.bias);
        register_parameter(p + "attn.query.lora_a", ParamRole::Lora, layer.query.lora_a);
        register_parameter(p + "attn.query.lora_b", ParamRole::Lora, layer.query.lora_b);
        register_parameter(p + "attn.key.weight", ParamRole::Backbone, layer.key.weight);
        register_parameter(p + "attn.key.bias", ParamRole::Backbone, layer.key.bias);
        register_parameter(p + "attn.value.weight", ParamRole::Backbone, layer.value.base.weight);
        register_parameter(p + "attn.value.bias", ParamRole::Backbone, layer.value.base.bias);
        register_parameter(p + "attn.value.lora_a", ParamRole::Lora, layer.value.lora_a);
        register_parameter(p + "attn.value.lora_b", ParamRole::Lora, layer.value.lora_b);
        register_parameter(p + "attn.out.weight", ParamRole::Backbone, layer.out_proj.weight);
        register_parameter(p + "attn.out.bias", ParamRole::Backbone, layer.out_proj.bias);
        register_parameter(p + "ln_ffn.gamma", ParamRole::Backbone, layer.ln_ffn.gamma);
        register_parameter(p + "ln_ffn.beta", ParamRole::Backbone, layer.ln_ffn.beta);
        register_parameter(p + "ffn.fc1.weight", ParamRole::Backbone, layer.fc1.weight);
        register_parameter(p + "ffn.fc1.bias", ParamRole::Backbone, layer.fc1.bias);
        register_parameter(p + "ffn.fc2.weight", ParamRole::Backbone, layer.fc2.weight);
        register_parameter(p + "ffn.fc2.bias", ParamRole::Backbone, layer.fc2.bias);
        layers_.push_back(std::move(layer));
    }

    final_ln_ = make_layer_norm<T>(d, config_.layer_norm_eps);
    register_parameter("encoder.final_ln.gamma", ParamRole::Backbone, final_ln_.gamma);
    register_parameter("encoder.final_ln.beta", ParamRole::Backbone, final_ln_.beta);

    if (config_.use_pooler) {
        pooler_ = make_linear<T>(d, d, rng);
        register_parameter("pooler.weight", ParamRole::Pooler, pooler_.weight);
        register_parameter("pooler.bias", ParamRole::Pooler, pooler_.bias);
    }

    const auto hd = config_.resolved_head_dims();
    head_[0] = make_head_linear<T>(d, hd[0], rng);
    head_[1] = make_head_linear<T>(hd[0], hd[1], rng);
    head_[2] = make_head_linear<T>(hd[1], kNumTargets, rng);
    for (std::size_t i = 0; i < head_.size(); ++i) {
        register_parameter(fmt::format("head.{}.weight", i), ParamRole::Head, head_[i].weight);
        register_parameter(fmt::format("head.{}.bias", i), ParamRole::Head, head_[i].bias);
    }
}

template <typename T>
void VitRegressor<T>::register_parameter(std::string name, ParamRole role, ad::Tensor<T> tensor) {
    params_.push_back(NamedParameter<T>{std::move(name), role, std::move(tensor)});
}

template <typename T>
ad::Tensor<T> VitRegressor<T>::patch_embed(const ImageBatch& images) const {
    if (images.size != config_.image_size) {
        throw ShapeError(fmt::format("model expects {}x{} images, got {}x{}", config_.image_size,
                                     config_.image_size, images.size, images.size));
    }
    const std::size_t m = config_.num_patches();
    const std::size_t cols = 3 * config_.patch_size * config_.patch_size;
    const std::vector<double> raw = unfold_patches(images, config_.patch_size);
    std::vector<T> cast(raw.begin(), raw.end());
    const auto patches = ad::Tensor<T>::constant({images.batch, m, cols}, std::move(cast));
    ad::Tensor<T> tokens = patch_proj_.forward(patches);
    if (config_.use_cls_token) {
        tokens = ad::concat<T>({ad::expand(cls_token_, images.batch), tokens}, 1);
    }
    return ad::add(tokens, pos_embed_);
}

template <typename T>
ad::Tensor<T> VitRegressor<T>::encode(const ad::Tensor<T>& tokens) const {
    ad::Tensor<T> x = tokens;
    for (const EncoderLayer<T>& layer : layers_) {
        x = layer.forward(x);
    }
    return final_ln_.forward(x);
}

template <typename T>
ad::Tensor<T> VitRegressor<T>::forward(const ImageBatch& images) const {
    if (images.batch == 0) {
        throw ShapeError("forward on an empty batch");
    }
    const ad::Tensor<T> hidden = encode(patch_embed(images));
    const std::size_t b = images.batch;
    const std::size_t d = config_.embed_dim;
    ad::Tensor<T> summary;
    if (config_.use_cls_token) {
        summary = ad::reshape(ad::slice(hidden, 1, 0, 1), {b, d});
    } else {
        const std::size_t seq = config_.sequence_length();
        const auto avg = ad::Tensor<T>::full({1, seq}, T(1) / static_cast<T>(seq));
        summary = ad::reshape(ad::matmul(ad::expand(avg, b), hidden), {b, d});
    }
    if (config_.use_pooler) {
        summary = ad::tanh(pooler_.forward(summary));
    }
    ad::Tensor<T> h = ad::relu(head_[0].forward(summary));
    h = ad::relu(head_[1].forward(h));
    return head_[2].forward(h);
}

template <typename T>
ad::Tensor<T> VitRegressor<T>::parameter(std::string_view name) const {
    for (const auto& p : params_) {
        if (p.name == name) {
            return p.tensor;
        }
    }
    throw UsageError(fmt::format("no parameter named '{}'", name));
}

template <typename T>
std::vector<NamedParameter<T>> VitRegressor<T>::trainable_parameters(TrainMode mode) const {
    std::vector<NamedParameter<T>> out;
    for (const auto& p : params_) {
        if (mode == TrainMode::Full || p.role != ParamRole::Backbone) {
            out.push_back(p);
        }
    }
    return out;
}

template <typename T>
std::size_t VitRegressor<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.tensor.numel();
    }
    return n;
}

template <typename T>
std::size_t VitRegressor<T>::parameter_count(TrainMode mode) const {
    std::size_t n = 0;
    for (const auto& p : trainable_parameters(mode)) {
        n += p.tensor.numel();
    }
    return n;
}

template <typename T>
void VitRegressor<T>::freeze_for(TrainMode mode) {
    for (auto& p : params_) {
        p.tensor.set_requires_grad(mode == TrainMode::Full || p.role != ParamRole::Backbone);
    }
}

template <typename T>
void VitRegressor<T>::zero_grad() {
    for (auto& p : params_) {
        p.tensor.zero_grad();
    }
}

template <typename T>
void VitRegressor<T>::set_lora_enabled(bool on) {
    for (auto& layer : layers_) {
        layer.query.enabled = on;
        layer.value.enabled = on;
    }
}

template <typename T>
void VitRegressor<T>::merge_lora() {
    for (auto& layer : layers_) {
        for (LoraLinear<T>* l : {&layer.query, &layer.value}) {
            if (!l->enabled) {
                continue;
            }
            const std::vector<T> merged = l->merged_weight();
            std::copy(merged.begin(), merged.end(), l->base.weight.mutable_values().begin());
            auto b = l->lora_b.mutable_values();
            std::fill(b.begin(), b.end(), T(0));
        }
    }
}

template <typename T>
StateDict VitRegressor<T>::state() const {
    StateDict out;
    for (const auto& p : params_) {
        TensorRecord rec;
        rec.shape = p.tensor.shape();
        rec.values.assign(p.tensor.values().begin(), p.tensor.values().end());
        rec.role = p.role;
        out.emplace(p.name, std::move(rec));
    }
    return out;
}

template <typename T>
void VitRegressor<T>::load_state(const StateDict& state) {
    for (auto& p : params_) {
        const auto it = state.find(p.name);
        if (it == state.end()) {
            throw UsageError(fmt::format("state is missing parameter '{}'", p.name));
        }
        if (it->second.shape != p.tensor.shape()) {
            throw ShapeError(fmt::format("parameter '{}' has shape {} in state, model expects {}", p.name,
                                         ad::shape_str(it->second.shape), ad::shape_str(p.tensor.shape())));
        }
        auto dst = p.tensor.mutable_values();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = static_cast<T>(it->second.values[i]);
        }
    }
}

template struct Linear<float>;
template struct Linear<double>;
template struct LoraLinear<float>;
template struct LoraLinear<double>;
template struct LayerNormAffine<float>;
template struct LayerNormAffine<double>;
template struct EncoderLayer<float>;
template struct EncoderLayer<double>;
template class VitRegressor<float>;
template class VitRegressor<double>;

}  // namespace chirploc
