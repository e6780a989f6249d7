// SPDX-License-Identifier: Apache-2.0

// Vision Transformer regressor with low-rank adapted query/value projections.
//
//   image B x 3 x S x S
//     -> unfold into (S/p)^2 patches, linear projection to D (a stride-p conv)
//     -> prepend CLS token, add position embeddings
//     -> L pre-norm encoder layers:
//          x += OutProj(Attention(LoRA_Q, K, LoRA_V)(LN1(x)))
//          x += FC2(GELU(FC1(LN2(x))))
//     -> final LayerNorm
//     -> CLS row [-> optional tanh pooler]
//     -> Linear(D, H1) ReLU Linear(H1, H2) ReLU Linear(H2, 3)

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "chirploc/autodiff.hpp"
#include "chirploc/dataset.hpp"

namespace chirploc {

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t patch_size = 16;
    std::size_t embed_dim = 64;
    std::size_t num_layers = 4;
    std::size_t num_heads = 1;
    std::size_t ffn_dim = 256;
    std::size_t lora_rank = 8;
    double lora_alpha = 8.0;
    /// Hidden widths of the regression head. Zero means "scale 256 and 128 by D/768,
    /// but no narrower than 64 and 32".
    std::array<std::size_t, 2> head_dims{0, 0};
    double dropout_p = 0.0;
    bool use_cls_token = true;
    /// Route the CLS representation through tanh(Linear) before the head.
    bool use_pooler = false;
    double layer_norm_eps = 1e-12;

    /// D = 768, L = 12, FFN 3072, image 224, head 256/128.
    static ModelConfig paper_scale();

    void validate() const;
    std::size_t num_patches() const;
    std::size_t sequence_length() const;
    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::array<std::size_t, 2> resolved_head_dims() const;
    double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }
};

enum class ParamRole { Backbone, Lora, Pooler, Head };
std::string_view to_string(ParamRole role);

enum class TrainMode { Full, LoraFinetune };
std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view text);

/// Precision-independent copy of every parameter, keyed by name.
struct TensorRecord {
    ad::Shape shape;
    std::vector<double> values;
    ParamRole role = ParamRole::Backbone;
};
using StateDict = std::map<std::string, TensorRecord>;

template <typename T>
struct NamedParameter {
    std::string name;
    ParamRole role;
    ad::Tensor<T> tensor;
};

template <typename T>
struct Linear {
    ad::Tensor<T> weight;  // out x in
    ad::Tensor<T> bias;    // out

    ad::Tensor<T> forward(const ad::Tensor<T>& x) const;
};

/// x -> W x + b + scale * B (A x). A is r x in, B is out x r.
template <typename T>
struct LoraLinear {
    Linear<T> base;
    ad::Tensor<T> lora_a;
    ad::Tensor<T> lora_b;
    T scale = T(1);
    bool enabled = true;

    ad::Tensor<T> forward(const ad::Tensor<T>& x) const;
    /// Dense W + scale * B A.
    std::vector<T> merged_weight() const;
};

template <typename T>
struct LayerNormAffine {
    ad::Tensor<T> gamma;
    ad::Tensor<T> beta;
    T eps = T(1e-12);

    ad::Tensor<T> forward(const ad::Tensor<T>& x) const;
};

template <typename T>
struct EncoderLayer {
    LayerNormAffine<T> ln_attn;
    LoraLinear<T> query;
    Linear<T> key;
    LoraLinear<T> value;
    Linear<T> out_proj;
    LayerNormAffine<T> ln_ffn;
    Linear<T> fc1;
    Linear<T> fc2;
    std::size_t num_heads = 1;

    /// Multi-head scaled dot-product attention followed by the output projection.
    ad::Tensor<T> attention(const ad::Tensor<T>& z) const;
    ad::Tensor<T> forward(const ad::Tensor<T>& x) const;
};

/// Rearranges B x 3 x S x S pixels into B x M x (3 p p) patch rows whose
/// column order (channel, row, col) matches a flattened conv kernel.
std::vector<double> unfold_patches(const ImageBatch& images, std::size_t patch_size);

template <typename T>
class VitRegressor {
public:
    /// Random initialization: truncated normal(0, 0.02) backbone weights, zero
    /// backbone biases, uniform(+-1/sqrt(fan_in)) head weights and biases, unit
    /// LayerNorm gains, normal(0, 1/r) LoRA A, zero LoRA B.
    VitRegressor(const ModelConfig& config, std::uint64_t seed);

    VitRegressor(const VitRegressor&) = delete;
    VitRegressor& operator=(const VitRegressor&) = delete;
    VitRegressor(VitRegressor&&) noexcept = default;
    VitRegressor& operator=(VitRegressor&&) noexcept = default;

    const ModelConfig& config() const { return config_; }

    /// B x S' x D token sequence (CLS first when enabled).
    ad::Tensor<T> patch_embed(const ImageBatch& images) const;
    /// Runs the encoder layers and the final LayerNorm.
    ad::Tensor<T> encode(const ad::Tensor<T>& tokens) const;
    /// B x 3 predictions in normalized label units.
    ad::Tensor<T> forward(const ImageBatch& images) const;

    std::vector<EncoderLayer<T>>& layers() { return layers_; }
    const std::vector<EncoderLayer<T>>& layers() const { return layers_; }

    const std::vector<NamedParameter<T>>& parameters() const { return params_; }
    ad::Tensor<T> parameter(std::string_view name) const;
    std::vector<NamedParameter<T>> trainable_parameters(TrainMode mode) const;
    std::size_t parameter_count() const;
    std::size_t parameter_count(TrainMode mode) const;

    /// Sets requires_grad to match the trainable partition of `mode`.
    void freeze_for(TrainMode mode);
    void zero_grad();

    void set_lora_enabled(bool on);
    /// Folds every adapter into its base weight and zeroes B.
    void merge_lora();

    StateDict state() const;
    /// Copies values from `state`; every parameter must be present with a matching shape.
    void load_state(const StateDict& state);

private:
    void register_parameter(std::string name, ParamRole role, ad::Tensor<T> tensor);

    ModelConfig config_;
    Linear<T> patch_proj_;
    ad::Tensor<T> cls_token_;
    ad::Tensor<T> pos_embed_;
    std::vector<EncoderLayer<T>> layers_;
    LayerNormAffine<T> final_ln_;
    Linear<T> pooler_;
    std::array<Linear<T>, 3> head_;
    std::vector<NamedParameter<T>> params_;
};

}  // namespace chirploc
