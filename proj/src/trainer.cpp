// SPDX-License-Identifier: Apache-2.0

#include "chirploc/trainer.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <fstream>

#include "chirploc/errors.hpp"
#include "chirploc/evaluator.hpp"
#include "chirploc/random.hpp"

namespace chirploc {

void TrainConfig::validate() const {
    if (epochs_max < 1) {
        throw ConfigError("epochs_max must be >= 1");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (eval_batch_size < 1) {
        throw ConfigError("eval_batch_size must be >= 1");
    }
    if (!(lr > 0.0)) {
        throw ConfigError(fmt::format("lr must be > 0 (got {})", lr));
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError(fmt::format("betas must lie in [0, 1) (got {}, {})", beta1, beta2));
    }
    if (!(adam_eps > 0.0)) {
        throw ConfigError("adam_eps must be > 0");
    }
    if (!(weight_decay >= 0.0)) {
        throw ConfigError(fmt::format("weight_decay must be >= 0 (got {})", weight_decay));
    }
    if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0)) {
        throw ConfigError(fmt::format("scheduler_factor must lie in (0, 1) (got {})", scheduler_factor));
    }
    if (scheduler_patience < 1) {
        throw ConfigError("scheduler_patience must be >= 1");
    }
    if (early_stop_patience < 1) {
        throw ConfigError("early_stop_patience must be >= 1");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError(fmt::format("test_fraction must lie in (0, 1) (got {})", test_fraction));
    }
    if (!(improvement_tol >= 0.0)) {
        throw ConfigError("improvement_tol must be >= 0");
    }
}

template <typename T>
ad::Tensor<T> mse_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& target) {
    if (pred.shape() != target.shape() || pred.rank() != 2) {
        throw ShapeError(fmt::format("mse_loss needs equal B x K shapes, got {} and {}",
                                     ad::shape_str(pred.shape()), ad::shape_str(target.shape())));
    }
    const ad::Tensor<T> diff = ad::sub(pred, target);
    return ad::scale(ad::sum(ad::mul(diff, diff)), T(1) / static_cast<T>(pred.size(0)));
}

template <typename T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::size_t step, const AdamWConfig& c) {
    if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
        throw ShapeError("adamw_update: buffer sizes differ");
    }
    if (step < 1) {
        throw UsageError("adamw_update: step is 1-based");
    }
    const T lr = static_cast<T>(c.lr);
    const T b1 = static_cast<T>(c.beta1);
    const T b2 = static_cast<T>(c.beta2);
    const T eps = static_cast<T>(c.eps);
    const T decay = static_cast<T>(1.0 - c.lr * c.weight_decay);
    const T bc1 = static_cast<T>(1.0 - std::pow(c.beta1, static_cast<double>(step)));
    const T bc2 = static_cast<T>(1.0 - std::pow(c.beta2, static_cast<double>(step)));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const T g = grad[i];
        if (!std::isfinite(g)) {
            throw NumericError(fmt::format("non-finite gradient at element {} in AdamW", i));
        }
        theta[i] *= decay;
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T m_hat = m[i] / bc1;
        const T v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

template <typename T>
AdamW<T>::AdamW(std::vector<ad::Tensor<T>> params, const AdamWConfig& config)
    : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), T(0));
        v_.emplace_back(p.numel(), T(0));
    }
}

template <typename T>
void AdamW<T>::step() {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) {
            continue;
        }
        adamw_update<T>(p.mutable_values(), p.grad(), m_[i], v_[i], step_, config_);
    }
}

template <typename T>
void AdamW<T>::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

double lr_schedule_step(double current_lr, double val_loss, PlateauState& state, double factor,
                        std::size_t patience, double tol) {
    if (val_loss < state.best - tol) {
        state.best = val_loss;
        state.bad_epochs = 0;
        return current_lr;
    }
    if (++state.bad_epochs >= patience) {
        state.bad_epochs = 0;
        return current_lr * factor;
    }
    return current_lr;
}

StopDecision early_stop_check(std::span<const double> val_losses, std::size_t patience, double tol) {
    PlateauState s;
    for (double loss : val_losses) {
        if (loss < s.best - tol) {
            s.best = loss;
            s.bad_epochs = 0;
        } else {
            ++s.bad_epochs;
        }
    }
    return s.bad_epochs >= patience ? StopDecision::Stop : StopDecision::Continue;
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    out << "epoch,train_loss,test_loss,r_t0,r_f0,r_f1,lr,epoch_seconds\n";
    for (const EpochRecord& e : epochs) {
        out << fmt::format("{},{},{},{},{},{},{},{}\n", e.epoch, e.train_loss, e.test_loss, e.pearson[0],
                           e.pearson[1], e.pearson[2], e.lr, e.seconds);
    }
    if (!out) {
        throw IoError("cannot write training report " + path.string());
    }
}

TrainData prepare_train_data(std::span<const GrayImage> images, const LabelMatrix& labels,
                             const TrainConfig& config) {
    config.validate();
    if (images.size() != labels.size()) {
        throw UsageError(fmt::format("{} images but {} label rows", images.size(), labels.size()));
    }
    TrainData data;
    data.images = images;
    data.labels = labels;
    data.split = split_dataset(labels.size(), config.test_fraction, config.split_seed);
    data.stats = config.stats_from_train_only ? compute_stats(labels.select(data.split.train))
                                              : compute_stats(labels);
    return data;
}

namespace {

// Pearson r on denormalized predictions; NaN when a side is constant.
LabelRow safe_pearson(const EvalReport& r) {
    LabelRow out{};
    for (std::size_t j = 0; j < kNumTargets; ++j) {
        try {
            out[j] = pearson_r(r.predictions.column(j), r.truths.column(j));
        } catch (const MetricError&) {
            out[j] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

// evaluate() without the Pearson step, so untrained models with constant
// outputs still yield a loss.
EvalReport score(const Predictor& predict, const TrainData& data, std::span<const std::size_t> indices,
                 std::size_t image_size, std::size_t batch_size) {
    EvalReport r;
    r.n_samples = indices.size();
    r.truths = data.labels.select(indices);
    LabelMatrix pred;
    for (std::size_t pos = 0; pos < indices.size(); pos += batch_size) {
        const auto chunk = indices.subspan(pos, std::min(batch_size, indices.size() - pos));
        const LabelMatrix out = predict(make_image_batch(data.images, chunk, image_size), chunk);
        pred.rows.insert(pred.rows.end(), out.rows.begin(), out.rows.end());
    }
    const LabelMatrix truth_norm = normalize_labels(r.truths, data.stats);
    double sq = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        for (std::size_t j = 0; j < kNumTargets; ++j) {
            const double d = pred.rows[i][j] - truth_norm.rows[i][j];
            sq += d * d;
        }
    }
    r.mse = sq / static_cast<double>(pred.size());
    r.predictions = denormalize_predictions(pred, data.stats);
    return r;
}

}  // namespace

template <typename T>
TrainResult train(VitRegressor<T>& model, const TrainData& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    config.validate();
    if (data.split.train.empty()) {
        throw UsageError("training split is empty");
    }
    const std::vector<std::size_t>& validation = data.validation.empty() ? data.split.test : data.validation;
    if (validation.empty()) {
        throw UsageError("validation split is empty");
    }
    const std::size_t image_size = model.config().image_size;
    const LabelMatrix targets = normalize_labels(data.labels, data.stats);

    model.freeze_for(config.mode);
    model.zero_grad();
    std::vector<ad::Tensor<T>> trainable;
    for (const auto& p : model.trainable_parameters(config.mode)) {
        trainable.push_back(p.tensor);
    }
    AdamW<T> optimizer(std::move(trainable), AdamWConfig{config.lr, config.beta1, config.beta2,
                                                         config.adam_eps, config.weight_decay});
    const Predictor predictor = make_predictor(model);

    TrainResult result;
    PlateauState plateau;
    std::vector<double> val_history;
    result.report.stop_reason = "epochs_max reached";

    for (std::size_t epoch = 1; epoch <= config.epochs_max; ++epoch) {
        const auto t_start = std::chrono::steady_clock::now();
        RandomState rng = RandomState::for_stream(config.seed, epoch);
        const std::vector<std::size_t> order = shuffled_indices(data.split.train.size(), rng);

        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += config.batch_size, ++batch_no) {
            const std::size_t n = std::min(config.batch_size, order.size() - pos);
            std::vector<std::size_t> idx(n);
            std::vector<T> y(n * kNumTargets);
            for (std::size_t i = 0; i < n; ++i) {
                idx[i] = data.split.train[order[pos + i]];
                for (std::size_t j = 0; j < kNumTargets; ++j) {
                    y[i * kNumTargets + j] = static_cast<T>(targets.rows[idx[i]][j]);
                }
            }
            try {
                const ImageBatch batch = make_image_batch(data.images, idx, image_size);
                const auto target = ad::Tensor<T>::constant({n, kNumTargets}, std::move(y));
                const ad::Tensor<T> loss = mse_loss(model.forward(batch), target);
                loss.backward();
                optimizer.step();
                optimizer.zero_grad();
                loss_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
            } catch (const NumericError& e) {
                throw NumericError(fmt::format("training diverged at epoch {}, batch {}, lr {}: {}", epoch,
                                               batch_no, optimizer.lr(), e.what()));
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = optimizer.lr();
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        const EvalReport val = score(predictor, data, validation, image_size, config.eval_batch_size);
        rec.test_loss = val.mse;
        rec.pearson = safe_pearson(val);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        result.report.epochs.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }

        if (rec.test_loss < result.report.best_test_loss - config.improvement_tol) {
            result.report.best_test_loss = rec.test_loss;
            result.report.best_epoch = epoch;
            result.best_state = model.state();
        }
        val_history.push_back(rec.test_loss);
        optimizer.set_lr(lr_schedule_step(optimizer.lr(), rec.test_loss, plateau, config.scheduler_factor,
                                          config.scheduler_patience, config.improvement_tol));
        if (early_stop_check(val_history, config.early_stop_patience, config.improvement_tol) ==
            StopDecision::Stop) {
            result.report.stop_reason = fmt::format("early stop: no improvement for {} epochs",
                                                    config.early_stop_patience);
            break;
        }
    }
    result.final_state = model.state();
    if (result.best_state.empty()) {
        result.best_state = result.final_state;
    }
    return result;
}

template ad::Tensor<float> mse_loss(const ad::Tensor<float>&, const ad::Tensor<float>&);
template ad::Tensor<double> mse_loss(const ad::Tensor<double>&, const ad::Tensor<double>&);
template void adamw_update(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                           std::size_t, const AdamWConfig&);
template void adamw_update(std::span<double>, std::span<const double>, std::span<double>,
                           std::span<double>, std::size_t, const AdamWConfig&);
template class AdamW<float>;
template class AdamW<double>;
template TrainResult train(VitRegressor<float>&, const TrainData&, const TrainConfig&, const EpochCallback&);
template TrainResult train(VitRegressor<double>&, const TrainData&, const TrainConfig&, const EpochCallback&);

}  // namespace chirploc
