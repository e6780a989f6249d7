// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "chirploc/autodiff.hpp"
#include "chirploc/dataset.hpp"
#include "chirploc/model.hpp"

namespace chirploc {

struct TrainConfig {
    std::size_t epochs_max = 15;
    std::size_t batch_size = 16;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double scheduler_factor = 0.5;
    std::size_t scheduler_patience = 2;
    std::size_t early_stop_patience = 3;
    double improvement_tol = 1e-8;
    std::uint64_t seed = 42;
    TrainMode mode = TrainMode::Full;

    // Data preparation.
    double test_fraction = 0.2;
    std::uint64_t split_seed = 42;
    /// Compute label statistics on the train split only instead of all labels.
    bool stats_from_train_only = false;
    std::size_t eval_batch_size = 64;

    void validate() const;
};

/// Mean over the batch of the squared L2 norm of each row's residual
/// (not divided by the number of targets).
template <typename T>
ad::Tensor<T> mse_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& target);

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// One AdamW update of a flat parameter block. `step` is the 1-based step
/// count after this update. Decoupled decay: theta -= lr * wd * theta, then
/// theta -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::size_t step, const AdamWConfig& config);

/// AdamW over a fixed parameter list. Parameters without an accumulated
/// gradient are skipped for that step.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<ad::Tensor<T>> params, const AdamWConfig& config);

    void step();
    void zero_grad();
    double lr() const { return config_.lr; }
    void set_lr(double lr) { config_.lr = lr; }
    std::size_t steps_taken() const { return step_; }

private:
    std::vector<ad::Tensor<T>> params_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    AdamWConfig config_;
    std::size_t step_ = 0;
};

/// Best-so-far tracker shared by the plateau scheduler and early stopping.
/// An epoch improves when loss < best - tol.
struct PlateauState {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bad_epochs = 0;
};

/// Reduce-on-plateau: multiplies the rate by `factor` once `patience`
/// consecutive epochs fail to improve, then resets the counter.
double lr_schedule_step(double current_lr, double val_loss, PlateauState& state, double factor,
                        std::size_t patience, double tol = 1e-8);

enum class StopDecision { Continue, Stop };

/// Stop when the last `patience` losses all fail to improve on the best loss seen before them.
StopDecision early_stop_check(std::span<const double> val_losses, std::size_t patience,
                              double tol = 1e-8);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double test_loss = 0.0;
    LabelRow pearson{};
    double lr = 0.0;  // rate used during this epoch
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::string stop_reason;
    std::size_t best_epoch = 0;
    double best_test_loss = std::numeric_limits<double>::infinity();

    std::size_t completed_epochs() const { return epochs.size(); }
    /// CSV with header epoch,train_loss,test_loss,r_t0,r_f0,r_f1,lr,epoch_seconds.
    void write_csv(const std::filesystem::path& path) const;
};

/// Prepared, normalized data for one training run.
struct TrainData {
    std::span<const GrayImage> images;
    LabelMatrix labels;  // physical units
    NormalizationStats stats;
    DatasetSplit split;
    /// Indices scored each epoch for scheduling, stopping and checkpoint
    /// selection. Defaults to split.test when empty.
    std::vector<std::size_t> validation;
};

/// Splits, computes statistics and bundles everything `train` needs.
TrainData prepare_train_data(std::span<const GrayImage> images, const LabelMatrix& labels,
                             const TrainConfig& config);

struct TrainResult {
    TrainReport report;
    StateDict best_state;
    StateDict final_state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded minibatch training with MSE, AdamW, plateau scheduling and early
/// stopping. Deterministic for a fixed (seed, config, data).
template <typename T>
TrainResult train(VitRegressor<T>& model, const TrainData& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace chirploc
