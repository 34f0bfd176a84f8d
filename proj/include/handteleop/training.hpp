#pragma once

// Mini-batch Adam training of the translation network and its ablation variants,
// with checkpoints, a per-step loss log and periodic validation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "handteleop/checkpoint.hpp"
#include "handteleop/data.hpp"
#include "handteleop/model.hpp"

namespace handteleop::training {

using checkpoint::AdamSettings;

/// Bias-corrected Adam over a fixed parameter list. Moments live in T.
template <typename T>
class Adam {
 public:
  Adam(std::vector<nn::Param<T>*> params, AdamSettings settings);

  /// One update from the parameters' current gradients.
  void step();
  std::int64_t steps() const { return t_; }
  const AdamSettings& settings() const { return settings_; }

  const std::vector<nn::Tensor<T>>& first_moments() const { return m_; }
  const std::vector<nn::Tensor<T>>& second_moments() const { return v_; }
  /// Replaces the state; shapes must match the parameters.
  void restore(std::int64_t t, std::vector<nn::Tensor<T>> m, std::vector<nn::Tensor<T>> v);

 private:
  std::vector<nn::Param<T>*> params_;
  AdamSettings settings_;
  std::int64_t t_ = 0;
  std::vector<nn::Tensor<T>> m_, v_;
};

struct TrainConfig {
  AdamSettings adam;
  int batch_size = 64;
  std::int64_t steps = 20000;
  double lambda_recon = model::kLambdaRecon;
  double lambda_joint = model::kLambdaJoint;
  std::uint64_t seed = 0;
  model::Variant variant = model::Variant::kTransteleop;
  model::ArchConfig arch = model::ArchConfig::desk();
  std::int64_t checkpoint_every = 1000;  // 0: final checkpoint only
  std::int64_t validate_every = 500;     // 0: never
  double weight_sigma = 3.0;             // weight-map decay, pixels
  double weight_floor = 0.1;

  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; "arch" may be a preset name or an object.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepRecord {
  std::int64_t step = 0;
  double l_recon = 0.0;  // 0 for robot-only
  double l_joint = 0.0;
  double l_hand = 0.0;
  double wall_ms = 0.0;
};

struct ValidationRecord {
  std::int64_t step = 0;
  int samples = 0;
  double mean_joint_error = 0.0;     // rad, clamped predictions
  double frac_angle_below_01 = 0.0;  // max joint error < 0.1 rad
  double frac_dist_below_20mm = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<ValidationRecord> validation;
};

/// train_log.csv: step, l_recon, l_joint, l_hand, wall_ms.
void write_step_log(const std::filesystem::path& path, const std::vector<StepRecord>& records);
std::vector<StepRecord> read_step_log(const std::filesystem::path& path);
void write_validation_log(const std::filesystem::path& path, const std::vector<ValidationRecord>& records);

struct TrainOptions {
  /// Continue from this checkpoint (optimizer state required) up to config.steps.
  std::optional<std::filesystem::path> resume_from;
  /// Train on these dataset indices instead of the train split.
  std::optional<std::vector<std::size_t>> train_indices;
  /// Called after every step.
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  TrainLog log;
};

/// Writes out_dir/train_log.csv, out_dir/validation_log.csv, out_dir/checkpoints/step_NNNNNNN
/// every `checkpoint_every` steps and out_dir/final. Steps are numbered from 1.
/// Throws NumericalFailure naming the step and the loss term on non-finite values.
TrainResult train(const TrainConfig& config, const data::Dataset& dataset, const std::filesystem::path& out_dir,
                  const TrainOptions& options = {});

/// Dataset index of the k-th sample of step `step` (1-based) under a per-epoch seeded shuffle.
class BatchSchedule {
 public:
  BatchSchedule(std::vector<std::size_t> pool, int batch_size, std::uint64_t seed);
  std::vector<std::size_t> batch(std::int64_t step);

 private:
  const std::vector<std::size_t>& epoch_order(std::int64_t epoch);

  std::vector<std::size_t> pool_;
  int batch_size_;
  std::uint64_t seed_;
  std::int64_t cached_epoch_ = -1;
  std::vector<std::size_t> order_;
};

}  // namespace handteleop::training
