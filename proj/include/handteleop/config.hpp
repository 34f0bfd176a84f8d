#pragma once

// One configuration file for every pipeline. Sections overlay built-in defaults;
// unknown keys are rejected. A single top-level seed drives all randomness.
//
//   {
//     "seed": 7,
//     "dataset":  { "size": 1000, ...generation keys... },
//     "train":    { ...training keys, no seed... },
//     "eval":     { "angle_thresholds": [...] or {"start", "stop", "step"}, ... },
//     "teleop":   { "delta1": 0.7, ..., "duration": 0, "arm_chain": {...}, "ik": {...} }
//   }

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "handteleop/data.hpp"
#include "handteleop/evaluation.hpp"
#include "handteleop/kinematics.hpp"
#include "handteleop/teleop.hpp"
#include "handteleop/training.hpp"

namespace handteleop::config {

struct RunConfig {
  std::uint64_t seed = 0;
  data::GenerationConfig dataset;
  int dataset_size = 1000;
  training::TrainConfig train;
  evaluation::EvalConfig eval;
  teleop::GainConfig teleop;
  double replay_duration = 0.0;  // 0: the recorded span
  kinematics::ArmChain arm_chain = kinematics::ArmChain::pr2_right();
  kinematics::IkOptions ik;

  /// Copies `seed` into the sections that consume it.
  void propagate_seed();
};

nlohmann::json to_json(const RunConfig& config);
/// Overlays `j` on the defaults. Throws ConfigError naming unknown or invalid keys.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace handteleop::config
