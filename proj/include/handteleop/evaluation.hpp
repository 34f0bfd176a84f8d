#pragma once

// Pose-regression metrics: fraction of frames whose maximum joint-angle error
// (or maximum keypoint distance error) lies strictly below a threshold, and the
// per-joint mean absolute angle error. Plus prediction files, multi-variant
// comparison and report emission.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "handteleop/data.hpp"
#include "handteleop/kinematics.hpp"
#include "handteleop/model.hpp"

namespace handteleop::evaluation {

using kinematics::JointVector;

/// Inclusive grid start, start + step, ..., up to stop (within half a step).
std::vector<double> threshold_grid(double start, double stop, double step);
/// 0 to 0.6 rad in 0.01 rad steps.
std::vector<double> default_angle_thresholds();
/// 0 to 50 mm in 1 mm steps.
std::vector<double> default_distance_thresholds_mm();

/// Per frame, max_j |pred_j - gt_j|. Throws ContractError on empty or mismatched input.
std::vector<double> max_angle_errors(std::span<const JointVector> preds, std::span<const JointVector> gts);
/// Per frame, max over the 15 FK keypoints of the Euclidean error, in millimeters.
std::vector<double> max_keypoint_errors_mm(std::span<const JointVector> preds, std::span<const JointVector> gts,
                                           const kinematics::HandSkeleton& skeleton);
/// For each threshold t: fraction of `errors` with error < t. Thresholds must be ascending.
std::vector<double> fraction_below(std::span<const double> errors, std::span<const double> thresholds);

std::vector<double> angle_curve(std::span<const JointVector> preds, std::span<const JointVector> gts,
                                std::span<const double> thresholds);
std::vector<double> distance_curve(std::span<const JointVector> preds, std::span<const JointVector> gts,
                                   std::span<const double> thresholds_mm, const kinematics::HandSkeleton& skeleton);
/// Mean over frames of |pred_j - gt_j|, accumulated in frame order.
std::vector<double> per_joint_error(std::span<const JointVector> preds, std::span<const JointVector> gts);

struct EvalConfig {
  std::vector<double> angle_thresholds = default_angle_thresholds();
  std::vector<double> distance_thresholds_mm = default_distance_thresholds_mm();
  int batch_size = 64;

  void validate() const;
};

nlohmann::json to_json(const EvalConfig& config);
EvalConfig eval_from_json(const nlohmann::json& j);

struct MetricReport {
  std::string label;
  std::string variant;
  std::vector<int> frame_ids;
  std::vector<std::string> joint_names;
  std::vector<double> angle_thresholds;
  std::vector<double> angle_curve;
  std::vector<double> distance_thresholds_mm;
  std::vector<double> distance_curve;
  std::vector<double> per_joint_error;
  double mean_joint_error = 0.0;  // mean of per_joint_error
  int sample_count() const { return static_cast<int>(frame_ids.size()); }

  bool operator==(const MetricReport&) const = default;
};

nlohmann::json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

MetricReport make_report(std::string label, std::string variant, std::vector<int> frame_ids,
                         std::span<const JointVector> preds, std::span<const JointVector> gts,
                         const kinematics::HandSkeleton& skeleton, const EvalConfig& config);

struct Predictions {
  std::vector<int> sample_ids;
  std::vector<JointVector> joints;
};

/// Network inputs for one sample: robot image for robot-only models, the human image otherwise.
const imaging::DepthImage& model_input(const data::PairedSample& sample, model::Variant variant);

/// Eval-mode joint predictions (encoder + joint head only), clamped into `layout`.
Predictions predict(const model::Network<float>& net, const data::Dataset& dataset,
                    std::span<const std::size_t> indices, const kinematics::JointLayout& layout, int batch_size = 64);

/// CSV: sample_id then one column per joint.
void write_predictions(const std::filesystem::path& path, const Predictions& predictions,
                       const kinematics::JointLayout& layout);
Predictions read_predictions(const std::filesystem::path& path, const kinematics::JointLayout& layout);

/// Scores predictions against the dataset's ground truth. Every predicted id must exist.
MetricReport score(const Predictions& predictions, const data::Dataset& dataset, const std::string& label,
                   const std::string& variant, const EvalConfig& config);

/// Robot hand of the dataset's generator, or the default robot hand for converted data.
kinematics::HandSkeleton dataset_robot_hand(const data::Dataset& dataset);

struct Evaluated {
  MetricReport report;
  Predictions predictions;
};

/// Loads the checkpoint and scores it on `split`. `expected_hash`, when non-zero, is enforced.
Evaluated evaluate_checkpoint(const std::filesystem::path& checkpoint, const data::Dataset& dataset, data::Split split,
                              const EvalConfig& config, std::uint64_t expected_hash = 0);

/// One report per checkpoint over the identical frame set; throws IncompatibleCheckpoint
/// if a checkpoint's architecture differs from `expected_hashes[i]` (when given).
std::vector<MetricReport> compare_variants(const std::vector<std::filesystem::path>& checkpoints,
                                           const data::Dataset& dataset, data::Split split, const EvalConfig& config,
                                           const std::vector<std::uint64_t>& expected_hashes = {});

/// Renames repeated labels to "label#2", "label#3", ... skipping names already taken.
void make_labels_unique(std::vector<MetricReport>& reports);

/// Labels ordered by mean joint error, best first (stable for ties).
std::vector<std::string> ranking(const std::vector<MetricReport>& reports);

/// Writes report.json, angle_curve.csv, distance_curve.csv, per_joint_error.csv and
/// SVG plots (angle_curve.svg, distance_curve.svg, per_joint_error.svg).
void emit_report(const std::vector<MetricReport>& reports, const std::filesystem::path& out_dir);
std::vector<MetricReport> load_report(const std::filesystem::path& out_dir);

}  // namespace handteleop::evaluation
