#pragma once

// Paired human/robot depth datasets: synthetic generation, on-disk layout,
// loading, validation, splitting and conversion of external captures.
//
// Layout of a dataset directory:
//   manifest.json   format version, sample count, layout, seeds, split fractions
//   human/<id>.png  16-bit grayscale, value = round((depth + 1) / 2 * 65535)
//   robot/<id>.png  same encoding, fixed frontal viewpoint
//   joints.csv      sample_id + one column per joint, radians, %.9g
//   keypoints.csv   sample_id, u0,v0..u14,v14, vis0..vis14 (robot crop pixels)
//   splits.csv      sample_id, split (train|val|test)
//   viewpoints.csv  sample_id, azimuth, elevation, radius of the human camera (optional)

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "handteleop/imaging.hpp"
#include "handteleop/io.hpp"
#include "handteleop/kinematics.hpp"

namespace handteleop::data {

inline constexpr int kFormatVersion = 1;

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct GenerationConfig {
  kinematics::HandSkeleton robot_hand = kinematics::HandSkeleton::shadow_robot();
  kinematics::JointLayout human_layout = kinematics::JointLayout::human_default();
  std::vector<double> human_finger_scale = std::vector<double>(kinematics::kFingerCount, 0.9);
  kinematics::RetargetMap retarget = kinematics::RetargetMap::identity(kinematics::kRobotJointCount);
  double human_noise = 0.05;  // rad, uniform per joint before clamping
  imaging::Intrinsics intrinsics;
  double cube_size = 0.30;
  double robot_camera_distance = 0.45;  // along +z from the zero-pose palm centroid
  double max_azimuth = 1.0471975511965976;    // 60 deg
  double max_elevation = 0.6981317007977318;  // 40 deg
  double min_radius = 0.35;
  double max_radius = 0.55;
  SplitFractions split;

  /// Throws ConfigError.
  void validate() const;
  kinematics::HandSkeleton human_hand() const;
  /// The fixed frontal robot camera.
  imaging::CameraModel robot_camera() const;
};

nlohmann::json to_json(const GenerationConfig& config);
GenerationConfig generation_from_json(const nlohmann::json& j);

struct Viewpoint {
  double azimuth = 0.0;
  double elevation = 0.0;
  double radius = 0.0;

  bool operator==(const Viewpoint&) const = default;
};

struct PairedSample {
  int sample_id = 0;
  imaging::DepthImage human_image;
  imaging::DepthImage robot_image;
  kinematics::JointVector joints;
  imaging::KeypointPixels keypoints;
  std::optional<Viewpoint> viewpoint;
};

enum class Split { kTrain, kVal, kTest };
std::string_view to_string(Split split);
/// Throws FormatError.
Split parse_split(std::string_view text);

struct DatasetManifest {
  int format_version = kFormatVersion;
  int sample_count = 0;
  std::string layout_name;
  std::vector<std::string> joint_names;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  SplitFractions fractions;
  std::optional<GenerationConfig> generator;  // absent for converted datasets
};

nlohmann::json to_json(const DatasetManifest& manifest);
/// Throws FormatError on a version mismatch or malformed manifest.
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Depth <-> 16-bit codes.
std::uint16_t encode_depth(float depth);
float decode_depth(std::uint16_t code);
io::Gray16 encode_image(const imaging::DepthImage& image);
imaging::DepthImage decode_image(const io::Gray16& encoded);

/// Deterministic RNG for one sample: depends only on (seed, sample_id).
std::uint64_t sample_stream_seed(std::uint64_t seed, std::uint64_t sample_id);

/// One synthetic sample. Robot joints are already rounded to their CSV encoding,
/// so the stored robot image is reproducible from the stored joints.
PairedSample generate_sample(const GenerationConfig& config, std::uint64_t seed, int sample_id);

/// Robot crop and keypoints for given joints (the regeneration oracle path).
imaging::DepthImage render_robot_image(const GenerationConfig& config, const kinematics::JointVector& joints);
imaging::KeypointPixels robot_keypoints(const GenerationConfig& config, const kinematics::JointVector& joints);

/// Writes a complete dataset. Samples are generated in parallel; output bytes do not
/// depend on the thread count. Throws ConfigError or Error (unwritable directory).
DatasetManifest generate_dataset(const GenerationConfig& config, int n, std::uint64_t seed,
                                 const std::filesystem::path& out_dir);

/// Deterministic partition: val = round(f_val n), test = round(f_test n), train = rest.
/// Fractions must be >= 0 and sum to 1 within 1e-9; throws ConfigError.
std::vector<Split> split_dataset(int n, const SplitFractions& fractions, std::uint64_t seed);

/// Recomputes splits.csv and the manifest's split fields of an existing dataset.
void resplit_dataset(const std::filesystem::path& dir, const SplitFractions& fractions, std::uint64_t seed);

/// Read-only view over a dataset directory. Metadata is read eagerly, images lazily.
class Dataset {
 public:
  /// Throws IntegrityError naming the sample for missing files, FormatError for bad
  /// versions or malformed tables.
  static Dataset open(const std::filesystem::path& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& directory() const { return dir_; }
  std::size_t size() const { return ids_.size(); }
  int sample_id(std::size_t index) const { return ids_[index]; }
  const kinematics::JointVector& joints(std::size_t index) const { return joints_[index]; }
  const imaging::KeypointPixels& keypoints(std::size_t index) const { return keypoints_[index]; }
  Split split(std::size_t index) const { return splits_[index]; }
  std::vector<std::size_t> indices(Split split) const;

  /// Decodes both images. Safe to call concurrently.
  PairedSample load(std::size_t index) const;
  io::Gray16 load_encoded(std::size_t index, bool robot) const;

  class Iterator {
   public:
    using value_type = PairedSample;
    using difference_type = std::ptrdiff_t;

    Iterator(const Dataset* dataset, std::size_t index) : dataset_(dataset), index_(index) {}
    PairedSample operator*() const { return dataset_->load(index_); }
    Iterator& operator++() {
      ++index_;
      return *this;
    }
    bool operator==(const Iterator& other) const { return index_ == other.index_; }

   private:
    const Dataset* dataset_;
    std::size_t index_;
  };

  Iterator begin() const { return {this, 0}; }
  Iterator end() const { return {this, ids_.size()}; }

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
  std::vector<int> ids_;
  std::vector<kinematics::JointVector> joints_;
  std::vector<imaging::KeypointPixels> keypoints_;
  std::vector<Split> splits_;
  std::vector<std::optional<Viewpoint>> viewpoints_;
};

inline Dataset load_dataset(const std::filesystem::path& dir) { return Dataset::open(dir); }

std::filesystem::path image_path(const std::filesystem::path& dir, int sample_id, bool robot);

struct ValidationReport {
  int sample_count = 0;
  std::map<std::string, int> violations;  // every invariant listed, zero when clean
  std::vector<std::string> messages;      // first few offending details

  int total() const;
  bool ok() const { return total() == 0; }
  void add(const std::string& invariant, const std::string& message);
  nlohmann::json to_json() const;
};

/// Invariant names used in reports.
inline constexpr const char* kInvManifest = "manifest";
inline constexpr const char* kInvSchema = "schema";
inline constexpr const char* kInvMissingFile = "missing_file";
inline constexpr const char* kInvImageFormat = "image_format";
inline constexpr const char* kInvDepthRange = "depth_range";
inline constexpr const char* kInvJointLimits = "joint_limits";
inline constexpr const char* kInvKeypoints = "keypoints";
inline constexpr const char* kInvSampleIds = "sample_ids";
inline constexpr const char* kInvSplit = "split";

ValidationReport empty_report();
/// Per-sample invariants (image range, joint limits, keypoint bounds); appends to `report`.
/// Empty joints mean "unavailable" and are skipped.
void check_sample(const PairedSample& sample, const kinematics::JointLayout& layout, ValidationReport& report);
/// Never throws for content problems; they become report entries.
ValidationReport validate_dataset(const std::filesystem::path& dir);

/// External capture layout accepted by convert_external:
///   joints.csv     name + one column per robot joint (radians)
///   human/<name>.png            16-bit depth in millimeters, 0 = no return
///   robot/<name>_<view>.png     same; only `frontal_view` is kept
///   centers.csv    name, domain (human|robot), u, v, depth_mm  (crop center, raw pixels)
///   camera.json    {"intrinsics": {...}, "frontal_view": "<view>"}
///   keypoints.csv  optional, same columns as ours with `name` in place of sample_id;
///                  when absent keypoints are recomputed by FK through the frontal camera.
struct ConvertReport {
  int samples = 0;
  int discarded_views = 0;
  bool keypoints_recomputed = false;
};

ConvertReport convert_external(const std::filesystem::path& src, const std::filesystem::path& out_dir,
                               const GenerationConfig& config);

}  // namespace handteleop::data
