#pragma once

// Depth rendering, crop/normalize preprocessing, keypoint projection and the
// keypoint weight map used by the reconstruction loss.

#include <array>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Geometry>

#include "handteleop/kinematics.hpp"

namespace handteleop::imaging {

inline constexpr int kImageSize = 96;
inline constexpr int kPixelCount = kImageSize * kImageSize;
inline constexpr float kBackground = 1.0f;

/// 96x96 depth crop normalized to [-1, 1]; background is +1.
class DepthImage {
 public:
  DepthImage() : pixels_(kPixelCount, kBackground) {}
  /// Throws ContractError unless the size is 96*96 and every value lies in [-1, 1].
  explicit DepthImage(std::vector<float> pixels);

  float operator()(int row, int col) const { return pixels_[static_cast<std::size_t>(row) * kImageSize + col]; }
  float& operator()(int row, int col) { return pixels_[static_cast<std::size_t>(row) * kImageSize + col]; }
  std::span<const float> pixels() const { return pixels_; }
  std::span<float> pixels() { return pixels_; }
  bool in_range() const;

  bool operator==(const DepthImage&) const = default;

 private:
  std::vector<float> pixels_;
};

struct Intrinsics {
  double fx = 200.0;
  double fy = 200.0;
  double cx = 100.0;
  double cy = 100.0;
  int width = 200;
  int height = 200;
};

/// Pinhole camera. `pose` maps camera coordinates (x right, y down, z forward) to world.
struct CameraModel {
  Intrinsics intrinsics;
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();

  void validate() const;
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return pose.inverse() * world; }

  static CameraModel look_at(const Intrinsics& intrinsics, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                             const Eigen::Vector3d& up = Eigen::Vector3d::UnitY());
  /// Camera on a sphere around `target`: azimuth about +y, elevation toward +y, zero azimuth/elevation on +z.
  static CameraModel orbit(const Intrinsics& intrinsics, const Eigen::Vector3d& target, double azimuth,
                           double elevation, double radius);
};

/// Full-resolution z-depth in meters. Pixels with no geometry hold +infinity.
struct RawDepthFrame {
  static constexpr float kNoReturn = std::numeric_limits<float>::infinity();

  int width = 0;
  int height = 0;
  std::vector<float> depth;

  float at(int row, int col) const { return depth[static_cast<std::size_t>(row) * width + col]; }
  bool operator==(const RawDepthFrame&) const = default;
};

/// Z-buffer render of capsules (world frame). Row-parallel; throws EmptyRender when nothing is visible.
RawDepthFrame render_depth(std::span<const kinematics::Segment> capsules, const CameraModel& camera);
RawDepthFrame render_depth(const kinematics::JointVector& joints, const kinematics::HandSkeleton& skeleton,
                           const CameraModel& camera);

namespace reference {
/// Serial capsule-by-capsule z-buffer; must agree with the parallel renderer bit for bit.
RawDepthFrame render_depth(std::span<const kinematics::Segment> capsules, const CameraModel& camera);
}  // namespace reference

/// Square image window and depth slab of the crop cube.
struct CropWindow {
  double u0 = 0.0;  // window center, raw pixels
  double v0 = 0.0;
  double half_size_px = 0.0;
  double z_center = 0.0;  // meters, camera frame
  double half_depth = 0.0;
};

/// Window of a cube of edge `cube_size` centered on `hand_center` (world).
CropWindow crop_window(const CameraModel& camera, const Eigen::Vector3d& hand_center, double cube_size);

/// Depth inside the cube maps linearly to [-1, 1], everything else to +1; then a bilinear resize to 96x96.
DepthImage crop_and_normalize(const RawDepthFrame& frame, const CropWindow& window);
DepthImage crop_and_normalize(const RawDepthFrame& frame, const CameraModel& camera,
                              const Eigen::Vector3d& hand_center, double cube_size);

struct KeypointPixels {
  std::array<std::array<int, 2>, kinematics::kKeypointCount> uv{};  // (column, row)
  std::array<bool, kinematics::kKeypointCount> visible{};

  int visible_count() const;
  bool operator==(const KeypointPixels&) const = default;
};

/// Pinhole projection through the same crop mapping as crop_and_normalize.
KeypointPixels project_keypoints(const kinematics::HandKeypoints& keypoints, const CameraModel& camera,
                                 const CropWindow& window);

/// Continuous crop-image coordinates (column, row) of a world point, before rounding.
Eigen::Vector2d project_to_crop(const Eigen::Vector3d& world, const CameraModel& camera, const CropWindow& window);

struct WeightMap {
  std::vector<double> alpha;  // 96*96, row-major
  bool no_visible_keypoints = false;

  double operator()(int row, int col) const { return alpha[static_cast<std::size_t>(row) * kImageSize + col]; }
};

/// alpha = max(floor, max_k exp(-d^2 / (2 sigma^2))) with d the Chebyshev distance,
/// then 1 on every visible keypoint and its 8 neighbors.
WeightMap build_weight_map(const KeypointPixels& keypoints, double sigma, double floor);

}  // namespace handteleop::imaging
