#pragma once

// Articulated hand and arm models.
//
// The hand is a tree of per-finger chains hanging off a wrist chain. Chains
// are data: an ordered list of rotate / translate / keypoint elements whose
// vectors are expressed in the chain's current local frame. This keeps the
// joint census configuration-defined; the defaults model a 19-joint
// Shadow-style hand (TH1-TH5, FF2-FF4, MF2-MF4, RF2-RF4, LF2-LF5, WR1).

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Geometry>

namespace handteleop::kinematics {

inline constexpr int kKeypointCount = 15;
inline constexpr int kKeypointsPerFinger = 3;
inline constexpr int kFingerCount = 5;
inline constexpr int kRobotJointCount = 19;
inline constexpr int kArmJointCount = 5;

struct JointLimit {
  std::string name;
  double lower = 0.0;
  double upper = 0.0;
};

/// Ordered joint names with limits. Names are unique and lower < upper.
class JointLayout {
 public:
  JointLayout() = default;
  JointLayout(std::string name, std::vector<JointLimit> entries);

  static JointLayout shadow_robot();
  /// Same joints as the robot with a wider, human-like range of motion.
  static JointLayout human_default();

  const std::string& name() const { return name_; }
  int count() const { return static_cast<int>(entries_.size()); }
  const JointLimit& operator[](int i) const { return entries_.at(static_cast<std::size_t>(i)); }
  std::span<const JointLimit> entries() const { return entries_; }
  /// Throws ConfigError for unknown names.
  int index_of(std::string_view joint_name) const;

  bool operator==(const JointLayout&) const = default;

 private:
  std::string name_;
  std::vector<JointLimit> entries_;
};

/// Joint angles in radians, ordered per a JointLayout. All values finite.
class JointVector {
 public:
  JointVector() = default;
  explicit JointVector(std::vector<double> values);
  static JointVector zeros(int count) { return JointVector(std::vector<double>(static_cast<std::size_t>(count), 0.0)); }

  int size() const { return static_cast<int>(values_.size()); }
  double operator[](int i) const { return values_[static_cast<std::size_t>(i)]; }
  double& operator[](int i) { return values_[static_cast<std::size_t>(i)]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool operator==(const JointVector&) const = default;

 private:
  std::vector<double> values_;
};

/// Throws LimitViolation naming the first offending joint (or ContractError on a length mismatch).
void check_limits(const JointVector& joints, const JointLayout& layout);
JointVector clamp_to_limits(const JointVector& joints, const JointLayout& layout);

struct ChainElement {
  enum class Kind { kRotate, kTranslate, kKeypoint };
  Kind kind = Kind::kTranslate;
  Eigen::Vector3d vector = Eigen::Vector3d::Zero();  // unit axis or translation, local frame
  int joint = -1;                                    // layout index for kRotate
};

struct FingerChain {
  std::string name;
  Eigen::Vector3d base = Eigen::Vector3d::Zero();  // in the palm frame
  std::vector<ChainElement> elements;
};

struct Segment {
  Eigen::Vector3d a;
  Eigen::Vector3d b;
  double radius = 0.0;
};

/// Hand geometry bound to a joint layout. Exactly 15 keypoints, all bone lengths > 0.
struct HandSkeleton {
  JointLayout layout;
  Eigen::Isometry3d base = Eigen::Isometry3d::Identity();  // wrist in world
  std::vector<ChainElement> wrist_chain;                   // applied before palm and fingers
  std::vector<FingerChain> fingers;                        // thumb, first, middle, ring, little
  std::vector<std::array<Eigen::Vector3d, 2>> palm_segments;
  double finger_radius = 0.008;
  double palm_radius = 0.025;

  static HandSkeleton shadow_robot();
  /// Validates counts, axes, and bone lengths; throws ConfigError.
  void validate() const;
  /// Lengths of the translate elements of one finger, proximal to distal.
  std::vector<double> bone_lengths(int finger) const;
};

/// Robot skeleton with finger bones scaled per finger and a human joint layout.
HandSkeleton make_human_skeleton(const HandSkeleton& robot, std::span<const double> finger_scale,
                                 JointLayout human_layout);

/// 15 points, finger-major (thumb, first, middle, ring, little), proximal to tip.
using HandKeypoints = std::array<Eigen::Vector3d, kKeypointCount>;

struct HandPose {
  HandKeypoints keypoints;
  std::vector<Segment> capsules;  // palm then finger bones, world frame
  Eigen::Vector3d palm_centroid;
};

/// Full FK: keypoints plus capsule geometry for rendering. Checks limits.
HandPose forward_hand(const JointVector& joints, const HandSkeleton& skeleton);
HandKeypoints forward_keypoints(const JointVector& joints, const HandSkeleton& skeleton);

/// Per-joint affine map human -> robot, followed by a clamp into robot limits.
struct RetargetMap {
  std::vector<double> scale;
  std::vector<double> offset;

  static RetargetMap identity(int count);
};

JointVector retarget_human_to_robot(const JointVector& human, const JointLayout& human_layout,
                                    const JointLayout& robot_layout, const RetargetMap& map);
/// Inverse of the affine part, clamped into human limits. Used by data generation.
JointVector retarget_robot_to_human(const JointVector& robot, const JointLayout& robot_layout,
                                    const JointLayout& human_layout, const RetargetMap& map);

// ---------------------------------------------------------------------------
// Arm

using ArmJoints = std::array<double, kArmJointCount>;

struct ArmJoint {
  std::string name;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();  // offset from the previous joint frame
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  double lower = 0.0;
  double upper = 0.0;
};

struct ArmChain {
  Eigen::Isometry3d base = Eigen::Isometry3d::Identity();
  std::array<ArmJoint, kArmJointCount> joints;
  Eigen::Vector3d tool = Eigen::Vector3d::Zero();  // wrist point in the last joint frame

  /// PR2-like right arm truncated to shoulder pan/lift, upper-arm roll, elbow flex, forearm roll.
  static ArmChain pr2_right();
  void validate() const;
};

struct WristPose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

void check_arm_limits(const ArmJoints& joints, const ArmChain& chain);
ArmJoints clamp_arm(const ArmJoints& joints, const ArmChain& chain);
WristPose arm_fk(const ArmJoints& joints, const ArmChain& chain);

/// 6-vector [position error; rotation-vector error] taking `current` to `target`.
Eigen::Matrix<double, 6, 1> pose_error(const WristPose& target, const WristPose& current);

struct IkOptions {
  double damping = 1e-2;
  int max_iterations = 200;
  double tolerance = 1e-6;
};

struct IkResult {
  ArmJoints joints{};
  double residual = 0.0;
  int iterations = 0;
};

/// Damped least squares on the stacked 6-D pose error, warm-started at `seed`.
/// Throws UnreachableTarget (with the best joints) if the residual stays above tolerance.
IkResult arm_ik(const WristPose& target, const ArmJoints& seed, const ArmChain& chain, const IkOptions& options = {});

}  // namespace handteleop::kinematics
