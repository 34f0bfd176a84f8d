#include "handteleop/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <utility>

#include <Eigen/Cholesky>

#include "handteleop/errors.hpp"

namespace handteleop::kinematics {

namespace {

ChainElement rotate(int joint, Eigen::Vector3d axis) {
  return {ChainElement::Kind::kRotate, axis.normalized(), joint};
}
ChainElement translate(Eigen::Vector3d v) { return {ChainElement::Kind::kTranslate, v, -1}; }
ChainElement keypoint() { return {ChainElement::Kind::kKeypoint, Eigen::Vector3d::Zero(), -1}; }

// Walks one chain from `frame`, appending keypoints and bone capsules.
void walk_chain(const std::vector<ChainElement>& elements, const JointVector& joints, double radius,
                Eigen::Isometry3d& frame, std::vector<Eigen::Vector3d>* keypoints, std::vector<Segment>* capsules) {
  for (const auto& el : elements) {
    switch (el.kind) {
      case ChainElement::Kind::kRotate:
        frame.linear() = frame.linear() * Eigen::AngleAxisd(joints[el.joint], el.vector).toRotationMatrix();
        break;
      case ChainElement::Kind::kTranslate: {
        const Eigen::Vector3d start = frame.translation();
        frame.translation() += frame.linear() * el.vector;
        if (capsules) capsules->push_back({start, frame.translation(), radius});
        break;
      }
      case ChainElement::Kind::kKeypoint:
        if (keypoints) keypoints->push_back(frame.translation());
        break;
    }
  }
}

}  // namespace

JointLayout::JointLayout(std::string name, std::vector<JointLimit> entries)
    : name_(std::move(name)), entries_(std::move(entries)) {
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    if (!(e.lower < e.upper)) throw ConfigError("joint " + e.name + ": lower limit must be below upper limit");
    if (!seen.insert(e.name).second) throw ConfigError("duplicate joint name " + e.name);
  }
}

JointLayout JointLayout::shadow_robot() {
  return JointLayout("shadow19", {
                                     {"TH1", -0.262, 1.571},
                                     {"TH2", -0.698, 0.698},
                                     {"TH3", -0.209, 0.209},
                                     {"TH4", 0.0, 1.222},
                                     {"TH5", -1.047, 1.047},
                                     {"FF2", 0.0, 1.571},
                                     {"FF3", -0.262, 1.571},
                                     {"FF4", -0.349, 0.349},
                                     {"MF2", 0.0, 1.571},
                                     {"MF3", -0.262, 1.571},
                                     {"MF4", -0.349, 0.349},
                                     {"RF2", 0.0, 1.571},
                                     {"RF3", -0.262, 1.571},
                                     {"RF4", -0.349, 0.349},
                                     {"LF2", 0.0, 1.571},
                                     {"LF3", -0.262, 1.571},
                                     {"LF4", -0.349, 0.349},
                                     {"LF5", 0.0, 0.785},
                                     {"WR1", -0.698, 0.489},
                                 });
}

JointLayout JointLayout::human_default() {
  auto robot = shadow_robot();
  std::vector<JointLimit> entries(robot.entries().begin(), robot.entries().end());
  for (auto& e : entries) {
    e.lower -= 0.1;
    e.upper += 0.1;
  }
  return JointLayout("human19", std::move(entries));
}

int JointLayout::index_of(std::string_view joint_name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == joint_name) return static_cast<int>(i);
  throw ConfigError("unknown joint " + std::string(joint_name) + " in layout " + name_);
}

JointVector::JointVector(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_)
    if (!std::isfinite(v)) throw ContractError("joint vector holds a non-finite value");
}

void check_limits(const JointVector& joints, const JointLayout& layout) {
  if (joints.size() != layout.count())
    throw ContractError("joint vector has " + std::to_string(joints.size()) + " entries, layout " + layout.name() +
                        " expects " + std::to_string(layout.count()));
  for (int i = 0; i < layout.count(); ++i) {
    const auto& lim = layout[i];
    if (joints[i] < lim.lower || joints[i] > lim.upper) throw LimitViolation(lim.name, joints[i], lim.lower, lim.upper);
  }
}

JointVector clamp_to_limits(const JointVector& joints, const JointLayout& layout) {
  if (joints.size() != layout.count()) throw ContractError("joint vector length does not match layout");
  JointVector out = joints;
  for (int i = 0; i < layout.count(); ++i) out[i] = std::clamp(joints[i], layout[i].lower, layout[i].upper);
  return out;
}

HandSkeleton HandSkeleton::shadow_robot() {
  HandSkeleton s;
  s.layout = JointLayout::shadow_robot();
  const auto& L = s.layout;
  const auto j = [&](const char* n) { return L.index_of(n); };
  const Eigen::Vector3d x = Eigen::Vector3d::UnitX();
  const Eigen::Vector3d y = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();

  s.wrist_chain = {rotate(j("WR1"), x)};
  s.palm_segments = {{Eigen::Vector3d(0.015, 0.030, 0.0), Eigen::Vector3d(0.022, 0.075, 0.0)},
                     {Eigen::Vector3d(-0.010, 0.030, 0.0), Eigen::Vector3d(-0.012, 0.075, 0.0)}};

  const Eigen::Vector3d thumb_dir = Eigen::Vector3d(1.0, 1.0, 0.0).normalized();
  const Eigen::Vector3d thumb_flex = Eigen::Vector3d(-1.0, 1.0, 0.0).normalized();
  s.fingers.push_back({"thumb",
                       Eigen::Vector3d(0.034, 0.029, 0.0),
                       {rotate(j("TH5"), y), rotate(j("TH4"), z), translate(0.038 * thumb_dir), keypoint(),
                        rotate(j("TH3"), z), rotate(j("TH2"), thumb_flex), translate(0.032 * thumb_dir), keypoint(),
                        rotate(j("TH1"), thumb_flex), translate(0.0275 * thumb_dir), keypoint()}});

  const auto straight_finger = [&](const char* name, const char* prefix, Eigen::Vector3d knuckle) {
    const std::string p(prefix);
    return FingerChain{name,
                       knuckle,
                       {rotate(L.index_of(p + "4"), z), rotate(L.index_of(p + "3"), x), keypoint(),
                        translate(0.045 * y), rotate(L.index_of(p + "2"), x), keypoint(), translate(0.051 * y),
                        keypoint()}};
  };
  s.fingers.push_back(straight_finger("first", "FF", Eigen::Vector3d(0.033, 0.095, 0.0)));
  s.fingers.push_back(straight_finger("middle", "MF", Eigen::Vector3d(0.011, 0.099, 0.0)));
  s.fingers.push_back(straight_finger("ring", "RF", Eigen::Vector3d(-0.011, 0.095, 0.0)));
  s.fingers.push_back({"little",
                       Eigen::Vector3d(-0.017, 0.020, 0.0),
                       {rotate(j("LF5"), Eigen::Vector3d(0.57, 0.82, 0.0)), translate(Eigen::Vector3d(-0.016, 0.066, 0.0)),
                        rotate(j("LF4"), z), rotate(j("LF3"), x), keypoint(), translate(0.045 * y),
                        rotate(j("LF2"), x), keypoint(), translate(0.051 * y), keypoint()}});
  s.validate();
  return s;
}

void HandSkeleton::validate() const {
  if (fingers.size() != static_cast<std::size_t>(kFingerCount))
    throw ConfigError("hand skeleton needs exactly 5 fingers");
  const auto check_chain = [&](const std::vector<ChainElement>& chain, const std::string& where) {
    int keypoints = 0;
    for (const auto& el : chain) {
      if (el.kind == ChainElement::Kind::kRotate) {
        if (el.joint < 0 || el.joint >= layout.count()) throw ConfigError(where + ": rotation references no joint");
        if (std::abs(el.vector.norm() - 1.0) > 1e-9) throw ConfigError(where + ": rotation axis is not a unit vector");
      } else if (el.kind == ChainElement::Kind::kTranslate) {
        if (!(el.vector.norm() > 0.0)) throw ConfigError(where + ": bone length must be positive");
      } else {
        ++keypoints;
      }
    }
    return keypoints;
  };
  if (check_chain(wrist_chain, "wrist") != 0) throw ConfigError("wrist chain may not carry keypoints");
  for (const auto& f : fingers)
    if (check_chain(f.elements, f.name) != kKeypointsPerFinger)
      throw ConfigError("finger " + f.name + " must carry exactly 3 keypoints");
  if (!(finger_radius > 0.0) || !(palm_radius > 0.0)) throw ConfigError("capsule radii must be positive");
  if (palm_segments.empty()) throw ConfigError("palm needs at least one segment");
}

std::vector<double> HandSkeleton::bone_lengths(int finger) const {
  std::vector<double> out;
  for (const auto& el : fingers.at(static_cast<std::size_t>(finger)).elements)
    if (el.kind == ChainElement::Kind::kTranslate) out.push_back(el.vector.norm());
  return out;
}

HandSkeleton make_human_skeleton(const HandSkeleton& robot, std::span<const double> finger_scale,
                                 JointLayout human_layout) {
  if (finger_scale.size() != robot.fingers.size()) throw ConfigError("need one bone scale per finger");
  if (human_layout.count() != robot.layout.count()) throw ConfigError("human and robot layouts differ in size");
  HandSkeleton human = robot;
  human.layout = std::move(human_layout);
  for (std::size_t f = 0; f < human.fingers.size(); ++f) {
    if (!(finger_scale[f] > 0.0)) throw ConfigError("bone scale must be positive");
    for (auto& el : human.fingers[f].elements)
      if (el.kind == ChainElement::Kind::kTranslate) el.vector *= finger_scale[f];
  }
  human.validate();
  return human;
}

HandPose forward_hand(const JointVector& joints, const HandSkeleton& skeleton) {
  check_limits(joints, skeleton.layout);
  HandPose pose;
  std::vector<Eigen::Vector3d> keypoints;
  keypoints.reserve(kKeypointCount);

  Eigen::Isometry3d palm = skeleton.base;
  walk_chain(skeleton.wrist_chain, joints, skeleton.palm_radius, palm, nullptr, nullptr);

  pose.palm_centroid.setZero();
  for (const auto& seg : skeleton.palm_segments) {
    const Eigen::Vector3d a = palm * seg[0];
    const Eigen::Vector3d b = palm * seg[1];
    pose.capsules.push_back({a, b, skeleton.palm_radius});
    pose.palm_centroid += a + b;
  }
  pose.palm_centroid /= static_cast<double>(2 * skeleton.palm_segments.size());

  for (const auto& finger : skeleton.fingers) {
    Eigen::Isometry3d frame = palm;
    frame.translation() = palm * finger.base;
    walk_chain(finger.elements, joints, skeleton.finger_radius, frame, &keypoints, &pose.capsules);
  }
  std::copy(keypoints.begin(), keypoints.end(), pose.keypoints.begin());
  return pose;
}

HandKeypoints forward_keypoints(const JointVector& joints, const HandSkeleton& skeleton) {
  return forward_hand(joints, skeleton).keypoints;
}

RetargetMap RetargetMap::identity(int count) {
  return {std::vector<double>(static_cast<std::size_t>(count), 1.0),
          std::vector<double>(static_cast<std::size_t>(count), 0.0)};
}

JointVector retarget_human_to_robot(const JointVector& human, const JointLayout& human_layout,
                                    const JointLayout& robot_layout, const RetargetMap& map) {
  const auto n = static_cast<std::size_t>(robot_layout.count());
  if (human_layout.count() != robot_layout.count() || human.size() != human_layout.count() ||
      map.scale.size() != n || map.offset.size() != n)
    throw ConfigError("retargeting layouts and map disagree in size");
  check_limits(human, human_layout);
  JointVector robot = JointVector::zeros(robot_layout.count());
  for (int i = 0; i < robot_layout.count(); ++i) robot[i] = map.scale[i] * human[i] + map.offset[i];
  return clamp_to_limits(robot, robot_layout);
}

JointVector retarget_robot_to_human(const JointVector& robot, const JointLayout& robot_layout,
                                    const JointLayout& human_layout, const RetargetMap& map) {
  const auto n = static_cast<std::size_t>(robot_layout.count());
  if (human_layout.count() != robot_layout.count() || robot.size() != robot_layout.count() ||
      map.scale.size() != n || map.offset.size() != n)
    throw ConfigError("retargeting layouts and map disagree in size");
  JointVector human = JointVector::zeros(human_layout.count());
  for (int i = 0; i < human_layout.count(); ++i) {
    if (map.scale[i] == 0.0) throw ConfigError("retarget scale of zero cannot be inverted");
    human[i] = (robot[i] - map.offset[i]) / map.scale[i];
  }
  return clamp_to_limits(human, human_layout);
}

// ---------------------------------------------------------------------------
// Arm

ArmChain ArmChain::pr2_right() {
  ArmChain c;
  const Eigen::Vector3d x = Eigen::Vector3d::UnitX();
  const Eigen::Vector3d y = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();
  c.joints = {{
      {"shoulder_pan", Eigen::Vector3d(0.0, -0.188, 0.0), z, -2.2854, 0.5646},
      {"shoulder_lift", Eigen::Vector3d(0.1, 0.0, 0.0), y, -0.5236, 1.3963},
      {"upper_arm_roll", Eigen::Vector3d(0.0, 0.0, 0.0), x, -3.9, 0.8},
      {"elbow_flex", Eigen::Vector3d(0.4, 0.0, 0.0), y, -2.3213, 0.0},
      {"forearm_roll", Eigen::Vector3d(0.0, 0.0, 0.0), x, -M_PI, M_PI},
  }};
  c.tool = Eigen::Vector3d(0.321, 0.0, 0.0);
  return c;
}

void ArmChain::validate() const {
  for (const auto& j : joints) {
    if (!(j.lower < j.upper)) throw ConfigError("arm joint " + j.name + ": limits not well ordered");
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) throw ConfigError("arm joint " + j.name + ": axis is not a unit vector");
  }
}

void check_arm_limits(const ArmJoints& joints, const ArmChain& chain) {
  for (int i = 0; i < kArmJointCount; ++i) {
    const auto& j = chain.joints[i];
    if (!std::isfinite(joints[i])) throw ContractError("arm joint " + j.name + " is not finite");
    if (joints[i] < j.lower || joints[i] > j.upper) throw LimitViolation(j.name, joints[i], j.lower, j.upper);
  }
}

ArmJoints clamp_arm(const ArmJoints& joints, const ArmChain& chain) {
  ArmJoints out{};
  for (int i = 0; i < kArmJointCount; ++i) out[i] = std::clamp(joints[i], chain.joints[i].lower, chain.joints[i].upper);
  return out;
}

namespace {

// Joint frames (world) for each joint plus the wrist point.
struct ArmFrames {
  std::array<Eigen::Vector3d, kArmJointCount> origins;
  std::array<Eigen::Vector3d, kArmJointCount> axes;
  Eigen::Isometry3d wrist;
};

ArmFrames arm_frames(const ArmJoints& q, const ArmChain& chain) {
  ArmFrames f;
  Eigen::Isometry3d t = chain.base;
  for (int i = 0; i < kArmJointCount; ++i) {
    const auto& j = chain.joints[i];
    t.translation() += t.linear() * j.origin;
    f.origins[i] = t.translation();
    f.axes[i] = t.linear() * j.axis;
    t.linear() = t.linear() * Eigen::AngleAxisd(q[i], j.axis).toRotationMatrix();
  }
  t.translation() += t.linear() * chain.tool;
  f.wrist = t;
  return f;
}

WristPose to_pose(const Eigen::Isometry3d& t) {
  WristPose p;
  p.position = t.translation();
  p.orientation = Eigen::Quaterniond(t.linear()).normalized();
  return p;
}

}  // namespace

WristPose arm_fk(const ArmJoints& joints, const ArmChain& chain) {
  check_arm_limits(joints, chain);
  return to_pose(arm_frames(joints, chain).wrist);
}

Eigen::Matrix<double, 6, 1> pose_error(const WristPose& target, const WristPose& current) {
  Eigen::Matrix<double, 6, 1> e;
  e.head<3>() = target.position - current.position;
  const Eigen::AngleAxisd rot(target.orientation.normalized() * current.orientation.normalized().conjugate());
  double angle = rot.angle();
  Eigen::Vector3d axis = rot.axis();
  if (angle > M_PI) {
    angle = 2.0 * M_PI - angle;
    axis = -axis;
  }
  e.tail<3>() = angle * axis;
  return e;
}

IkResult arm_ik(const WristPose& target, const ArmJoints& seed, const ArmChain& chain, const IkOptions& options) {
  if (!target.position.allFinite() || !target.orientation.coeffs().allFinite())
    throw ContractError("IK target is not finite");
  check_arm_limits(seed, chain);

  IkResult best{seed, std::numeric_limits<double>::infinity(), 0};
  ArmJoints q = seed;
  const double lambda2 = options.damping * options.damping;
  for (int iter = 0; iter <= options.max_iterations; ++iter) {
    const ArmFrames f = arm_frames(q, chain);
    const Eigen::Matrix<double, 6, 1> e = pose_error(target, to_pose(f.wrist));
    const double residual = e.norm();
    if (residual < best.residual) best = {q, residual, iter};
    if (residual < options.tolerance) return best;
    if (iter == options.max_iterations) break;

    Eigen::Matrix<double, 6, kArmJointCount> jac;
    for (int i = 0; i < kArmJointCount; ++i) {
      jac.block<3, 1>(0, i) = f.axes[i].cross(f.wrist.translation() - f.origins[i]);
      jac.block<3, 1>(3, i) = f.axes[i];
    }
    const Eigen::Matrix<double, 6, 6> jjt = jac * jac.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
    const Eigen::Matrix<double, kArmJointCount, 1> dq = jac.transpose() * jjt.ldlt().solve(e);
    for (int i = 0; i < kArmJointCount; ++i) q[i] += dq[i];
    q = clamp_arm(q, chain);
  }
  throw UnreachableTarget(std::vector<double>(best.joints.begin(), best.joints.end()), best.residual);
}

}  // namespace handteleop::kinematics
