#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "handteleop/kinematics.hpp"
#include "handteleop/model.hpp"

namespace testutil {

inline handteleop::kinematics::JointVector random_joints(const handteleop::kinematics::JointLayout& layout,
                                                         std::mt19937_64& rng) {
  auto q = handteleop::kinematics::JointVector::zeros(layout.count());
  for (int i = 0; i < layout.count(); ++i) {
    std::uniform_real_distribution<double> d(layout[i].lower, layout[i].upper);
    q[i] = d(rng);
  }
  return q;
}

inline handteleop::kinematics::ArmJoints random_arm(const handteleop::kinematics::ArmChain& chain,
                                                    std::mt19937_64& rng, double margin = 0.0) {
  handteleop::kinematics::ArmJoints q{};
  for (int i = 0; i < handteleop::kinematics::kArmJointCount; ++i) {
    std::uniform_real_distribution<double> d(chain.joints[i].lower + margin, chain.joints[i].upper - margin);
    q[i] = d(rng);
  }
  return q;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("handteleop_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Narrow network for tests that train or save many times.
inline handteleop::model::ArchConfig tiny_arch() {
  handteleop::model::ArchConfig a;
  a.name = "tiny";
  a.encoder_channels = {4, 8, 8, 8};
  a.residual_blocks = 1;
  a.z_h = 32;
  a.z_pose = 16;
  a.decoder_channels = {8, 4, 4, 4};
  a.joint_hidden = {32, 32};
  a.stn_channels = {2, 4};
  a.stn_hidden = 8;
  return a;
}

}  // namespace testutil
