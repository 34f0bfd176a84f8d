#pragma once

// JSON conversions for configuration-bearing types. Readers throw ConfigError
// with the offending key path on missing or mistyped fields.

#include <json.hpp>

#include "handteleop/errors.hpp"
#include "handteleop/imaging.hpp"
#include "handteleop/kinematics.hpp"

namespace handteleop::json_io {

using nlohmann::json;

json to_json(const kinematics::JointLayout& layout);
kinematics::JointLayout layout_from_json(const json& j);

json to_json(const kinematics::HandSkeleton& skeleton);
kinematics::HandSkeleton skeleton_from_json(const json& j);

json to_json(const kinematics::RetargetMap& map);
kinematics::RetargetMap retarget_from_json(const json& j);

json to_json(const kinematics::ArmChain& chain);
kinematics::ArmChain arm_from_json(const json& j);

json to_json(const kinematics::IkOptions& options);
kinematics::IkOptions ik_from_json(const json& j);

json to_json(const imaging::Intrinsics& intrinsics);
imaging::Intrinsics intrinsics_from_json(const json& j);

json to_json(const Eigen::Isometry3d& pose);
Eigen::Isometry3d isometry_from_json(const json& j);

json to_json(const Eigen::Vector3d& v);
Eigen::Vector3d vector3_from_json(const json& j);

/// Typed field access with a readable error path.
template <typename T>
T get(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

/// Parses text; throws ConfigError naming `origin` on syntax errors.
json parse(const std::string& text, const std::string& origin);

/// Keys present in `overlay` but absent from `base`, as dotted paths. Arrays are leaves.
std::vector<std::string> unknown_keys(const json& base, const json& overlay);

}  // namespace handteleop::json_io
