#include "handteleop/json_io.hpp"

namespace handteleop::json_io {

using namespace kinematics;

json to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vector3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector, got " + j.dump());
  for (const auto& x : j)
    if (!x.is_number()) throw ConfigError("expected a 3-vector, got " + j.dump());
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json to_json(const Eigen::Isometry3d& pose) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back(json::array({pose.linear()(r, 0), pose.linear()(r, 1), pose.linear()(r, 2)}));
  return {{"translation", to_json(Eigen::Vector3d(pose.translation()))}, {"rotation", rot}};
}

Eigen::Isometry3d isometry_from_json(const json& j) {
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
  pose.translation() = vector3_from_json(j.at("translation"));
  const auto& rot = j.at("rotation");
  if (!rot.is_array() || rot.size() != 3) throw ConfigError("rotation must be 3x3");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) m.row(r) = vector3_from_json(rot[r]).transpose();
  if (!(m.transpose() * m).isIdentity(1e-9) || m.determinant() < 0.0) throw ConfigError("rotation is not orthonormal");
  pose.linear() = m;
  return pose;
}

json to_json(const JointLayout& layout) {
  json joints = json::array();
  for (const auto& e : layout.entries()) joints.push_back({{"name", e.name}, {"lower", e.lower}, {"upper", e.upper}});
  return {{"name", layout.name()}, {"joints", joints}};
}

JointLayout layout_from_json(const json& j) {
  std::vector<JointLimit> entries;
  for (const auto& e : get<json>(j, "joints"))
    entries.push_back({get<std::string>(e, "name"), get<double>(e, "lower"), get<double>(e, "upper")});
  return JointLayout(get<std::string>(j, "name"), std::move(entries));
}

namespace {

json chain_to_json(const std::vector<ChainElement>& chain, const JointLayout& layout) {
  json out = json::array();
  for (const auto& el : chain) {
    switch (el.kind) {
      case ChainElement::Kind::kRotate:
        out.push_back({{"rotate", layout[el.joint].name}, {"axis", to_json(el.vector)}});
        break;
      case ChainElement::Kind::kTranslate:
        out.push_back({{"translate", to_json(el.vector)}});
        break;
      case ChainElement::Kind::kKeypoint:
        out.push_back({{"keypoint", true}});
        break;
    }
  }
  return out;
}

std::vector<ChainElement> chain_from_json(const json& j, const JointLayout& layout) {
  if (!j.is_array()) throw ConfigError("chain must be an array");
  std::vector<ChainElement> out;
  for (const auto& e : j) {
    ChainElement el;
    if (e.contains("rotate")) {
      el.kind = ChainElement::Kind::kRotate;
      el.joint = layout.index_of(get<std::string>(e, "rotate"));
      el.vector = vector3_from_json(e.at("axis"));
      if (!(el.vector.norm() > 0.0)) throw ConfigError("zero rotation axis");
      el.vector.normalize();
    } else if (e.contains("translate")) {
      el.kind = ChainElement::Kind::kTranslate;
      el.vector = vector3_from_json(e.at("translate"));
    } else if (e.contains("keypoint")) {
      el.kind = ChainElement::Kind::kKeypoint;
    } else {
      throw ConfigError("chain element needs rotate, translate or keypoint: " + e.dump());
    }
    out.push_back(el);
  }
  return out;
}

}  // namespace

json to_json(const HandSkeleton& s) {
  json fingers = json::array();
  for (const auto& f : s.fingers)
    fingers.push_back({{"name", f.name}, {"base", to_json(f.base)}, {"chain", chain_to_json(f.elements, s.layout)}});
  json palm = json::array();
  for (const auto& seg : s.palm_segments) palm.push_back(json::array({to_json(seg[0]), to_json(seg[1])}));
  return {{"layout", to_json(s.layout)},
          {"base", to_json(s.base)},
          {"wrist_chain", chain_to_json(s.wrist_chain, s.layout)},
          {"fingers", fingers},
          {"palm_segments", palm},
          {"finger_radius", s.finger_radius},
          {"palm_radius", s.palm_radius}};
}

HandSkeleton skeleton_from_json(const json& j) {
  HandSkeleton s;
  s.layout = layout_from_json(get<json>(j, "layout"));
  s.base = isometry_from_json(get<json>(j, "base"));
  s.wrist_chain = chain_from_json(get<json>(j, "wrist_chain"), s.layout);
  for (const auto& f : get<json>(j, "fingers"))
    s.fingers.push_back({get<std::string>(f, "name"), vector3_from_json(f.at("base")),
                         chain_from_json(get<json>(f, "chain"), s.layout)});
  for (const auto& seg : get<json>(j, "palm_segments")) {
    if (!seg.is_array() || seg.size() != 2) throw ConfigError("palm segment needs two points");
    s.palm_segments.push_back({vector3_from_json(seg[0]), vector3_from_json(seg[1])});
  }
  s.finger_radius = get<double>(j, "finger_radius");
  s.palm_radius = get<double>(j, "palm_radius");
  s.validate();
  return s;
}

json to_json(const RetargetMap& map) { return {{"scale", map.scale}, {"offset", map.offset}}; }

RetargetMap retarget_from_json(const json& j) {
  RetargetMap m{get<std::vector<double>>(j, "scale"), get<std::vector<double>>(j, "offset")};
  if (m.scale.size() != m.offset.size()) throw ConfigError("retarget scale and offset differ in length");
  return m;
}

json to_json(const ArmChain& chain) {
  json joints = json::array();
  for (const auto& jt : chain.joints)
    joints.push_back({{"name", jt.name},
                      {"origin", to_json(jt.origin)},
                      {"axis", to_json(jt.axis)},
                      {"lower", jt.lower},
                      {"upper", jt.upper}});
  return {{"base", to_json(chain.base)}, {"joints", joints}, {"tool", to_json(chain.tool)}};
}

ArmChain arm_from_json(const json& j) {
  ArmChain chain;
  chain.base = isometry_from_json(get<json>(j, "base"));
  const auto joints = get<json>(j, "joints");
  if (!joints.is_array() || joints.size() != chain.joints.size())
    throw ConfigError("arm needs exactly " + std::to_string(chain.joints.size()) + " joints");
  for (std::size_t i = 0; i < chain.joints.size(); ++i) {
    const auto& e = joints[i];
    chain.joints[i] = {get<std::string>(e, "name"), vector3_from_json(e.at("origin")), vector3_from_json(e.at("axis")),
                       get<double>(e, "lower"), get<double>(e, "upper")};
  }
  chain.tool = vector3_from_json(j.at("tool"));
  chain.validate();
  return chain;
}

json to_json(const IkOptions& o) {
  return {{"damping", o.damping}, {"max_iterations", o.max_iterations}, {"tolerance", o.tolerance}};
}

IkOptions ik_from_json(const json& j) {
  IkOptions o{get<double>(j, "damping"), get<int>(j, "max_iterations"), get<double>(j, "tolerance")};
  if (!(o.damping >= 0.0) || o.max_iterations < 1 || !(o.tolerance > 0.0)) throw ConfigError("invalid IK options");
  return o;
}

json to_json(const imaging::Intrinsics& i) {
  return {{"fx", i.fx}, {"fy", i.fy}, {"cx", i.cx}, {"cy", i.cy}, {"width", i.width}, {"height", i.height}};
}

imaging::Intrinsics intrinsics_from_json(const json& j) {
  return {get<double>(j, "fx"), get<double>(j, "fy"), get<double>(j, "cx"),
          get<double>(j, "cy"), get<int>(j, "width"),  get<int>(j, "height")};
}

json parse(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

namespace {

void collect_unknown(const json& base, const json& overlay, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) {
      out.push_back(path);
      continue;
    }
    const auto& b = base.at(it.key());
    if (b.is_object() && it.value().is_object()) collect_unknown(b, it.value(), path, out);
  }
}

}  // namespace

std::vector<std::string> unknown_keys(const json& base, const json& overlay) {
  std::vector<std::string> out;
  if (overlay.is_object() && base.is_object()) collect_unknown(base, overlay, "", out);
  return out;
}

}  // namespace handteleop::json_io
