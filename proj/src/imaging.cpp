#include "handteleop/imaging.hpp"

#include <algorithm>
#include <cmath>

#include "handteleop/errors.hpp"

namespace handteleop::imaging {

namespace {

constexpr double kNear = 1e-4;

struct CameraCapsule {
  Eigen::Vector3d a;
  Eigen::Vector3d b;
  double radius;
  int col0, col1, row0, row1;  // inclusive pixel bounds, empty if col0 > col1
};

// Nearest positive ray parameter of a sphere hit, or +inf. The ray is t * dir.
double hit_sphere(const Eigen::Vector3d& dir, const Eigen::Vector3d& center, double radius) {
  const double a = dir.dot(dir);
  const double half_b = -dir.dot(center);
  const double c = center.dot(center) - radius * radius;
  const double disc = half_b * half_b - a * c;
  if (disc < 0.0) return std::numeric_limits<double>::infinity();
  const double t = (-half_b - std::sqrt(disc)) / a;
  return t > kNear ? t : std::numeric_limits<double>::infinity();
}

// Capsule = cylinder body between the end caps plus two spheres. With dir.z == 1
// the ray parameter equals camera-frame depth.
double hit_capsule(const Eigen::Vector3d& dir, const CameraCapsule& cap) {
  double best = std::min(hit_sphere(dir, cap.a, cap.radius), hit_sphere(dir, cap.b, cap.radius));
  const Eigen::Vector3d ba = cap.b - cap.a;
  const Eigen::Vector3d oa = -cap.a;
  const double baba = ba.dot(ba);
  if (baba <= 0.0) return best;
  const double bard = ba.dot(dir);
  const double baoa = ba.dot(oa);
  const double rdoa = dir.dot(oa);
  const double A = baba * dir.dot(dir) - bard * bard;
  const double B = baba * rdoa - baoa * bard;
  const double C = baba * oa.dot(oa) - baoa * baoa - cap.radius * cap.radius * baba;
  const double h = B * B - A * C;
  if (A > 0.0 && h >= 0.0) {
    const double t = (-B - std::sqrt(h)) / A;
    const double y = baoa + t * bard;
    if (t > kNear && y > 0.0 && y < baba) best = std::min(best, t);
  }
  return best;
}

std::vector<CameraCapsule> to_camera(std::span<const kinematics::Segment> capsules, const CameraModel& camera) {
  const auto& in = camera.intrinsics;
  const Eigen::Isometry3d world_to_cam = camera.pose.inverse();
  std::vector<CameraCapsule> out;
  out.reserve(capsules.size());
  for (const auto& s : capsules) {
    CameraCapsule c{world_to_cam * s.a, world_to_cam * s.b, s.radius, 0, in.width - 1, 0, in.height - 1};
    const Eigen::Vector3d lo = c.a.cwiseMin(c.b).array() - s.radius;
    const Eigen::Vector3d hi = c.a.cwiseMax(c.b).array() + s.radius;
    if (hi.z() <= kNear) {
      c.col0 = 1;
      c.col1 = 0;
    } else if (lo.z() > kNear) {
      // Perspective image of the bounding box contains the image of the capsule.
      double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
      for (int corner = 0; corner < 8; ++corner) {
        const Eigen::Vector3d p((corner & 1) ? hi.x() : lo.x(), (corner & 2) ? hi.y() : lo.y(),
                                (corner & 4) ? hi.z() : lo.z());
        const double u = in.fx * p.x() / p.z() + in.cx;
        const double v = in.fy * p.y() / p.z() + in.cy;
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
      c.col0 = static_cast<int>(std::max(0.0, std::floor(umin)));
      c.col1 = static_cast<int>(std::min<double>(in.width - 1, std::ceil(umax)));
      c.row0 = static_cast<int>(std::max(0.0, std::floor(vmin)));
      c.row1 = static_cast<int>(std::min<double>(in.height - 1, std::ceil(vmax)));
    }
    out.push_back(c);
  }
  return out;
}

inline Eigen::Vector3d pixel_ray(const Intrinsics& in, int row, int col) {
  return {(col - in.cx) / in.fx, (row - in.cy) / in.fy, 1.0};
}

void require_coverage(const RawDepthFrame& f) {
  for (float d : f.depth)
    if (d != RawDepthFrame::kNoReturn) return;
  throw EmptyRender("no geometry inside the camera frustum");
}

float normalized_depth(float raw, const CropWindow& w) {
  if (!std::isfinite(raw)) return kBackground;
  const double d = (static_cast<double>(raw) - w.z_center) / w.half_depth;
  return (d < -1.0 || d > 1.0) ? kBackground : static_cast<float>(d);
}

}  // namespace

DepthImage::DepthImage(std::vector<float> pixels) : pixels_(std::move(pixels)) {
  if (pixels_.size() != static_cast<std::size_t>(kPixelCount)) throw ContractError("depth image must be 96x96");
  if (!in_range()) throw ContractError("depth image values must lie in [-1, 1]");
}

bool DepthImage::in_range() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](float v) { return v >= -1.0f && v <= 1.0f; });
}

void CameraModel::validate() const {
  if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0)) throw ConfigError("focal lengths must be positive");
  if (intrinsics.width < kImageSize || intrinsics.height < kImageSize)
    throw ConfigError("camera resolution must be at least 96x96");
}

CameraModel CameraModel::look_at(const Intrinsics& intrinsics, const Eigen::Vector3d& eye,
                                 const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d down = -(up - up.dot(forward) * forward);
  if (down.norm() < 1e-9) throw ConfigError("camera up vector is parallel to the viewing direction");
  down.normalize();
  const Eigen::Vector3d right = down.cross(forward);
  CameraModel cam;
  cam.intrinsics = intrinsics;
  cam.pose.linear().col(0) = right;
  cam.pose.linear().col(1) = down;
  cam.pose.linear().col(2) = forward;
  cam.pose.translation() = eye;
  return cam;
}

CameraModel CameraModel::orbit(const Intrinsics& intrinsics, const Eigen::Vector3d& target, double azimuth,
                               double elevation, double radius) {
  const Eigen::Vector3d offset(std::sin(azimuth) * std::cos(elevation), std::sin(elevation),
                               std::cos(azimuth) * std::cos(elevation));
  return look_at(intrinsics, target + radius * offset, target);
}

RawDepthFrame render_depth(std::span<const kinematics::Segment> capsules, const CameraModel& camera) {
  camera.validate();
  const auto& in = camera.intrinsics;
  const auto caps = to_camera(capsules, camera);
  RawDepthFrame f{in.width, in.height,
                  std::vector<float>(static_cast<std::size_t>(in.width) * in.height, RawDepthFrame::kNoReturn)};
#pragma omp parallel for schedule(dynamic, 4)
  for (int row = 0; row < in.height; ++row) {
    float* line = f.depth.data() + static_cast<std::size_t>(row) * in.width;
    for (const auto& cap : caps) {
      if (cap.col0 > cap.col1 || row < cap.row0 || row > cap.row1) continue;
      for (int col = cap.col0; col <= cap.col1; ++col) {
        const double t = hit_capsule(pixel_ray(in, row, col), cap);
        const float z = static_cast<float>(t);
        if (z < line[col]) line[col] = z;
      }
    }
  }
  require_coverage(f);
  return f;
}

RawDepthFrame render_depth(const kinematics::JointVector& joints, const kinematics::HandSkeleton& skeleton,
                           const CameraModel& camera) {
  const auto pose = kinematics::forward_hand(joints, skeleton);
  return render_depth(pose.capsules, camera);
}

namespace reference {

RawDepthFrame render_depth(std::span<const kinematics::Segment> capsules, const CameraModel& camera) {
  camera.validate();
  const auto& in = camera.intrinsics;
  RawDepthFrame f{in.width, in.height,
                  std::vector<float>(static_cast<std::size_t>(in.width) * in.height, RawDepthFrame::kNoReturn)};
  // No bounding boxes: every capsule is tested against every pixel.
  auto caps = to_camera(capsules, camera);
  for (auto cap : caps) {
    for (int row = 0; row < in.height; ++row)
      for (int col = 0; col < in.width; ++col) {
        const float z = static_cast<float>(hit_capsule(pixel_ray(in, row, col), cap));
        float& dst = f.depth[static_cast<std::size_t>(row) * in.width + col];
        if (z < dst) dst = z;
      }
  }
  require_coverage(f);
  return f;
}

}  // namespace reference

CropWindow crop_window(const CameraModel& camera, const Eigen::Vector3d& hand_center, double cube_size) {
  if (!(cube_size > 0.0)) throw ConfigError("crop cube size must be positive");
  const Eigen::Vector3d c = camera.to_camera(hand_center);
  if (!(c.z() > kNear)) throw ContractError("hand center lies behind the camera");
  const auto& in = camera.intrinsics;
  CropWindow w;
  w.u0 = in.fx * c.x() / c.z() + in.cx;
  w.v0 = in.fy * c.y() / c.z() + in.cy;
  w.half_size_px = in.fx * 0.5 * cube_size / c.z();
  w.z_center = c.z();
  w.half_depth = 0.5 * cube_size;
  return w;
}

DepthImage crop_and_normalize(const RawDepthFrame& frame, const CropWindow& w) {
  if (!(w.half_size_px > 0.0) || !(w.half_depth > 0.0)) throw ConfigError("crop window must have positive extent");
  const double step = 2.0 * w.half_size_px / kImageSize;
  const double left = w.u0 - w.half_size_px;
  const double top = w.v0 - w.half_size_px;
  const auto sample = [&](int row, int col) -> float {
    if (row < 0 || row >= frame.height || col < 0 || col >= frame.width) return kBackground;
    return normalized_depth(frame.at(row, col), w);
  };
  std::vector<float> out(kPixelCount);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < kImageSize; ++r) {
    const double sv = top + (r + 0.5) * step - 0.5;
    const int v = static_cast<int>(std::floor(sv));
    const double fv = sv - v;
    for (int c = 0; c < kImageSize; ++c) {
      const double su = left + (c + 0.5) * step - 0.5;
      const int u = static_cast<int>(std::floor(su));
      const double fu = su - u;
      const double top_row = (1.0 - fu) * sample(v, u) + fu * sample(v, u + 1);
      const double bottom_row = (1.0 - fu) * sample(v + 1, u) + fu * sample(v + 1, u + 1);
      const double value = (1.0 - fv) * top_row + fv * bottom_row;
      out[static_cast<std::size_t>(r) * kImageSize + c] = static_cast<float>(std::clamp(value, -1.0, 1.0));
    }
  }
  return DepthImage(std::move(out));
}

DepthImage crop_and_normalize(const RawDepthFrame& frame, const CameraModel& camera,
                              const Eigen::Vector3d& hand_center, double cube_size) {
  return crop_and_normalize(frame, crop_window(camera, hand_center, cube_size));
}

int KeypointPixels::visible_count() const { return static_cast<int>(std::count(visible.begin(), visible.end(), true)); }

Eigen::Vector2d project_to_crop(const Eigen::Vector3d& world, const CameraModel& camera, const CropWindow& w) {
  const Eigen::Vector3d c = camera.to_camera(world);
  const auto& in = camera.intrinsics;
  const double u = in.fx * c.x() / c.z() + in.cx;
  const double v = in.fy * c.y() / c.z() + in.cy;
  const double scale = kImageSize / (2.0 * w.half_size_px);
  return {(u - (w.u0 - w.half_size_px) + 0.5) * scale - 0.5, (v - (w.v0 - w.half_size_px) + 0.5) * scale - 0.5};
}

KeypointPixels project_keypoints(const kinematics::HandKeypoints& keypoints, const CameraModel& camera,
                                 const CropWindow& window) {
  KeypointPixels out;
  for (int k = 0; k < kinematics::kKeypointCount; ++k) {
    out.uv[k] = {-1, -1};
    out.visible[k] = false;
    if (!(camera.to_camera(keypoints[k]).z() > kNear)) continue;
    const Eigen::Vector2d p = project_to_crop(keypoints[k], camera, window);
    if (!p.allFinite()) continue;
    const double col = std::round(p.x());
    const double row = std::round(p.y());
    if (col >= 0 && col < kImageSize && row >= 0 && row < kImageSize) {
      out.uv[k] = {static_cast<int>(col), static_cast<int>(row)};
      out.visible[k] = true;
    }
  }
  return out;
}

WeightMap build_weight_map(const KeypointPixels& keypoints, double sigma, double floor) {
  if (!(sigma > 0.0)) throw ConfigError("weight-map sigma must be positive");
  if (!(floor >= 0.0 && floor < 1.0)) throw ConfigError("weight-map floor must lie in [0, 1)");
  WeightMap map;
  map.alpha.assign(kPixelCount, floor);
  if (keypoints.visible_count() == 0) {
    map.no_visible_keypoints = true;
    return map;
  }
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < kImageSize; ++r)
    for (int c = 0; c < kImageSize; ++c) {
      int nearest = kImageSize * 2;
      for (int k = 0; k < kinematics::kKeypointCount; ++k) {
        if (!keypoints.visible[k]) continue;
        const int d = std::max(std::abs(c - keypoints.uv[k][0]), std::abs(r - keypoints.uv[k][1]));
        nearest = std::min(nearest, d);
      }
      // exp is decreasing, so the max over keypoints comes from the nearest one.
      double a = nearest <= 1 ? 1.0 : std::exp(-static_cast<double>(nearest) * nearest * inv_two_sigma2);
      map.alpha[static_cast<std::size_t>(r) * kImageSize + c] = std::max(floor, a);
    }
  return map;
}

}  // namespace handteleop::imaging
