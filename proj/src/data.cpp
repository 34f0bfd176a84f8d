#include "handteleop/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "handteleop/errors.hpp"
#include "handteleop/json_io.hpp"
#include "handteleop/parallel.hpp"

namespace handteleop::data {

namespace fs = std::filesystem;
using nlohmann::json;
using json_io::get;
using kinematics::JointVector;

namespace {

constexpr int kMaxMessages = 20;

std::string id_string(int sample_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d", sample_id);
  return buf;
}

std::vector<std::string> keypoint_header() {
  std::vector<std::string> h{"sample_id"};
  for (int k = 0; k < kinematics::kKeypointCount; ++k) {
    h.push_back("u" + std::to_string(k));
    h.push_back("v" + std::to_string(k));
  }
  for (int k = 0; k < kinematics::kKeypointCount; ++k) h.push_back("vis" + std::to_string(k));
  return h;
}

std::vector<std::string> keypoint_row(const std::string& key, const imaging::KeypointPixels& kp) {
  std::vector<std::string> row{key};
  for (int k = 0; k < kinematics::kKeypointCount; ++k) {
    row.push_back(std::to_string(kp.uv[k][0]));
    row.push_back(std::to_string(kp.uv[k][1]));
  }
  for (int k = 0; k < kinematics::kKeypointCount; ++k) row.push_back(kp.visible[k] ? "1" : "0");
  return row;
}

imaging::KeypointPixels parse_keypoint_row(const std::vector<std::string>& row) {
  imaging::KeypointPixels kp;
  for (int k = 0; k < kinematics::kKeypointCount; ++k) {
    kp.uv[k][0] = static_cast<int>(io::parse_int(row[1 + 2 * k], "keypoint column"));
    kp.uv[k][1] = static_cast<int>(io::parse_int(row[2 + 2 * k], "keypoint row"));
    const auto vis = io::parse_int(row[1 + 2 * kinematics::kKeypointCount + k], "visibility flag");
    if (vis != 0 && vis != 1) throw FormatError("visibility flag must be 0 or 1");
    kp.visible[k] = vis == 1;
  }
  return kp;
}

std::vector<std::string> joint_header(const kinematics::JointLayout& layout) {
  std::vector<std::string> h{"sample_id"};
  for (const auto& e : layout.entries()) h.push_back(e.name);
  return h;
}

std::vector<std::string> joint_row(const std::string& key, const JointVector& joints) {
  std::vector<std::string> row{key};
  for (double v : joints.values()) row.push_back(io::format_angle(v));
  return row;
}

JointVector parse_joint_row(const std::vector<std::string>& row, int count) {
  std::vector<double> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) v[i] = io::parse_double(row[1 + i], "joint angle");
  return JointVector(std::move(v));
}

void write_splits(const fs::path& dir, const std::vector<int>& ids, const std::vector<Split>& splits) {
  io::CsvTable t{{"sample_id", "split"}, {}};
  for (std::size_t i = 0; i < ids.size(); ++i) t.rows.push_back({std::to_string(ids[i]), std::string(to_string(splits[i]))});
  io::write_csv(dir / "splits.csv", t);
}

void write_manifest(const fs::path& dir, const DatasetManifest& m) {
  io::write_text(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw IntegrityError("no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  return manifest_from_json(j);
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create directory " + dir.string());
}

// Back-projects a raw-pixel crop center at a known depth to world coordinates.
Eigen::Vector3d backproject(const imaging::CameraModel& camera, double u, double v, double depth) {
  const auto& in = camera.intrinsics;
  const Eigen::Vector3d c((u - in.cx) / in.fx * depth, (v - in.cy) / in.fy * depth, depth);
  return camera.pose * c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void GenerationConfig::validate() const {
  robot_hand.validate();
  if (human_layout.count() != robot_hand.layout.count()) throw ConfigError("human layout size differs from robot");
  if (static_cast<int>(retarget.scale.size()) != robot_hand.layout.count())
    throw ConfigError("retarget map size differs from the joint count");
  if (!(human_noise >= 0.0)) throw ConfigError("human_noise must be >= 0");
  if (!(cube_size > 0.0)) throw ConfigError("cube_size must be positive");
  if (!(robot_camera_distance > cube_size / 2)) throw ConfigError("robot camera sits inside the crop cube");
  if (!(max_azimuth >= 0.0) || !(max_elevation >= 0.0) || max_elevation >= M_PI / 2)
    throw ConfigError("viewpoint ranges must be non-negative, elevation below 90 deg");
  if (!(min_radius > cube_size / 2) || !(max_radius >= min_radius))
    throw ConfigError("viewpoint radius range invalid");
  imaging::CameraModel{intrinsics}.validate();
  split_dataset(1, split, 0);  // fraction checks
  (void)human_hand();
}

kinematics::HandSkeleton GenerationConfig::human_hand() const {
  return kinematics::make_human_skeleton(robot_hand, human_finger_scale, human_layout);
}

imaging::CameraModel GenerationConfig::robot_camera() const {
  const auto zero = kinematics::forward_hand(JointVector::zeros(robot_hand.layout.count()), robot_hand);
  const Eigen::Vector3d target = zero.palm_centroid;
  return imaging::CameraModel::look_at(intrinsics, target + Eigen::Vector3d(0, 0, robot_camera_distance), target);
}

json to_json(const GenerationConfig& c) {
  return {{"robot_hand", json_io::to_json(c.robot_hand)},
          {"human_layout", json_io::to_json(c.human_layout)},
          {"human_finger_scale", c.human_finger_scale},
          {"retarget", json_io::to_json(c.retarget)},
          {"human_noise", c.human_noise},
          {"intrinsics", json_io::to_json(c.intrinsics)},
          {"cube_size", c.cube_size},
          {"robot_camera_distance", c.robot_camera_distance},
          {"max_azimuth", c.max_azimuth},
          {"max_elevation", c.max_elevation},
          {"min_radius", c.min_radius},
          {"max_radius", c.max_radius},
          {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}}};
}

GenerationConfig generation_from_json(const json& j) {
  GenerationConfig c;
  c.robot_hand = json_io::skeleton_from_json(get<json>(j, "robot_hand"));
  c.human_layout = json_io::layout_from_json(get<json>(j, "human_layout"));
  c.human_finger_scale = get<std::vector<double>>(j, "human_finger_scale");
  c.retarget = json_io::retarget_from_json(get<json>(j, "retarget"));
  c.human_noise = get<double>(j, "human_noise");
  c.intrinsics = json_io::intrinsics_from_json(get<json>(j, "intrinsics"));
  c.cube_size = get<double>(j, "cube_size");
  c.robot_camera_distance = get<double>(j, "robot_camera_distance");
  c.max_azimuth = get<double>(j, "max_azimuth");
  c.max_elevation = get<double>(j, "max_elevation");
  c.min_radius = get<double>(j, "min_radius");
  c.max_radius = get<double>(j, "max_radius");
  const auto s = get<json>(j, "split");
  c.split = {get<double>(s, "train"), get<double>(s, "val"), get<double>(s, "test")};
  c.validate();
  return c;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw FormatError("unknown split '" + std::string(text) + "'");
}

json to_json(const DatasetManifest& m) {
  json j{{"format_version", m.format_version},
         {"sample_count", m.sample_count},
         {"layout", m.layout_name},
         {"joint_names", m.joint_names},
         {"seed", m.seed},
         {"split", {{"seed", m.split_seed}, {"train", m.fractions.train}, {"val", m.fractions.val}, {"test", m.fractions.test}}}};
  if (m.generator) j["generator"] = to_json(*m.generator);
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
  } catch (const json::exception&) {
    throw FormatError("manifest has no format_version");
  }
  if (m.format_version != kFormatVersion)
    throw FormatError("dataset format version " + std::to_string(m.format_version) + " is not supported (expected " +
                      std::to_string(kFormatVersion) + ")");
  try {
    m.sample_count = j.at("sample_count").get<int>();
    m.layout_name = j.at("layout").get<std::string>();
    m.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& s = j.at("split");
    m.split_seed = s.at("seed").get<std::uint64_t>();
    m.fractions = {s.at("train").get<double>(), s.at("val").get<double>(), s.at("test").get<double>()};
    if (j.contains("generator")) m.generator = generation_from_json(j.at("generator"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed manifest generator: ") + e.what());
  }
  if (m.sample_count < 0) throw FormatError("negative sample_count");
  return m;
}

// ---------------------------------------------------------------------------
// Encoding

std::uint16_t encode_depth(float depth) {
  const double d = std::clamp(static_cast<double>(depth), -1.0, 1.0);
  return static_cast<std::uint16_t>(std::lround((d + 1.0) / 2.0 * 65535.0));
}

float decode_depth(std::uint16_t code) { return static_cast<float>(code / 65535.0 * 2.0 - 1.0); }

io::Gray16 encode_image(const imaging::DepthImage& image) {
  io::Gray16 out{imaging::kImageSize, imaging::kImageSize, std::vector<std::uint16_t>(imaging::kPixelCount)};
  const auto px = image.pixels();
  for (int i = 0; i < imaging::kPixelCount; ++i) out.pixels[i] = encode_depth(px[i]);
  return out;
}

imaging::DepthImage decode_image(const io::Gray16& encoded) {
  if (encoded.width != imaging::kImageSize || encoded.height != imaging::kImageSize)
    throw FormatError("depth image must be 96x96, got " + std::to_string(encoded.width) + "x" +
                      std::to_string(encoded.height));
  std::vector<float> px(imaging::kPixelCount);
  for (int i = 0; i < imaging::kPixelCount; ++i) px[i] = decode_depth(encoded.pixels[i]);
  return imaging::DepthImage(std::move(px));
}

// ---------------------------------------------------------------------------
// Generation

std::uint64_t sample_stream_seed(std::uint64_t seed, std::uint64_t sample_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sample_id), static_cast<std::uint32_t>(sample_id >> 32), 0x5eedu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

imaging::DepthImage render_robot_image(const GenerationConfig& config, const JointVector& joints) {
  const auto pose = kinematics::forward_hand(joints, config.robot_hand);
  const auto camera = config.robot_camera();
  const auto frame = imaging::render_depth(pose.capsules, camera);
  return imaging::crop_and_normalize(frame, camera, pose.palm_centroid, config.cube_size);
}

imaging::KeypointPixels robot_keypoints(const GenerationConfig& config, const JointVector& joints) {
  const auto pose = kinematics::forward_hand(joints, config.robot_hand);
  const auto camera = config.robot_camera();
  return imaging::project_keypoints(pose.keypoints, camera, imaging::crop_window(camera, pose.palm_centroid, config.cube_size));
}

PairedSample generate_sample(const GenerationConfig& config, std::uint64_t seed, int sample_id) {
  std::mt19937_64 rng(sample_stream_seed(seed, static_cast<std::uint64_t>(sample_id)));
  const auto& layout = config.robot_hand.layout;
  std::vector<double> robot(static_cast<std::size_t>(layout.count()));
  for (int i = 0; i < layout.count(); ++i) {
    std::uniform_real_distribution<double> u(layout[i].lower, layout[i].upper);
    const double q = io::quantize_angle(u(rng));
    robot[i] = io::quantize_angle(std::clamp(q, layout[i].lower, layout[i].upper));
  }
  PairedSample s;
  s.sample_id = sample_id;
  s.joints = JointVector(std::move(robot));

  auto human = kinematics::retarget_robot_to_human(s.joints, layout, config.human_layout, config.retarget);
  std::uniform_real_distribution<double> noise(-config.human_noise, config.human_noise);
  for (int i = 0; i < human.size(); ++i) human[i] += noise(rng);
  human = kinematics::clamp_to_limits(human, config.human_layout);

  Viewpoint vp;
  vp.azimuth = std::uniform_real_distribution<double>(-config.max_azimuth, config.max_azimuth)(rng);
  vp.elevation = std::uniform_real_distribution<double>(-config.max_elevation, config.max_elevation)(rng);
  vp.radius = std::uniform_real_distribution<double>(config.min_radius, config.max_radius)(rng);
  s.viewpoint = vp;

  const auto human_pose = kinematics::forward_hand(human, config.human_hand());
  const auto human_cam =
      imaging::CameraModel::orbit(config.intrinsics, human_pose.palm_centroid, vp.azimuth, vp.elevation, vp.radius);
  s.human_image = imaging::crop_and_normalize(imaging::render_depth(human_pose.capsules, human_cam), human_cam,
                                              human_pose.palm_centroid, config.cube_size);
  s.robot_image = render_robot_image(config, s.joints);
  s.keypoints = robot_keypoints(config, s.joints);
  return s;
}

std::vector<Split> split_dataset(int n, const SplitFractions& f, std::uint64_t seed) {
  if (n < 0) throw ConfigError("sample count must be >= 0");
  for (double x : {f.train, f.val, f.test})
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  const long long n_val = std::llround(f.val * n);
  const long long n_test = std::llround(f.test * n);
  if (n_val + n_test > n) throw ConfigError("split fractions leave a negative training set");

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(sample_stream_seed(seed, 0xffffffffffffffffull));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> out(static_cast<std::size_t>(n), Split::kTrain);
  for (long long i = 0; i < n_val; ++i) out[order[i]] = Split::kVal;
  for (long long i = n_val; i < n_val + n_test; ++i) out[order[i]] = Split::kTest;
  return out;
}

fs::path image_path(const fs::path& dir, int sample_id, bool robot) {
  return dir / (robot ? "robot" : "human") / (id_string(sample_id) + ".png");
}

DatasetManifest generate_dataset(const GenerationConfig& config, int n, std::uint64_t seed, const fs::path& out_dir) {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  config.validate();
  ensure_directory(out_dir / "human");
  ensure_directory(out_dir / "robot");

  std::vector<JointVector> joints(static_cast<std::size_t>(n));
  std::vector<imaging::KeypointPixels> keypoints(static_cast<std::size_t>(n));
  std::vector<Viewpoint> viewpoints(static_cast<std::size_t>(n));
  std::vector<std::string> errors(static_cast<std::size_t>(n));

#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < n; ++i) {
    try {
      const auto s = generate_sample(config, seed, i);
      io::write_png16(image_path(out_dir, i, false), encode_image(s.human_image));
      io::write_png16(image_path(out_dir, i, true), encode_image(s.robot_image));
      joints[i] = s.joints;
      keypoints[i] = s.keypoints;
      viewpoints[i] = *s.viewpoint;
    } catch (const std::exception& e) {
      errors[i] = "sample " + std::to_string(i) + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(e);

  const auto& layout = config.robot_hand.layout;
  io::CsvTable jt{joint_header(layout), {}};
  io::CsvTable kt{keypoint_header(), {}};
  io::CsvTable vt{{"sample_id", "azimuth", "elevation", "radius"}, {}};
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ids[i] = i;
    jt.rows.push_back(joint_row(std::to_string(i), joints[i]));
    kt.rows.push_back(keypoint_row(std::to_string(i), keypoints[i]));
    vt.rows.push_back({std::to_string(i), io::format_angle(viewpoints[i].azimuth),
                       io::format_angle(viewpoints[i].elevation), io::format_angle(viewpoints[i].radius)});
  }
  io::write_csv(out_dir / "joints.csv", jt);
  io::write_csv(out_dir / "keypoints.csv", kt);
  io::write_csv(out_dir / "viewpoints.csv", vt);
  write_splits(out_dir, ids, split_dataset(n, config.split, seed));

  DatasetManifest m;
  m.sample_count = n;
  m.layout_name = layout.name();
  for (const auto& e : layout.entries()) m.joint_names.push_back(e.name);
  m.seed = seed;
  m.split_seed = seed;
  m.fractions = config.split;
  m.generator = config;
  write_manifest(out_dir, m);
  return m;
}

void resplit_dataset(const fs::path& dir, const SplitFractions& fractions, std::uint64_t seed) {
  auto m = read_manifest(dir);
  const auto table = io::read_csv(dir / "joints.csv");
  std::vector<int> ids;
  for (const auto& row : table.rows) ids.push_back(static_cast<int>(io::parse_int(row.at(0), "sample_id")));
  if (static_cast<int>(ids.size()) != m.sample_count) throw IntegrityError("joints.csv row count differs from manifest");
  write_splits(dir, ids, split_dataset(static_cast<int>(ids.size()), fractions, seed));
  m.fractions = fractions;
  m.split_seed = seed;
  write_manifest(dir, m);
}

// ---------------------------------------------------------------------------
// Loading

Dataset Dataset::open(const fs::path& dir) {
  Dataset d;
  d.dir_ = dir;
  d.manifest_ = read_manifest(dir);
  const auto& m = d.manifest_;
  const int nj = static_cast<int>(m.joint_names.size());

  const auto jt = io::read_csv(dir / "joints.csv");
  if (jt.header.size() != static_cast<std::size_t>(nj + 1) || jt.header[0] != "sample_id")
    throw FormatError("joints.csv header does not match the manifest joint names");
  for (int i = 0; i < nj; ++i)
    if (jt.header[1 + i] != m.joint_names[i]) throw FormatError("joints.csv column " + jt.header[1 + i] + " out of order");
  std::map<int, std::size_t> index_of;
  for (const auto& row : jt.rows) {
    if (row.size() != jt.header.size()) throw FormatError("joints.csv row for sample " + row.at(0) + " has wrong width");
    const int id = static_cast<int>(io::parse_int(row[0], "sample_id"));
    if (!index_of.emplace(id, d.ids_.size()).second) throw FormatError("duplicate sample_id " + row[0]);
    d.ids_.push_back(id);
    d.joints_.push_back(parse_joint_row(row, nj));
  }
  if (static_cast<int>(d.ids_.size()) != m.sample_count)
    throw IntegrityError("manifest lists " + std::to_string(m.sample_count) + " samples, joints.csv has " +
                         std::to_string(d.ids_.size()));

  const auto lookup = [&](const std::string& text, const char* file) {
    const int id = static_cast<int>(io::parse_int(text, "sample_id"));
    const auto it = index_of.find(id);
    if (it == index_of.end()) throw IntegrityError(std::string(file) + " lists unknown sample_id " + text);
    return it->second;
  };

  d.keypoints_.resize(d.ids_.size());
  std::vector<bool> seen(d.ids_.size(), false);
  const auto kt = io::read_csv(dir / "keypoints.csv");
  if (kt.header != keypoint_header()) throw FormatError("keypoints.csv header is malformed");
  for (const auto& row : kt.rows) {
    if (row.size() != kt.header.size()) throw FormatError("keypoints.csv row for sample " + row.at(0) + " has wrong width");
    const auto idx = lookup(row[0], "keypoints.csv");
    d.keypoints_[idx] = parse_keypoint_row(row);
    seen[idx] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw IntegrityError("sample " + std::to_string(d.ids_[i]) + " has no keypoints row");

  d.splits_.assign(d.ids_.size(), Split::kTrain);
  seen.assign(d.ids_.size(), false);
  const auto st = io::read_csv(dir / "splits.csv");
  for (const auto& row : st.rows) {
    if (row.size() != 2) throw FormatError("splits.csv row has wrong width");
    const auto idx = lookup(row[0], "splits.csv");
    d.splits_[idx] = parse_split(row[1]);
    seen[idx] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw IntegrityError("sample " + std::to_string(d.ids_[i]) + " has no split assignment");

  d.viewpoints_.assign(d.ids_.size(), std::nullopt);
  if (fs::exists(dir / "viewpoints.csv")) {
    const auto vt = io::read_csv(dir / "viewpoints.csv");
    for (const auto& row : vt.rows) {
      if (row.size() != 4) throw FormatError("viewpoints.csv row has wrong width");
      d.viewpoints_[lookup(row[0], "viewpoints.csv")] =
          Viewpoint{io::parse_double(row[1], "azimuth"), io::parse_double(row[2], "elevation"),
                    io::parse_double(row[3], "radius")};
    }
  }

  for (int id : d.ids_)
    for (bool robot : {false, true})
      if (!fs::exists(image_path(dir, id, robot)))
        throw IntegrityError("sample " + std::to_string(id) + ": missing " + image_path(dir, id, robot).string());
  return d;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits_.size(); ++i)
    if (splits_[i] == split) out.push_back(i);
  return out;
}

io::Gray16 Dataset::load_encoded(std::size_t index, bool robot) const {
  const int id = ids_.at(index);
  const auto path = image_path(dir_, id, robot);
  try {
    return io::read_png16(path);
  } catch (const IntegrityError&) {
    throw IntegrityError("sample " + std::to_string(id) + ": missing " + path.string());
  } catch (const FormatError& e) {
    throw FormatError("sample " + std::to_string(id) + ": " + e.what());
  }
}

PairedSample Dataset::load(std::size_t index) const {
  PairedSample s;
  s.sample_id = ids_.at(index);
  s.human_image = decode_image(load_encoded(index, false));
  s.robot_image = decode_image(load_encoded(index, true));
  s.joints = joints_[index];
  s.keypoints = keypoints_[index];
  s.viewpoint = viewpoints_[index];
  return s;
}

// ---------------------------------------------------------------------------
// Validation

int ValidationReport::total() const {
  int t = 0;
  for (const auto& [k, v] : violations) t += v;
  return t;
}

void ValidationReport::add(const std::string& invariant, const std::string& message) {
  ++violations[invariant];
  if (static_cast<int>(messages.size()) < kMaxMessages) messages.push_back(invariant + ": " + message);
}

json ValidationReport::to_json() const {
  return {{"sample_count", sample_count}, {"violations", violations}, {"total", total()}, {"messages", messages}};
}

ValidationReport empty_report() {
  ValidationReport r;
  for (const char* k : {kInvManifest, kInvSchema, kInvMissingFile, kInvImageFormat, kInvDepthRange, kInvJointLimits,
                        kInvKeypoints, kInvSampleIds, kInvSplit})
    r.violations[k] = 0;
  return r;
}

void check_sample(const PairedSample& s, const kinematics::JointLayout& layout, ValidationReport& report) {
  const std::string who = "sample " + std::to_string(s.sample_id);
  for (const auto* img : {&s.human_image, &s.robot_image})
    if (!img->in_range()) report.add(kInvDepthRange, who + (img == &s.robot_image ? " robot" : " human") + " image outside [-1, 1]");
  if (s.joints.size() == 0) {
    // joints unavailable, already reported as a schema problem
  } else if (s.joints.size() != layout.count()) {
    report.add(kInvSchema, who + " joint count mismatch");
  } else {
    for (int i = 0; i < layout.count(); ++i)
      if (s.joints[i] < layout[i].lower || s.joints[i] > layout[i].upper) {
        report.add(kInvJointLimits, who + " joint " + layout[i].name + " outside limits");
        break;
      }
  }
  for (int k = 0; k < kinematics::kKeypointCount; ++k) {
    const auto& uv = s.keypoints.uv[k];
    const bool inside = uv[0] >= 0 && uv[0] < imaging::kImageSize && uv[1] >= 0 && uv[1] < imaging::kImageSize;
    const bool ok = s.keypoints.visible[k] ? inside : (uv[0] == -1 && uv[1] == -1);
    if (!ok) {
      report.add(kInvKeypoints, who + " keypoint " + std::to_string(k) + " inconsistent with its visibility flag");
      break;
    }
  }
}

ValidationReport validate_dataset(const fs::path& dir) {
  auto report = empty_report();
  DatasetManifest m;
  try {
    m = read_manifest(dir);
  } catch (const std::exception& e) {
    report.add(kInvManifest, e.what());
    return report;
  }
  report.sample_count = m.sample_count;
  const int nj = static_cast<int>(m.joint_names.size());
  kinematics::JointLayout layout;
  if (m.generator) {
    layout = m.generator->robot_hand.layout;
  } else if (m.layout_name == kinematics::JointLayout::shadow_robot().name()) {
    layout = kinematics::JointLayout::shadow_robot();
  }
  if (layout.count() != nj) {
    report.add(kInvManifest, "joint names do not match layout " + m.layout_name);
    return report;
  }

  // Tables: one schema violation per malformed row, rows stay out of later checks.
  const auto read_table = [&](const char* name, bool required) -> std::optional<io::CsvTable> {
    try {
      return io::read_csv(dir / name);
    } catch (const IntegrityError&) {
      if (required) report.add(kInvMissingFile, std::string(name) + " is missing");
    } catch (const std::exception& e) {
      report.add(kInvSchema, e.what());
    }
    return std::nullopt;
  };

  std::map<int, JointVector> joints;
  std::map<int, imaging::KeypointPixels> keypoints;
  std::map<int, Split> splits;
  std::set<int> joint_ids;

  if (auto jt = read_table("joints.csv", true)) {
    if (jt->header != joint_header(layout)) report.add(kInvSchema, "joints.csv header does not match the layout");
    for (const auto& row : jt->rows) {
      if (row.size() != static_cast<std::size_t>(nj + 1)) {
        report.add(kInvSchema, "joints.csv row '" + row.at(0) + "' has " + std::to_string(row.size()) + " fields");
        long long id = 0;
        if (!row.empty() && std::from_chars(row[0].data(), row[0].data() + row[0].size(), id).ec == std::errc())
          joint_ids.insert(static_cast<int>(id));
        continue;
      }
      try {
        const int id = static_cast<int>(io::parse_int(row[0], "sample_id"));
        auto q = parse_joint_row(row, nj);
        if (!joint_ids.insert(id).second) {
          report.add(kInvSampleIds, "sample_id " + row[0] + " listed twice");
          continue;
        }
        joints.emplace(id, std::move(q));
      } catch (const std::exception& e) {
        report.add(kInvSchema, std::string("joints.csv: ") + e.what());
      }
    }
  }
  if (auto kt = read_table("keypoints.csv", true)) {
    if (kt->header != keypoint_header()) report.add(kInvSchema, "keypoints.csv header is malformed");
    for (const auto& row : kt->rows) {
      if (row.size() != keypoint_header().size()) {
        report.add(kInvSchema, "keypoints.csv row '" + row.at(0) + "' has " + std::to_string(row.size()) + " fields");
        continue;
      }
      try {
        keypoints[static_cast<int>(io::parse_int(row[0], "sample_id"))] = parse_keypoint_row(row);
      } catch (const std::exception& e) {
        report.add(kInvSchema, std::string("keypoints.csv: ") + e.what());
      }
    }
  }
  if (auto st = read_table("splits.csv", true)) {
    for (const auto& row : st->rows) {
      try {
        if (row.size() != 2) throw FormatError("row '" + row.at(0) + "' has wrong width");
        const int id = static_cast<int>(io::parse_int(row[0], "sample_id"));
        if (!splits.emplace(id, parse_split(row[1])).second) report.add(kInvSplit, "sample " + row[0] + " split twice");
      } catch (const std::exception& e) {
        report.add(kInvSchema, std::string("splits.csv: ") + e.what());
      }
    }
  }

  if (static_cast<int>(joint_ids.size()) != m.sample_count)
    report.add(kInvSampleIds, "manifest lists " + std::to_string(m.sample_count) + " samples, joints.csv has " +
                                  std::to_string(joint_ids.size()));
  for (const auto& [id, s] : splits)
    if (!joint_ids.count(id)) report.add(kInvSplit, "splits.csv lists unknown sample " + std::to_string(id));
  for (const auto& [id, k] : keypoints)
    if (!joint_ids.count(id)) report.add(kInvSampleIds, "keypoints.csv lists unknown sample " + std::to_string(id));

  const std::vector<int> ids(joint_ids.begin(), joint_ids.end());
  std::vector<ValidationReport> per_sample(ids.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    auto& r = per_sample[i];
    const std::string who = "sample " + std::to_string(id);
    if (!splits.count(id)) r.add(kInvSplit, who + " has no split");
    if (!keypoints.count(id)) {
      r.add(kInvKeypoints, who + " has no keypoints row");
      continue;
    }
    PairedSample s;
    s.sample_id = id;
    if (joints.count(id)) s.joints = joints.at(id);
    s.keypoints = keypoints.at(id);
    bool images_ok = true;
    for (bool robot : {false, true}) {
      const auto path = image_path(dir, id, robot);
      if (!fs::exists(path)) {
        r.add(kInvMissingFile, who + ": missing " + path.string());
        images_ok = false;
        continue;
      }
      try {
        const auto enc = io::read_png16(path);
        if (enc.width != imaging::kImageSize || enc.height != imaging::kImageSize)
          throw FormatError("image is not 96x96");
        std::vector<float> px(imaging::kPixelCount);
        for (int p = 0; p < imaging::kPixelCount; ++p) px[p] = decode_depth(enc.pixels[p]);
        std::copy(px.begin(), px.end(), (robot ? s.robot_image : s.human_image).pixels().begin());
      } catch (const std::exception& e) {
        r.add(kInvImageFormat, who + ": " + e.what());
        images_ok = false;
      }
    }
    if (!images_ok) continue;
    check_sample(s, layout, r);
  }
  for (const auto& r : per_sample)
    for (const auto& [k, v] : r.violations) report.violations[k] += v;
  for (const auto& r : per_sample)
    for (const auto& msg : r.messages)
      if (static_cast<int>(report.messages.size()) < kMaxMessages) report.messages.push_back(msg);
  return report;
}

// ---------------------------------------------------------------------------
// Conversion

ConvertReport convert_external(const fs::path& src, const fs::path& out_dir, const GenerationConfig& config) {
  config.validate();
  const auto& layout = config.robot_hand.layout;
  const auto cam_json = json_io::parse(io::read_text(src / "camera.json"), (src / "camera.json").string());
  imaging::CameraModel camera{json_io::intrinsics_from_json(get<json>(cam_json, "intrinsics"))};
  camera.validate();
  const auto frontal = get<std::string>(cam_json, "frontal_view");
  imaging::CameraModel robot_camera = config.robot_camera();
  robot_camera.intrinsics = camera.intrinsics;
  if (cam_json.contains("robot_pose")) robot_camera.pose = json_io::isometry_from_json(cam_json.at("robot_pose"));

  const auto jt = io::read_csv(src / "joints.csv");
  if (jt.header.size() != static_cast<std::size_t>(layout.count() + 1))
    throw FormatError("external joints.csv must have a name column plus " + std::to_string(layout.count()) + " joints");
  for (int i = 0; i < layout.count(); ++i)
    if (jt.header[1 + i] != layout[i].name) throw FormatError("external joints.csv column " + jt.header[1 + i] + " out of order");

  struct Center {
    double u, v, depth;
  };
  std::map<std::pair<std::string, std::string>, Center> centers;
  const auto ct = io::read_csv(src / "centers.csv");
  for (const auto& row : ct.rows) {
    if (row.size() != 5) throw FormatError("centers.csv row has wrong width");
    centers[{row[0], row[1]}] = {io::parse_double(row[2], "u"), io::parse_double(row[3], "v"),
                                 io::parse_double(row[4], "depth_mm") / 1000.0};
  }

  std::map<std::string, imaging::KeypointPixels> given_keypoints;
  const bool have_keypoints = fs::exists(src / "keypoints.csv");
  if (have_keypoints) {
    const auto kt = io::read_csv(src / "keypoints.csv");
    auto expected = keypoint_header();
    expected[0] = "name";
    if (kt.header != expected) throw FormatError("external keypoints.csv header is malformed");
    for (const auto& row : kt.rows) {
      if (row.size() != expected.size()) throw FormatError("external keypoints.csv row has wrong width");
      given_keypoints[row[0]] = parse_keypoint_row(row);
    }
  }

  const auto load_raw = [](const fs::path& p) {
    const auto enc = io::read_png16(p);
    imaging::RawDepthFrame f{enc.width, enc.height, std::vector<float>(enc.pixels.size())};
    for (std::size_t i = 0; i < enc.pixels.size(); ++i)
      f.depth[i] = enc.pixels[i] == 0 ? imaging::RawDepthFrame::kNoReturn : static_cast<float>(enc.pixels[i] / 1000.0);
    return f;
  };
  const auto center_of = [&](const std::string& name, const char* domain) {
    const auto it = centers.find({name, domain});
    if (it == centers.end()) throw IntegrityError("no " + std::string(domain) + " crop center for " + name);
    return it->second;
  };

  ensure_directory(out_dir / "human");
  ensure_directory(out_dir / "robot");
  const int n = static_cast<int>(jt.rows.size());
  if (n < 1) throw FormatError("external joints.csv has no rows");
  std::vector<JointVector> joints(static_cast<std::size_t>(n));
  std::vector<imaging::KeypointPixels> keypoints(static_cast<std::size_t>(n));
  std::vector<std::string> errors(static_cast<std::size_t>(n));

#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < n; ++i) {
    try {
      const auto& row = jt.rows[i];
      if (row.size() != jt.header.size()) throw FormatError("joints.csv row has wrong width");
      const std::string& name = row[0];
      std::vector<double> q(static_cast<std::size_t>(layout.count()));
      for (int k = 0; k < layout.count(); ++k) q[k] = io::quantize_angle(io::parse_double(row[1 + k], "joint angle"));
      joints[i] = JointVector(std::move(q));
      kinematics::check_limits(joints[i], layout);

      const auto hc = center_of(name, "human");
      const auto rc = center_of(name, "robot");
      const auto human_path = src / "human" / (name + ".png");
      const auto robot_path = src / "robot" / (name + "_" + frontal + ".png");
      if (!fs::exists(human_path)) throw IntegrityError("missing " + human_path.string());
      if (!fs::exists(robot_path)) throw IntegrityError("missing " + robot_path.string());

      const auto human = imaging::crop_and_normalize(load_raw(human_path), camera,
                                                     backproject(camera, hc.u, hc.v, hc.depth), config.cube_size);
      const Eigen::Vector3d robot_center = backproject(robot_camera, rc.u, rc.v, rc.depth);
      const auto robot = imaging::crop_and_normalize(load_raw(robot_path), robot_camera, robot_center, config.cube_size);
      io::write_png16(image_path(out_dir, i, false), encode_image(human));
      io::write_png16(image_path(out_dir, i, true), encode_image(robot));

      if (have_keypoints) {
        const auto it = given_keypoints.find(name);
        if (it == given_keypoints.end()) throw IntegrityError("no keypoints row for " + name);
        keypoints[i] = it->second;
      } else {
        keypoints[i] = imaging::project_keypoints(kinematics::forward_keypoints(joints[i], config.robot_hand),
                                                  robot_camera,
                                                  imaging::crop_window(robot_camera, robot_center, config.cube_size));
      }
    } catch (const std::exception& e) {
      errors[i] = "external sample '" + jt.rows[i].at(0) + "': " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(e);

  ConvertReport report;
  report.samples = n;
  report.keypoints_recomputed = !have_keypoints;
  if (fs::is_directory(src / "robot"))
    for (const auto& entry : fs::directory_iterator(src / "robot")) {
      const auto stem = entry.path().stem().string();
      if (entry.path().extension() == ".png" && !stem.ends_with("_" + frontal)) ++report.discarded_views;
    }

  io::CsvTable out_j{joint_header(layout), {}};
  io::CsvTable out_k{keypoint_header(), {}};
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ids[i] = i;
    out_j.rows.push_back(joint_row(std::to_string(i), joints[i]));
    out_k.rows.push_back(keypoint_row(std::to_string(i), keypoints[i]));
  }
  io::write_csv(out_dir / "joints.csv", out_j);
  io::write_csv(out_dir / "keypoints.csv", out_k);
  write_splits(out_dir, ids, split_dataset(n, config.split, 0));

  DatasetManifest m;
  m.sample_count = n;
  m.layout_name = layout.name();
  for (const auto& e : layout.entries()) m.joint_names.push_back(e.name);
  m.fractions = config.split;
  write_manifest(out_dir, m);
  return report;
}

}  // namespace handteleop::data
