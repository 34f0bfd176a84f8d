#include "handteleop/teleop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <thread>

#include "handteleop/errors.hpp"
#include "handteleop/io.hpp"
#include "handteleop/json_io.hpp"

namespace handteleop::teleop {

namespace fs = std::filesystem;
using nlohmann::json;
using kinematics::kArmJointCount;

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse(const std::string& s, const char* what) { return io::parse_double(s, what); }

}  // namespace

void GainConfig::validate() const {
  if (!(delta1 >= 0.0) || !(delta2 >= 0.0)) throw ConfigError("velocity gains must be >= 0");
  if (!(arm_rate > 0.0) || !(hand_rate > 0.0)) throw ConfigError("control rates must be > 0");
  if (!(velocity_limit > 0.0)) throw ConfigError("velocity limit must be > 0");
}

json to_json(const GainConfig& g) {
  return {{"delta1", g.delta1},
          {"delta2", g.delta2},
          {"arm_rate", g.arm_rate},
          {"hand_rate", g.hand_rate},
          {"velocity_limit", g.velocity_limit}};
}

GainConfig gains_from_json(const json& j) {
  GainConfig g;
  using json_io::get;
  if (j.contains("delta1")) g.delta1 = get<double>(j, "delta1");
  if (j.contains("delta2")) g.delta2 = get<double>(j, "delta2");
  if (j.contains("arm_rate")) g.arm_rate = get<double>(j, "arm_rate");
  if (j.contains("hand_rate")) g.hand_rate = get<double>(j, "hand_rate");
  if (j.contains("velocity_limit")) g.velocity_limit = get<double>(j, "velocity_limit");
  g.validate();
  return g;
}

ArmJoints velocity_law(const ArmJoints& ik_now, const ArmJoints& ik_prev, const ArmJoints& robot,
                       const GainConfig& gains) {
  ArmJoints v{};
  for (int n = 0; n < kArmJointCount; ++n)
    v[n] = gains.delta1 * (ik_now[n] - ik_prev[n]) + gains.delta2 * (ik_now[n] - robot[n]);
  return v;
}

ArmJoints velocity_command(const ArmJoints& ik_now, const ArmJoints& ik_prev, const ArmJoints& robot,
                           const GainConfig& gains) {
  auto v = velocity_law(ik_now, ik_prev, robot, gains);
  const double lim = gains.per_tick_limit();
  for (auto& x : v) x = std::clamp(x, -lim, lim);
  return v;
}

ArmState step_plant(const ArmState& state, const ArmJoints& command, double dt, const kinematics::ArmChain& chain,
                    double tick) {
  if (!(dt > 0.0) || !(tick > 0.0)) throw ContractError("plant step needs dt > 0 and tick > 0");
  ArmState next = state;
  const double ticks = dt / tick;
  for (int n = 0; n < kArmJointCount; ++n) {
    const auto& j = chain.joints[n];
    next.joints[n] = std::clamp(state.joints[n] + command[n] * ticks, j.lower, j.upper);
    next.velocities[n] = (next.joints[n] - state.joints[n]) / dt;
  }
  next.timestamp = state.timestamp + dt;
  return next;
}

void ReplayTrajectory::validate() const {
  for (std::size_t i = 0; i < arm.size(); ++i) {
    const auto& s = arm[i];
    if (!std::isfinite(s.t) || !s.pose.position.allFinite() || !s.pose.orientation.coeffs().allFinite())
      throw ContractError("arm sample " + std::to_string(i) + " is not finite");
    if (std::abs(s.pose.orientation.norm() - 1.0) > 1e-6)
      throw ContractError("arm sample " + std::to_string(i) + ": orientation is not a unit quaternion");
    if (i > 0 && !(s.t > arm[i - 1].t)) throw ContractError("arm timestamps must be strictly increasing");
  }
  for (std::size_t i = 0; i < hand.size(); ++i) {
    if (!std::isfinite(hand[i].t)) throw ContractError("hand sample " + std::to_string(i) + " has a non-finite time");
    if (i > 0 && !(hand[i].t > hand[i - 1].t)) throw ContractError("hand timestamps must be strictly increasing");
  }
}

kinematics::WristPose interpolate(const std::vector<ArmSample>& arm, double t) {
  if (arm.empty()) throw ContractError("empty arm channel");
  if (t <= arm.front().t) return arm.front().pose;
  if (t >= arm.back().t) return arm.back().pose;
  const auto it = std::upper_bound(arm.begin(), arm.end(), t, [](double v, const ArmSample& s) { return v < s.t; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double u = (t - a.t) / (b.t - a.t);
  kinematics::WristPose p;
  p.position = (1.0 - u) * a.pose.position + u * b.pose.position;
  p.orientation = a.pose.orientation.slerp(u, b.pose.orientation).normalized();
  return p;
}

ReplayTrajectory read_trajectory(const fs::path& dir) {
  ReplayTrajectory tr;
  const auto arm_path = dir / "arm.csv";
  if (!fs::exists(arm_path)) throw IntegrityError("missing " + arm_path.string());
  const auto at = io::read_csv(arm_path);
  const std::size_t c[8] = {at.column("t"),  at.column("x"),  at.column("y"),  at.column("z"),
                            at.column("qw"), at.column("qx"), at.column("qy"), at.column("qz")};
  for (const auto& row : at.rows) {
    if (row.size() != at.header.size()) throw FormatError("malformed row in " + arm_path.string());
    ArmSample s;
    s.t = parse(row[c[0]], "t");
    s.pose.position = {parse(row[c[1]], "x"), parse(row[c[2]], "y"), parse(row[c[3]], "z")};
    s.pose.orientation = Eigen::Quaterniond(parse(row[c[4]], "qw"), parse(row[c[5]], "qx"), parse(row[c[6]], "qy"),
                                            parse(row[c[7]], "qz"));
    tr.arm.push_back(s);
  }
  const auto hand_path = dir / "hand.csv";
  if (fs::exists(hand_path)) {
    const auto ht = io::read_csv(hand_path);
    const auto ct = ht.column("t"), ci = ht.column("image");
    for (const auto& row : ht.rows) {
      if (row.size() != ht.header.size()) throw FormatError("malformed row in " + hand_path.string());
      fs::path p = row[ci];
      tr.hand.push_back({parse(row[ct], "t"), p.is_absolute() ? p : dir / p});
    }
  }
  tr.validate();
  return tr;
}

void write_trajectory(const fs::path& dir, const ReplayTrajectory& tr) {
  tr.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  io::CsvTable at{{"t", "x", "y", "z", "qw", "qx", "qy", "qz"}, {}};
  for (const auto& s : tr.arm) {
    const auto& q = s.pose.orientation;
    at.rows.push_back({g17(s.t), g17(s.pose.position.x()), g17(s.pose.position.y()), g17(s.pose.position.z()), g17(q.w()),
                       g17(q.x()), g17(q.y()), g17(q.z())});
  }
  io::write_csv(dir / "arm.csv", at);
  io::CsvTable ht{{"t", "image"}, {}};
  for (const auto& s : tr.hand) {
    const auto rel = s.image.lexically_relative(dir);
    ht.rows.push_back({g17(s.t), (rel.empty() || *rel.begin() == "..") ? s.image.string() : rel.string()});
  }
  io::write_csv(dir / "hand.csv", ht);
}

TeleopLog run_replay(const ReplayTrajectory& trajectory, const model::Network<float>* network,
                     const kinematics::ArmChain& chain, const kinematics::JointLayout& hand_layout,
                     const GainConfig& gains, const ReplayOptions& options) {
  trajectory.validate();
  gains.validate();
  chain.validate();
  if (trajectory.arm.empty() && trajectory.hand.empty()) throw ContractError("trajectory has no samples");
  if (options.duration < 0.0) throw ContractError("duration must be >= 0");

  const auto& arm = trajectory.arm;
  const auto& hand = trajectory.hand;
  double t_begin = std::numeric_limits<double>::infinity(), t_last = -std::numeric_limits<double>::infinity();
  if (!arm.empty()) t_begin = std::min(t_begin, arm.front().t), t_last = std::max(t_last, arm.back().t);
  if (!hand.empty()) t_begin = std::min(t_begin, hand.front().t), t_last = std::max(t_last, hand.back().t);
  const double t_end = options.duration > 0.0 ? t_begin + options.duration : t_last;
  const bool run_arm = !arm.empty();
  const bool run_hand = !hand.empty() && network != nullptr;

  ArmState state;
  if (options.initial_joints) {
    kinematics::check_arm_limits(*options.initial_joints, chain);
    state.joints = *options.initial_joints;
  } else {
    state.joints = kinematics::clamp_arm(ArmJoints{}, chain);
  }
  state.timestamp = t_begin;
  std::optional<ArmJoints> ik_prev;

  TeleopLog log;
  const double eps = 1e-9;
  const auto arm_time = [&](std::int64_t k) { return t_begin + static_cast<double>(k) / gains.arm_rate; };
  const auto hand_time = [&](std::int64_t k) { return t_begin + static_cast<double>(k) / gains.hand_rate; };
  std::int64_t ka = 0, kh = 0;
  std::size_t hand_cursor = 0;
  std::map<std::size_t, imaging::DepthImage> decoded;
  const auto wall_start = std::chrono::steady_clock::now();

  const auto pace = [&](double t) {
    if (!options.realtime) return;
    std::this_thread::sleep_until(wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                   std::chrono::duration<double>(t - t_begin)));
  };

  while (true) {
    const double ta = run_arm ? arm_time(ka) : std::numeric_limits<double>::infinity();
    const double th = run_hand ? hand_time(kh) : std::numeric_limits<double>::infinity();
    const bool arm_due = run_arm && ta <= t_end + eps;
    const bool hand_due = run_hand && th <= t_end + eps;
    if (!arm_due && !hand_due) break;

    if (arm_due && (!hand_due || ta <= th)) {
      pace(ta);
      const auto target = interpolate(arm, ta);
      ArmTick rec;
      rec.tick = ka;
      rec.t = ta;
      try {
        const auto r = kinematics::arm_ik(target, ik_prev ? *ik_prev : state.joints, chain, options.ik);
        rec.ik = r.joints;
        rec.ik_residual = r.residual;
      } catch (const UnreachableTarget& e) {
        if (e.residual() <= options.accept_residual) {
          std::copy_n(e.best_joints().begin(), kArmJointCount, rec.ik.begin());
          rec.ik_residual = e.residual();
        } else {
          // hold the previous target; the feedback term keeps pulling toward it
          rec.ik = ik_prev ? *ik_prev : state.joints;
          rec.ik_ok = false;
          rec.ik_residual = e.residual();
          log.events.push_back({ta, "ik_unreachable", "residual " + g17(e.residual())});
        }
      }
      const ArmJoints prev = ik_prev ? *ik_prev : rec.ik;
      rec.command = velocity_command(rec.ik, prev, state.joints, gains);
      state = step_plant(state, rec.command, gains.tick(), chain, gains.tick());
      state.timestamp = arm_time(ka + 1);
      ik_prev = rec.ik;
      rec.joints = state.joints;
      for (int n = 0; n < kArmJointCount; ++n) rec.joint_error = std::max(rec.joint_error, std::abs(rec.ik[n] - state.joints[n]));
      const auto e = kinematics::pose_error(target, kinematics::arm_fk(state.joints, chain));
      rec.position_error = e.head<3>().norm();
      rec.rotation_error = e.tail<3>().norm();
      log.arm.push_back(rec);
      ++ka;
    } else {
      pace(th);
      while (hand_cursor + 1 < hand.size() && hand[hand_cursor + 1].t <= th + eps) ++hand_cursor;
      if (hand[hand_cursor].t <= th + eps) {
        auto it = decoded.find(hand_cursor);
        if (it == decoded.end())
          it = decoded.emplace(hand_cursor, data::decode_image(io::read_png16(hand[hand_cursor].image))).first;
        HandTick h;
        h.tick = kh;
        h.t = th;
        h.image_t = hand[hand_cursor].t;
        h.joints = network->infer_joints(it->second, hand_layout);
        log.hand.push_back(std::move(h));
      }
      ++kh;
    }
  }
  return log;
}

void write_log(const fs::path& dir, const TeleopLog& log, const kinematics::JointLayout& hand_layout) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  io::CsvTable at;
  at.header = {"tick", "t"};
  for (const char* group : {"ik", "cmd", "q"})
    for (int n = 0; n < kArmJointCount; ++n) at.header.push_back(std::string(group) + std::to_string(n));
  for (const char* h : {"ik_ok", "ik_residual", "joint_error", "position_error", "rotation_error"}) at.header.push_back(h);
  for (const auto& r : log.arm) {
    std::vector<std::string> row{std::to_string(r.tick), g17(r.t)};
    for (const auto* v : {&r.ik, &r.command, &r.joints})
      for (double x : *v) row.push_back(g17(x));
    row.push_back(r.ik_ok ? "1" : "0");
    row.push_back(g17(r.ik_residual));
    row.push_back(g17(r.joint_error));
    row.push_back(g17(r.position_error));
    row.push_back(g17(r.rotation_error));
    at.rows.push_back(std::move(row));
  }
  io::write_csv(dir / "arm_log.csv", at);

  io::CsvTable ht;
  ht.header = {"tick", "t", "image_t"};
  for (const auto& e : hand_layout.entries()) ht.header.push_back(e.name);
  for (const auto& h : log.hand) {
    std::vector<std::string> row{std::to_string(h.tick), g17(h.t), g17(h.image_t)};
    for (double v : h.joints.values()) row.push_back(io::format_angle(v));
    ht.rows.push_back(std::move(row));
  }
  io::write_csv(dir / "hand_log.csv", ht);

  io::CsvTable et{{"t", "kind", "detail"}, {}};
  for (const auto& e : log.events) et.rows.push_back({g17(e.t), e.kind, e.detail});
  io::write_csv(dir / "events.csv", et);
}

ReplayTrajectory synthesize_trajectory(const data::Dataset& dataset, const kinematics::ArmChain& chain,
                                       const fs::path& out_dir, double seconds, std::uint64_t seed,
                                       const GainConfig& gains) {
  if (!(seconds > 0.0)) throw ContractError("trajectory length must be > 0");
  gains.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(0.05, 0.25), phase(0.0, 2.0 * std::numbers::pi);
  ArmJoints mid{}, amp{}, f{}, ph{};
  for (int n = 0; n < kArmJointCount; ++n) {
    const auto& j = chain.joints[n];
    mid[n] = 0.5 * (j.lower + j.upper);
    amp[n] = std::min(0.3, 0.25 * (j.upper - j.lower));
    f[n] = freq(rng);
    ph[n] = phase(rng);
  }
  ReplayTrajectory tr;
  constexpr double kMocapRate = 30.0;  // recorded faster than the arm loop, so interpolation is exercised
  const auto na = static_cast<std::int64_t>(std::floor(seconds * kMocapRate));
  for (std::int64_t k = 0; k <= na; ++k) {
    const double t = static_cast<double>(k) / kMocapRate;
    ArmJoints q{};
    for (int n = 0; n < kArmJointCount; ++n) q[n] = mid[n] + amp[n] * std::sin(2.0 * std::numbers::pi * f[n] * t + ph[n]);
    tr.arm.push_back({t, kinematics::arm_fk(q, chain)});
  }

  auto pool = dataset.indices(data::Split::kTest);
  if (pool.empty())
    for (std::size_t i = 0; i < dataset.size(); ++i) pool.push_back(i);
  if (pool.empty()) throw ContractError("dataset has no samples for the hand channel");
  std::error_code ec;
  fs::create_directories(out_dir / "hand", ec);
  if (ec) throw Error("cannot create " + (out_dir / "hand").string() + ": " + ec.message());
  const auto nh = static_cast<std::int64_t>(std::floor(seconds * gains.hand_rate));
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (std::int64_t k = 0; k <= nh; ++k) {
    const auto idx = pool[pick(rng)];
    char name[32];
    std::snprintf(name, sizeof(name), "%06lld.png", static_cast<long long>(k));
    const auto dst = out_dir / "hand" / name;
    fs::copy_file(data::image_path(dataset.directory(), dataset.sample_id(idx), false), dst,
                  fs::copy_options::overwrite_existing);
    tr.hand.push_back({static_cast<double>(k) / gains.hand_rate, dst});
  }
  write_trajectory(out_dir, tr);
  return tr;
}

}  // namespace handteleop::teleop
