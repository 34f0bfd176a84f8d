// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   acceptance                   all criteria
//   acceptance --only 1,2,3      a subset
//   acceptance --work DIR        scratch directory for datasets and runs

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "handteleop/checkpoint.hpp"
#include "handteleop/data.hpp"
#include "handteleop/errors.hpp"
#include "handteleop/evaluation.hpp"
#include "handteleop/imaging.hpp"
#include "handteleop/kinematics.hpp"
#include "handteleop/model.hpp"
#include "handteleop/teleop.hpp"
#include "handteleop/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace ht = handteleop;
namespace km = handteleop::kinematics;
namespace tp = handteleop::teleop;
namespace tr = handteleop::training;
namespace ev = handteleop::evaluation;
namespace fs = std::filesystem;
using ht::model::ArchConfig;
using ht::model::Network;
using ht::model::Variant;
using ht::nn::Tensor;
using km::JointVector;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> failures;

  void require(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    if (failures.size() < 5) failures.push_back(what);
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Relative path -> bytes for every regular file below `dir`.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

fs::path fresh(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double mean_abs_error(const Network<float>& net, const ht::data::Dataset& ds, const std::vector<std::size_t>& idx) {
  const auto p = ev::predict(net, ds, idx, ev::dataset_robot_hand(ds).layout);
  std::vector<JointVector> gts;
  for (auto i : idx) gts.push_back(ds.joints(i));
  const auto pj = ev::per_joint_error(p.joints, gts);
  return std::accumulate(pj.begin(), pj.end(), 0.0) / static_cast<double>(pj.size());
}

// Loss columns of train_log.csv: wall-clock time is the one nondeterministic field.
std::string loss_trace(const fs::path& run) {
  std::istringstream in(slurp(run / "train_log.csv"));
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

template <typename T>
Tensor<T> dip_images(int n, std::uint64_t seed) {
  const auto d = gradcheck::dip_images(n, seed);
  Tensor<T> t(d.shape);
  for (std::size_t i = 0; i < d.size(); ++i) t.data[i] = static_cast<T>(d.data[i]);
  return t;
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
  Outcome o;
  int groups = 0, kinks = 0;
  double worst = 0.0;
  std::string worst_group;
  for (const Variant v : {Variant::kTransteleop, Variant::kRobotOnly}) {
    const auto r = gradcheck::run(v, ArchConfig::desk(), 2);
    o.require(r.every_group_checked, std::string(ht::model::to_string(v)) + ": a parameter group had no smooth coordinate");
    groups += static_cast<int>(r.groups.size());
    kinks += r.skipped_kinks;
    if (r.worst > worst) {
      worst = r.worst;
      worst_group = r.worst_group;
    }
  }
  o.require(worst < 1e-3, "max relative error " + fmt("%.3g", worst) + " in " + worst_group);
  o.detail = "max rel err " + fmt("%.2e", worst) + " over " + std::to_string(groups) + " groups (" + worst_group +
             "), " + std::to_string(kinks) + " kink coordinates skipped";
  return o;
}

Outcome weight_maps() {
  Outcome o;
  constexpr double sigma = 3.0, floor = 0.1;
  constexpr int S = ht::imaging::kImageSize;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pix(0, S - 1);
  std::bernoulli_distribution vis(0.7);
  int single = 0;
  for (int set = 0; set < 100; ++set) {
    ht::imaging::KeypointPixels kp;
    const bool one = set % 4 == 0;  // every 4th set has a single visible keypoint
    for (int k = 0; k < km::kKeypointCount; ++k) {
      kp.uv[k] = {pix(rng), pix(rng)};
      kp.visible[k] = one ? k == set % km::kKeypointCount : vis(rng);
    }
    const auto m = ht::imaging::build_weight_map(kp, sigma, floor);
    const std::string tag = "set " + std::to_string(set);
    for (double a : m.alpha) {
      o.require(a >= 0.0 && a <= 1.0, tag + ": alpha outside [0,1]");
      o.require(a >= floor, tag + ": alpha below the floor");
    }
    for (int k = 0; k < km::kKeypointCount; ++k) {
      if (!kp.visible[k]) continue;
      const int c = kp.uv[k][0], r = kp.uv[k][1];
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= S || cc < 0 || cc >= S) continue;
          o.require(m(rr, cc) == 1.0, tag + ": alpha != 1 next to a visible keypoint");
        }
    }
    if (one) {
      ++single;
      const int k = set % km::kKeypointCount;
      const int c = kp.uv[k][0], r = kp.uv[k][1];
      // min and max alpha per Chebyshev ring; rings farther out never exceed nearer ones
      std::vector<double> lo(2 * S, 2.0), hi(2 * S, -1.0);
      for (int rr = 0; rr < S; ++rr)
        for (int cc = 0; cc < S; ++cc) {
          const int d = std::max(std::abs(rr - r), std::abs(cc - c));
          lo[d] = std::min(lo[d], m(rr, cc));
          hi[d] = std::max(hi[d], m(rr, cc));
        }
      for (int d = 0; d + 1 < 2 * S; ++d) {
        if (hi[d + 1] < 0.0 || lo[d] > 1.5) continue;
        o.require(hi[d + 1] <= lo[d], tag + ": alpha increases from ring " + std::to_string(d));
        o.require(lo[d] == hi[d], tag + ": alpha not constant on ring " + std::to_string(d));
      }
    }
  }
  o.detail = "100 keypoint sets (" + std::to_string(single) + " single-keypoint), sigma 3, floor 0.1";
  return o;
}

Outcome loss_identities() {
  Outcome o;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-1.0, 1.0), a(0.0, 1.0);
  std::vector<float> x(9216), y(9216);
  for (int i = 0; i < 9216; ++i) {
    x[i] = static_cast<float>(d(rng));
    y[i] = static_cast<float>(d(rng));
  }
  const ht::imaging::DepthImage ix(x), iy(y);
  ht::imaging::WeightMap random_alpha, ones;
  for (int i = 0; i < 9216; ++i) random_alpha.alpha.push_back(a(rng));
  ones.alpha.assign(9216, 1.0);

  const double same = ht::model::recon_loss(ix, ix, random_alpha);
  o.require(same == 0.0, "identical images give " + fmt("%.17g", same));

  double mse = 0.0;
  for (int i = 0; i < 9216; ++i) mse += (double(x[i]) - y[i]) * (double(x[i]) - y[i]);
  mse /= 9216.0;
  const double plain = ht::model::recon_loss(ix, iy, ones);
  o.require(std::abs(plain - mse) <= 1e-12, "alpha = 1 differs from MSE by " + fmt("%.3g", plain - mse));

  // 2x2: alpha (1, .5, .1, .1), target (.2, .2, 1, -1), reconstruction 0
  //   (1*.04 + .5*.04 + .1*1 + .1*1) / 4 = .26 / 4
  const double small = ht::model::recon_loss(std::vector<double>{0.2, 0.2, 1.0, -1.0},
                                             std::vector<double>{0.0, 0.0, 0.0, 0.0},
                                             std::vector<double>{1.0, 0.5, 0.1, 0.1});
  o.require(small == 0.065, "2x2 case gives " + fmt("%.17g", small));

  std::vector<double> gt(19, 0.25), pred(19, 0.25);
  pred[11] += 0.19;
  const double jl = ht::model::joint_loss(pred, gt);
  o.require(std::abs(jl - 0.19 * 0.19 / 19.0) <= 1e-12, "joint case gives " + fmt("%.17g", jl));

  o.detail = "identical 0, |alpha=1 - MSE| " + fmt("%.1e", std::abs(plain - mse)) + ", 2x2 " + fmt("%.17g", small) +
             ", joint " + fmt("%.6g", jl);
  return o;
}

Outcome shapes() {
  Outcome o;
  Network<float> net(ArchConfig::full(), Variant::kTransteleop, 7);
  const auto x = dip_images<float>(1, 3);
  const auto out = net.forward_eval(x);
  o.require(out.encoder_feature.shape == std::vector<int>{1, 512, 6, 6}, "encoder feature is not 6x6x512");
  o.require(out.z_h.shape == std::vector<int>{1, 8192}, "Z_H is not 8192");
  o.require(out.joints.shape == std::vector<int>{1, 19}, "joint head is not 19");
  o.require(out.reconstruction.shape == std::vector<int>{1, 1, 96, 96}, "reconstruction is not 96x96");
  double stn = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) stn = std::max(stn, std::abs(double(out.stn_output.data[i]) - x.data[i]));
  o.require(stn <= 1e-6, "STN at init moves the image by " + fmt("%.3g", stn));
  o.detail = "encoder 6x6x512, Z_H 8192, joints 19, reconstruction 96x96, STN identity err " + fmt("%.1e", stn);
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  const auto skel = km::HandSkeleton::shadow_robot();
  const auto& layout = skel.layout;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> noise(0.0, 0.08);
  std::vector<JointVector> preds, gts;
  for (int f = 0; f < 1000; ++f) {
    const auto g = testutil::random_joints(layout, rng);
    auto p = g;
    for (int j = 0; j < p.size(); ++j) p[j] += noise(rng);
    gts.push_back(g);
    preds.push_back(km::clamp_to_limits(p, layout));
  }
  const auto ath = ev::default_angle_thresholds();
  const auto dth = ev::default_distance_thresholds_mm();

  // brute force: one threshold, one frame at a time
  std::vector<double> worst_angle, worst_mm;
  for (std::size_t f = 0; f < preds.size(); ++f) {
    double wa = 0.0, wd = 0.0;
    for (int j = 0; j < preds[f].size(); ++j) wa = std::max(wa, std::abs(preds[f][j] - gts[f][j]));
    const auto kp = oracle::hand_keypoints(skel, preds[f]);
    const auto kg = oracle::hand_keypoints(skel, gts[f]);
    for (std::size_t k = 0; k < kp.size(); ++k) {
      const double dx = kp[k][0] - kg[k][0], dy = kp[k][1] - kg[k][1], dz = kp[k][2] - kg[k][2];
      wd = std::max(wd, 1000.0 * std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    worst_angle.push_back(wa);
    worst_mm.push_back(wd);
  }
  const auto brute = [](const std::vector<double>& worst, const std::vector<double>& th) {
    std::vector<double> out;
    for (double t : th) {
      int below = 0;
      for (double w : worst)
        if (w < t) ++below;
      out.push_back(static_cast<double>(below) / static_cast<double>(worst.size()));
    }
    return out;
  };
  const auto ac = ev::angle_curve(preds, gts, ath);
  const auto dc = ev::distance_curve(preds, gts, dth, skel);
  o.require(ac == brute(worst_angle, ath), "angle curve differs from brute force");
  o.require(dc == brute(worst_mm, dth), "distance curve differs from brute force");
  o.require(std::is_sorted(ac.begin(), ac.end()), "angle curve decreases");
  o.require(std::is_sorted(dc.begin(), dc.end()), "distance curve decreases");

  const auto pj = ev::per_joint_error(preds, gts);
  o.require(pj.size() == 19, "per-joint error has the wrong length");
  for (int j = 0; j < 19 && j < static_cast<int>(pj.size()); ++j) {
    double s = 0.0;
    for (std::size_t f = 0; f < preds.size(); ++f) s += std::abs(preds[f][j] - gts[f][j]);
    o.require(pj[j] == s / 1000.0, "per-joint error of joint " + std::to_string(j) + " differs from brute force");
  }
  o.detail = "1000 frames, " + std::to_string(ath.size()) + " angle and " + std::to_string(dth.size()) +
             " distance thresholds, 19 joints";
  return o;
}

// Stages of 250 steps; resume is exact, so this is one uninterrupted run that stops
// as soon as the training set is fit.
Outcome overfit(const fs::path& work) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  ht::data::GenerationConfig g;
  g.split = {1.0, 0.0, 0.0};
  const auto data_dir = fresh(work / "overfit_data");
  ht::data::generate_dataset(g, 64, 7, data_dir);
  const auto ds = ht::data::Dataset::open(data_dir);
  const auto idx = ds.indices(ht::data::Split::kTrain);
  o.require(idx.size() == 64, "dataset has " + std::to_string(idx.size()) + " training samples");

  tr::TrainConfig c;
  c.batch_size = 16;
  c.seed = 3;
  c.adam.learning_rate = 2e-4;
  c.checkpoint_every = 0;
  c.validate_every = 0;
  const auto run = fresh(work / "overfit_run");
  double err = 1e9;
  std::int64_t steps = 0;
  for (steps = 250; steps <= 3000; steps += 250) {
    c.steps = steps;
    tr::TrainOptions opt;
    if (steps > 250) opt.resume_from = run / "final";
    const auto res = tr::train(c, ds, run, opt);
    err = mean_abs_error(ht::checkpoint::load(res.final_checkpoint).network, ds, idx);
    std::printf("  overfit: step %lld train mean abs err %.4f rad (%.0f s)\n", static_cast<long long>(steps), err,
                seconds_since(t0));
    std::fflush(stdout);
    if (err < 0.05) break;
  }
  const double secs = seconds_since(t0);
  o.require(err < 0.05, "training-set mean abs joint error " + fmt("%.4f", err) + " rad after 3000 steps");
  o.require(secs < 15 * 60, "took " + fmt("%.0f", secs) + " s");
  o.detail = "64 pairs, batch 16, " + std::to_string(std::min<std::int64_t>(steps, 3000)) +
             " steps, train mean abs err " + fmt("%.4f", err) + " rad";
  return o;
}

Outcome ablation(const fs::path& work) {
  Outcome o;
  constexpr int n = 10000, held_out = 256;
  constexpr std::int64_t budget = 3000;
  const auto t0 = std::chrono::steady_clock::now();
  ht::data::GenerationConfig g;
  g.split = {1.0, 0.0, 0.0};
  const auto data_dir = fresh(work / "ablation_data");
  ht::data::generate_dataset(g, n, 21, data_dir);
  const auto ds = ht::data::Dataset::open(data_dir);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) (i < n - held_out ? train_idx : test_idx).push_back(i);

  std::map<Variant, double> err;
  for (const Variant v : {Variant::kRobotOnly, Variant::kTransteleop}) {
    tr::TrainConfig c;
    c.variant = v;
    c.batch_size = 16;
    c.steps = budget;
    c.seed = 5;
    c.adam.learning_rate = 2e-4;
    c.checkpoint_every = 0;
    c.validate_every = 0;
    tr::TrainOptions opt;
    opt.train_indices = train_idx;
    const auto res = tr::train(c, ds, fresh(work / ("ablation_" + std::string(ht::model::to_string(v)))), opt);
    err[v] = mean_abs_error(ht::checkpoint::load(res.final_checkpoint).network, ds, test_idx);
    std::printf("  ablation: %s held-out mean joint error %.4f rad (%.0f s)\n", std::string(ht::model::to_string(v)).c_str(),
                err[v], seconds_since(t0));
    std::fflush(stdout);
  }
  const double ro = err[Variant::kRobotOnly], tt = err[Variant::kTransteleop];
  const double secs = seconds_since(t0);
  o.require(ro <= tt + 0.01, "robotonly " + fmt("%.4f", ro) + " > transteleop " + fmt("%.4f", tt) + " + 0.01");
  o.require(secs < 2 * 3600, "took " + fmt("%.0f", secs) + " s");
  o.detail = "10000 samples, 256 held out, " + std::to_string(budget) + " steps each: robotonly " + fmt("%.4f", ro) +
             " vs transteleop " + fmt("%.4f", tt) + " rad";
  return o;
}

Outcome controller() {
  Outcome o;
  const tp::GainConfig g;
  tp::ArmJoints ik{}, prev{}, robot{};
  ik.fill(0.5);
  prev.fill(0.4);
  robot.fill(0.45);
  const auto v = tp::velocity_law(ik, prev, robot, g);
  // binary128 oracle: products and sum of these doubles are exact there, one rounding at the end
  using q = __float128;
  const q p1 = q(g.delta1) * q(double(0.5 - 0.4)), p2 = q(g.delta2) * q(double(0.5 - 0.45));
  const double oracle = static_cast<double>(p1 + p2);
  const double lo = std::nextafter(0.075, 0.0), hi = std::nextafter(0.075, 1.0);
  for (double x : v) {
    o.require(x == oracle, "velocity law " + fmt("%.17g", x) + " != correctly rounded " + fmt("%.17g", oracle));
    o.require(x >= lo && x <= hi, "velocity law " + fmt("%.17g", x) + " is not within 1 ulp of 0.075");
  }

  const auto chain = km::ArmChain::pr2_right();
  std::mt19937_64 rng(3);
  double decay = 0.0;
  {
    const auto target = testutil::random_arm(chain, rng, 0.5);
    tp::ArmState s;
    for (int n = 0; n < km::kArmJointCount; ++n) s.joints[n] = target[n] + (n % 2 ? 0.3 : -0.3);
    for (int tick = 0; tick < 150; ++tick) {
      tp::ArmJoints e0{};
      for (int n = 0; n < km::kArmJointCount; ++n) e0[n] = target[n] - s.joints[n];
      s = tp::step_plant(s, tp::velocity_command(target, target, s.joints, g), g.tick(), chain, g.tick());
      for (int n = 0; n < km::kArmJointCount; ++n) decay = std::max(decay, std::abs((target[n] - s.joints[n]) - 0.9 * e0[n]));
    }
  }
  o.require(decay <= 1e-12, "error decay deviates from 0.9 per tick by " + fmt("%.3g", decay));

  int slowest = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto q_target = testutil::random_arm(chain, rng, 0.4);
    tp::ReplayTrajectory traj;
    const auto pose = km::arm_fk(q_target, chain);
    traj.arm = {{0.0, pose}, {12.0, pose}};
    tp::ReplayOptions opt;
    auto start = q_target;
    for (int n = 0; n < km::kArmJointCount; ++n) start[n] += n % 2 ? 0.15 : -0.15;
    opt.initial_joints = start;
    const auto log = tp::run_replay(traj, nullptr, chain, km::JointLayout::shadow_robot(), g, opt);
    int converged = -1;
    for (const auto& r : log.arm)
      if (converged < 0 && r.joint_error < 1e-3) converged = static_cast<int>(r.tick);
    o.require(converged >= 0 && converged < 200, "static replay " + std::to_string(trial) + " did not converge in 200 ticks");
    slowest = std::max(slowest, converged);
  }
  o.detail = "law " + fmt("%.17g", v[0]) + " (correctly rounded, within 1 ulp of 0.075), decay dev " + fmt("%.1e", decay) +
             ", static replay below 1e-3 rad by tick " + std::to_string(slowest);
  return o;
}

Outcome kinematics_suite() {
  Outcome o;
  const auto chain = km::ArmChain::pr2_right();
  const auto skel = km::HandSkeleton::shadow_robot();
  std::mt19937_64 rng(41);
  double arm_dev = 0.0, hand_dev = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = testutil::random_arm(chain, rng);
    const auto p = km::arm_fk(q, chain);
    const auto t = oracle::arm_wrist(chain, q);
    arm_dev = std::max(arm_dev, (p.position - Eigen::Vector3d(t[3], t[7], t[11])).norm());

    const auto hq = testutil::random_joints(skel.layout, rng);
    const auto kp = km::forward_keypoints(hq, skel);
    const auto ko = oracle::hand_keypoints(skel, hq);
    for (std::size_t k = 0; k < ko.size(); ++k)
      hand_dev = std::max(hand_dev, (kp[k] - Eigen::Vector3d(ko[k][0], ko[k][1], ko[k][2])).norm());
  }
  o.require(arm_dev < 1e-9, "arm FK differs from the oracle by " + fmt("%.3g", arm_dev) + " m");
  o.require(hand_dev < 1e-9, "hand FK differs from the oracle by " + fmt("%.3g", hand_dev) + " m");

  std::uniform_real_distribution<double> jitter(-0.15, 0.15);
  double pos = 0.0, rot = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto target_q = testutil::random_arm(chain, rng, 0.05);
    auto seed = target_q;
    for (auto& v : seed) v += jitter(rng);
    seed = km::clamp_arm(seed, chain);
    const auto target = km::arm_fk(target_q, chain);
    try {
      const auto got = km::arm_fk(km::arm_ik(target, seed, chain).joints, chain);
      pos = std::max(pos, (got.position - target.position).norm());
      rot = std::max(rot, got.orientation.angularDistance(target.orientation));
    } catch (const ht::UnreachableTarget&) {
      o.require(false, "IK failed on reachable target " + std::to_string(trial));
    }
  }
  o.require(pos < 1e-3, "round-trip position error " + fmt("%.3g", pos) + " m");
  o.require(rot < 1e-2, "round-trip orientation error " + fmt("%.3g", rot) + " rad");
  o.detail = "FK vs oracle arm " + fmt("%.1e", arm_dev) + " m, hand " + fmt("%.1e", hand_dev) + " m; FK(IK) on 100 targets " +
             fmt("%.1e", pos) + " m / " + fmt("%.1e", rot) + " rad";
  return o;
}

Outcome reproducibility(const fs::path& work) {
  Outcome o;
  ht::data::GenerationConfig g;
  const auto da = fresh(work / "repro_data_a"), db = fresh(work / "repro_data_b");
  ht::data::generate_dataset(g, 40, 99, da);
  ht::data::generate_dataset(g, 40, 99, db);
  const auto ta = tree(da);
  o.require(ta == tree(db), "two dataset generations differ");
  const auto ds = ht::data::Dataset::open(da);

  tr::TrainConfig c;
  c.batch_size = 4;
  c.steps = 6;
  c.seed = 12;
  c.checkpoint_every = 3;
  c.validate_every = 3;
  const auto ra = fresh(work / "repro_run_a"), rb = fresh(work / "repro_run_b"), rc = fresh(work / "repro_run_c");
  const auto a = tr::train(c, ds, ra);
  tr::train(c, ds, rb);
  o.require(loss_trace(ra) == loss_trace(rb), "two training runs have different loss traces");
  o.require(slurp(ra / "validation_log.csv") == slurp(rb / "validation_log.csv"), "validation logs differ");
  o.require(tree(ra / "final") == tree(rb / "final"), "final checkpoints differ");

  auto half = c;
  half.steps = 3;
  tr::train(half, ds, rc);
  tr::TrainOptions resume;
  resume.resume_from = rc / "final";
  const auto b = tr::train(c, ds, rc, resume);
  bool same_losses = a.log.steps.size() == b.log.steps.size();
  for (std::size_t i = 0; same_losses && i < a.log.steps.size(); ++i)
    same_losses = a.log.steps[i].l_hand == b.log.steps[i].l_hand && a.log.steps[i].l_joint == b.log.steps[i].l_joint &&
                  a.log.steps[i].l_recon == b.log.steps[i].l_recon;
  o.require(same_losses, "3 + 3 resumed steps differ from 6 straight steps");
  o.require(tree(ra / "final") == tree(rc / "final"), "resumed final checkpoint differs from the straight run");

  const auto chain = km::ArmChain::pr2_right();
  const tp::GainConfig gains;
  const auto traj = tp::synthesize_trajectory(ds, chain, fresh(work / "repro_traj"), 2.0, 5, gains);
  const auto net = ht::checkpoint::load(a.final_checkpoint).network;
  const auto layout = ev::dataset_robot_hand(ds).layout;
  for (const char* name : {"repro_replay_a", "repro_replay_b"})
    tp::write_log(fresh(work / name), tp::run_replay(traj, &net, chain, layout, gains), layout);
  const auto la = tree(work / "repro_replay_a");
  o.require(la.size() == 3 && la == tree(work / "repro_replay_b"), "two replays wrote different logs");

  o.detail = std::to_string(ta.size()) + " dataset files, 6-step loss traces and checkpoints, " +
             std::to_string(la.size()) + " replay logs identical; 3+3 resume equals 6 steps";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string only;
  std::string work = (fs::temp_directory_path() / "handteleop_acceptance").string();
  app.add_option("--only", only, "Comma-separated criteria to run (default: all)");
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  if (!only.empty()) {
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');) selected.insert(std::stoi(tok));
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient check", gradient_check},
      {"weight-map suite", weight_maps},
      {"loss identities", loss_identities},
      {"shape/architecture suite", shapes},
      {"metric oracle equivalence", metric_oracles},
      {"overfit sanity", [&] { return overfit(work); }},
      {"directional ablation", [&] { return ablation(work); }},
      {"controller suite", controller},
      {"kinematics suite", kinematics_suite},
      {"reproducibility", [&] { return reproducibility(work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.failures.push_back(std::string("exception: ") + e.what());
    }
    if (id == 1 && seconds_since(t0) >= 120.0) o.require(false, "took " + fmt("%.0f", seconds_since(t0)) + " s");
    std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str(),
                seconds_since(t0));
    for (const auto& f : o.failures) std::printf("       %s\n", f.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
