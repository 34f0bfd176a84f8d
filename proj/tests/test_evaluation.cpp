#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <vector>

#include "handteleop/checkpoint.hpp"
#include "handteleop/data.hpp"
#include "handteleop/errors.hpp"
#include "handteleop/evaluation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace ht = handteleop;
namespace ev = handteleop::evaluation;
namespace km = handteleop::kinematics;
using km::JointVector;

namespace {

// Brute-force references: one threshold at a time, one frame at a time.
std::vector<double> brute_angle_curve(const std::vector<JointVector>& p, const std::vector<JointVector>& g,
                                      const std::vector<double>& th) {
  std::vector<double> out;
  for (double t : th) {
    int below = 0;
    for (std::size_t f = 0; f < p.size(); ++f) {
      double worst = 0.0;
      for (int j = 0; j < p[f].size(); ++j) worst = std::max(worst, std::abs(p[f][j] - g[f][j]));
      if (worst < t) ++below;
    }
    out.push_back(static_cast<double>(below) / static_cast<double>(p.size()));
  }
  return out;
}

double brute_max_distance_mm(const km::HandSkeleton& s, const JointVector& a, const JointVector& b) {
  const auto ka = oracle::hand_keypoints(s, a);
  const auto kb = oracle::hand_keypoints(s, b);
  double worst = 0.0;
  for (std::size_t k = 0; k < ka.size(); ++k) {
    const double dx = ka[k][0] - kb[k][0], dy = ka[k][1] - kb[k][1], dz = ka[k][2] - kb[k][2];
    worst = std::max(worst, 1000.0 * std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  return worst;
}

std::vector<double> brute_distance_curve(const km::HandSkeleton& s, const std::vector<JointVector>& p,
                                         const std::vector<JointVector>& g, const std::vector<double>& th) {
  std::vector<double> worst;
  for (std::size_t f = 0; f < p.size(); ++f) worst.push_back(brute_max_distance_mm(s, p[f], g[f]));
  std::vector<double> out;
  for (double t : th) {
    int below = 0;
    for (double w : worst)
      if (w < t) ++below;
    out.push_back(static_cast<double>(below) / static_cast<double>(p.size()));
  }
  return out;
}

// Predictions near the ground truth so the curves are not saturated at either end.
void random_frames(int n, std::uint64_t seed, double spread, std::vector<JointVector>& preds,
                   std::vector<JointVector>& gts) {
  const auto layout = km::JointLayout::shadow_robot();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  for (int f = 0; f < n; ++f) {
    auto g = testutil::random_joints(layout, rng);
    auto p = g;
    for (int j = 0; j < p.size(); ++j) p[j] += noise(rng);
    gts.push_back(g);
    preds.push_back(km::clamp_to_limits(p, layout));
  }
}

bool non_decreasing(const std::vector<double>& c) { return std::is_sorted(c.begin(), c.end()); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("threshold grids") {
  const auto a = ev::default_angle_thresholds();
  REQUIRE(a.size() == 61);
  CHECK(a.front() == 0.0);
  CHECK(a.back() == doctest::Approx(0.6).epsilon(1e-12));
  const auto d = ev::default_distance_thresholds_mm();
  REQUIRE(d.size() == 51);
  CHECK(d.back() == 50.0);
  CHECK(ev::threshold_grid(1.0, 2.0, 0.5) == std::vector<double>{1.0, 1.5, 2.0});
  CHECK_THROWS_AS(ev::threshold_grid(1.0, 0.0, 0.5), ht::ConfigError);
}

TEST_CASE("fraction_below counts strictly smaller errors") {
  const std::vector<double> errors{0.1, 0.2, 0.2, 0.4};
  const std::vector<double> th{0.0, 0.1, 0.2, 0.3, 1.0};
  CHECK(ev::fraction_below(errors, th) == std::vector<double>{0.0, 0.0, 0.25, 0.75, 1.0});
  const std::vector<double> descending{0.3, 0.1};
  CHECK_THROWS_AS(ev::fraction_below(errors, descending), ht::ContractError);
  CHECK_THROWS_AS(ev::fraction_below(std::vector<double>{}, th), ht::ContractError);
}

TEST_CASE("angle curve: perfect predictions and the two-frame case") {
  std::vector<JointVector> preds, gts;
  random_frames(20, 1, 0.0, preds, gts);
  const std::vector<double> th{1e-9, 0.01, 0.3};
  CHECK(ev::angle_curve(gts, gts, th) == std::vector<double>{1.0, 1.0, 1.0});

  auto g0 = JointVector::zeros(19), g1 = JointVector::zeros(19);
  auto p0 = g0, p1 = g1;
  p0[3] = 0.05;
  p1[11] = -0.2;
  const std::vector<JointVector> P{p0, p1}, G{g0, g1};
  const std::vector<double> t{0.1};
  CHECK(ev::angle_curve(P, G, t)[0] == 0.5);
  CHECK(ev::max_angle_errors(P, G) == std::vector<double>{0.05, 0.2});

  CHECK_THROWS_AS(ev::angle_curve(std::vector<JointVector>{}, std::vector<JointVector>{}, t), ht::ContractError);
  CHECK_THROWS_AS(ev::angle_curve(P, std::vector<JointVector>{g0}, t), ht::ContractError);
}

TEST_CASE("angle curve equals brute force on 1000 frames") {
  std::vector<JointVector> preds, gts;
  random_frames(1000, 2, 0.08, preds, gts);
  const auto th = ev::default_angle_thresholds();
  const auto c = ev::angle_curve(preds, gts, th);
  CHECK(c == brute_angle_curve(preds, gts, th));
  CHECK(non_decreasing(c));
  CHECK(c.front() == 0.0);
  CHECK(c.back() > 0.0);
  const std::vector<double> huge{1e9};
  CHECK(ev::angle_curve(preds, gts, huge)[0] == 1.0);
}

TEST_CASE("distance curve equals brute force on 200 frames") {
  const auto skel = km::HandSkeleton::shadow_robot();
  std::vector<JointVector> preds, gts;
  random_frames(200, 3, 0.05, preds, gts);
  const auto th = ev::default_distance_thresholds_mm();
  const auto c = ev::distance_curve(preds, gts, th, skel);
  CHECK(c == brute_distance_curve(skel, preds, gts, th));
  CHECK(non_decreasing(c));
  CHECK(ev::distance_curve(gts, gts, std::vector<double>{1e-9, 5.0}, skel) == std::vector<double>{1.0, 1.0});
  const std::vector<double> huge{1e9};
  CHECK(ev::distance_curve(preds, gts, huge, skel)[0] == 1.0);
}

TEST_CASE("distance curve on a fingertip displaced by 7.0 mm") {
  const auto skel = km::HandSkeleton::shadow_robot();
  const auto& layout = skel.layout;
  // A mid-range pose so every joint can move both ways.
  auto base = JointVector::zeros(layout.count());
  for (int j = 0; j < layout.count(); ++j) base[j] = 0.5 * (layout[j].lower + layout[j].upper);
  const auto k0 = oracle::hand_keypoints(skel, base);

  // A joint whose motion moves exactly one keypoint is a distal joint: only the tip moves.
  int tip_joint = -1;
  for (int j = 0; j < layout.count() && tip_joint < 0; ++j) {
    auto q = base;
    q[j] += 0.01;
    const auto k1 = oracle::hand_keypoints(skel, q);
    int moved = 0;
    for (std::size_t k = 0; k < k0.size(); ++k)
      if (k0[k] != k1[k]) ++moved;
    if (moved == 1) tip_joint = j;
  }
  REQUIRE(tip_joint >= 0);

  // Bisection on the joint delta until the oracle tip displacement is 7.0 mm.
  const double room = layout[tip_joint].upper - base[tip_joint];
  double lo = 0.0, hi = room;
  auto displaced = [&](double d) {
    auto q = base;
    q[tip_joint] += d;
    return q;
  };
  REQUIRE(brute_max_distance_mm(skel, displaced(hi), base) > 7.0);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (brute_max_distance_mm(skel, displaced(mid), base) < 7.0 ? lo : hi) = mid;
  }
  const auto pred = displaced(0.5 * (lo + hi));
  CHECK(brute_max_distance_mm(skel, pred, base) == doctest::Approx(7.0).epsilon(1e-9));

  const std::vector<JointVector> P{pred}, G{base};
  CHECK(ev::distance_curve(P, G, std::vector<double>{5.0, 10.0}, skel) == std::vector<double>{0.0, 1.0});
  CHECK(ev::max_keypoint_errors_mm(P, G, skel)[0] == doctest::Approx(7.0).epsilon(1e-9));
}

TEST_CASE("per-joint error") {
  std::vector<JointVector> preds, gts;
  random_frames(50, 4, 0.0, preds, gts);
  for (double e : ev::per_joint_error(gts, gts)) CHECK(e == 0.0);

  auto shifted = gts;
  for (auto& q : shifted) q[7] += 0.03;
  const auto pj = ev::per_joint_error(shifted, gts);
  REQUIRE(pj.size() == 19);
  for (int j = 0; j < 19; ++j) {
    if (j == 7)
      CHECK(pj[j] == doctest::Approx(0.03).epsilon(1e-12));
    else
      CHECK(pj[j] == 0.0);
  }
}

TEST_CASE("per-joint error matches brute-force accumulation on 1000 frames") {
  std::vector<JointVector> preds, gts;
  random_frames(1000, 5, 0.1, preds, gts);
  const auto pj = ev::per_joint_error(preds, gts);
  for (int j = 0; j < 19; ++j) {
    double s = 0.0;
    for (std::size_t f = 0; f < preds.size(); ++f) s += std::abs(preds[f][j] - gts[f][j]);
    CHECK(std::abs(pj[j] - s / 1000.0) <= 1e-12);
  }
}

TEST_CASE("eval config json") {
  ev::EvalConfig c;
  c.angle_thresholds = {0.0, 0.1, 0.2};
  c.batch_size = 8;
  const auto back = ev::eval_from_json(ev::to_json(c));
  CHECK(back.angle_thresholds == c.angle_thresholds);
  CHECK(back.distance_thresholds_mm == c.distance_thresholds_mm);
  CHECK(back.batch_size == 8);

  const auto grid = ev::eval_from_json(nlohmann::json::parse(R"({"angle_thresholds": {"start": 0, "stop": 0.3, "step": 0.1}})"));
  CHECK(grid.angle_thresholds.size() == 4);
  CHECK_THROWS_AS(ev::eval_from_json(nlohmann::json::parse(R"({"angle_thresholds": [0.2, 0.1]})")), ht::ConfigError);
  CHECK_THROWS_AS(ev::eval_from_json(nlohmann::json::parse(R"({"batch_size": 0})")), ht::ConfigError);
}

namespace {

ev::MetricReport sample_report(const std::string& label, std::uint64_t seed) {
  std::vector<JointVector> preds, gts;
  random_frames(40, seed, 0.06, preds, gts);
  std::vector<int> ids(40);
  for (int i = 0; i < 40; ++i) ids[i] = 100 + i;
  ev::EvalConfig c;
  c.angle_thresholds = ev::threshold_grid(0.0, 0.3, 0.01);
  c.distance_thresholds_mm = ev::threshold_grid(0.0, 40.0, 2.0);
  return ev::make_report(label, "transteleop", ids, preds, gts, km::HandSkeleton::shadow_robot(), c);
}

}  // namespace

TEST_CASE("report invariants and emission round trip") {
  const auto a = sample_report("a", 6);
  const auto b = sample_report("b", 7);
  CHECK(a.sample_count() == 40);
  CHECK(a.per_joint_error.size() == 19);
  CHECK(a.joint_names.size() == 19);
  for (double f : a.angle_curve) CHECK((f >= 0.0 && f <= 1.0));
  CHECK(non_decreasing(a.angle_curve));
  CHECK(non_decreasing(a.distance_curve));
  double mean = 0.0;
  for (double e : a.per_joint_error) mean += e;
  CHECK(a.mean_joint_error == doctest::Approx(mean / 19.0).epsilon(1e-12));

  CHECK(ev::report_from_json(ev::to_json(a)) == a);

  const auto dir = testutil::scratch_dir("eval_emit");
  ev::emit_report({a, b}, dir);
  for (const char* f : {"report.json", "angle_curve.csv", "distance_curve.csv", "per_joint_error.csv",
                        "angle_curve.svg", "distance_curve.svg", "per_joint_error.svg"})
    CHECK(std::filesystem::exists(dir / f));
  const auto back = ev::load_report(dir);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == a);
  CHECK(back[1] == b);

  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.at("ranking").size() == 2);

  // Plot axes echo the configured grid endpoints.
  auto attr = [](const std::string& svg, const std::string& name) {
    std::smatch m;
    REQUIRE(std::regex_search(svg, m, std::regex(name + "=\"([^\"]+)\"")));
    return std::stod(m[1].str());
  };
  const auto angle_svg = slurp(dir / "angle_curve.svg");
  CHECK(attr(angle_svg, "data-x-min") == a.angle_thresholds.front());
  CHECK(attr(angle_svg, "data-x-max") == doctest::Approx(a.angle_thresholds.back()).epsilon(1e-12));
  const auto dist_svg = slurp(dir / "distance_curve.svg");
  CHECK(attr(dist_svg, "data-x-min") == 0.0);
  CHECK(attr(dist_svg, "data-x-max") == 40.0);

  CHECK_THROWS(ev::emit_report({}, dir));
}

TEST_CASE("ranking orders by mean joint error") {
  auto a = sample_report("a", 8);
  auto b = sample_report("b", 9);
  a.mean_joint_error = 0.2;
  b.mean_joint_error = 0.1;
  CHECK(ev::ranking({a, b}) == std::vector<std::string>{"b", "a"});
}

namespace {

struct EvalFixture {
  std::filesystem::path root;
  ht::data::Dataset dataset;
};

EvalFixture& fixture() {
  static EvalFixture f = [] {
    const auto root = testutil::scratch_dir("eval_fixture");
    ht::data::GenerationConfig g;
    g.split = {0.5, 0.0, 0.5};
    ht::data::generate_dataset(g, 12, 21, root / "data");
    auto ds = ht::data::Dataset::open(root / "data");
    for (auto v : {ht::model::Variant::kTransteleop, ht::model::Variant::kRobotOnly}) {
      ht::model::Network<float> net(testutil::tiny_arch(), v, 5);
      ht::checkpoint::SaveRequest req;
      req.network = &net;
      ht::checkpoint::save(root / std::string(ht::model::to_string(v)), req);
    }
    return EvalFixture{root, std::move(ds)};
  }();
  return f;
}

}  // namespace

TEST_CASE("predictions csv round trip") {
  auto& f = fixture();
  const auto layout = km::JointLayout::shadow_robot();
  const auto ck = ht::checkpoint::load(f.root / "transteleop");
  const auto idx = f.dataset.indices(ht::data::Split::kTest);
  const auto p = ev::predict(ck.network, f.dataset, idx, layout, 4);
  REQUIRE(p.joints.size() == idx.size());
  for (const auto& q : p.joints) CHECK_NOTHROW(km::check_limits(q, layout));

  // Batched prediction agrees with the single-image path.
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto s = f.dataset.load(idx[i]);
    const auto single = ck.network.infer_joints(s.human_image, layout);
    for (int j = 0; j < 19; ++j) CHECK(std::abs(single[j] - p.joints[i][j]) <= 1e-5);
  }

  const auto path = testutil::scratch_dir("eval_pred") / "predictions.csv";
  ev::write_predictions(path, p, layout);
  const auto back = ev::read_predictions(path, layout);
  CHECK(back.sample_ids == p.sample_ids);
  REQUIRE(back.joints.size() == p.joints.size());
  for (std::size_t i = 0; i < p.joints.size(); ++i)
    for (int j = 0; j < 19; ++j) CHECK(back.joints[i][j] == doctest::Approx(p.joints[i][j]).epsilon(1e-8));
}

TEST_CASE("compare_variants") {
  auto& f = fixture();
  ev::EvalConfig config;
  const auto split = ht::data::Split::kTest;

  SUBCASE("single variant equals direct metric computation") {
    const auto reports = ev::compare_variants({f.root / "transteleop"}, f.dataset, split, config);
    REQUIRE(reports.size() == 1);
    const auto direct = ev::evaluate_checkpoint(f.root / "transteleop", f.dataset, split, config);
    std::vector<JointVector> gts;
    for (auto i : f.dataset.indices(split)) gts.push_back(f.dataset.joints(i));
    const auto& r = reports[0];
    CHECK(r.angle_curve == ev::angle_curve(direct.predictions.joints, gts, config.angle_thresholds));
    CHECK(r.distance_curve == ev::distance_curve(direct.predictions.joints, gts, config.distance_thresholds_mm,
                                                 ev::dataset_robot_hand(f.dataset)));
    CHECK(r.per_joint_error == ev::per_joint_error(direct.predictions.joints, gts));
    CHECK(r.sample_count() == static_cast<int>(gts.size()));
    CHECK(r.variant == "transteleop");
  }

  SUBCASE("identical checkpoint twice gives identical reports") {
    const auto reports = ev::compare_variants({f.root / "transteleop", f.root / "transteleop"}, f.dataset, split, config);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].angle_curve == reports[1].angle_curve);
    CHECK(reports[0].distance_curve == reports[1].distance_curve);
    CHECK(reports[0].per_joint_error == reports[1].per_joint_error);
    CHECK(reports[0].frame_ids == reports[1].frame_ids);
    CHECK(reports[0].label != reports[1].label);
  }

  SUBCASE("mixed variants share the frame set") {
    const auto reports = ev::compare_variants({f.root / "transteleop", f.root / "robotonly"}, f.dataset, split, config);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].frame_ids == reports[1].frame_ids);
    CHECK(reports[1].variant == "robotonly");
  }

  SUBCASE("robot-only checkpoint in a transteleop slot is rejected") {
    const auto expected = ht::model::architecture_hash(testutil::tiny_arch(), ht::model::Variant::kTransteleop);
    CHECK_THROWS_AS(ev::compare_variants({f.root / "robotonly"}, f.dataset, split, config, {expected}),
                    ht::IncompatibleCheckpoint);
    CHECK_THROWS_AS(ev::evaluate_checkpoint(f.root / "robotonly", f.dataset, split, config, expected),
                    ht::IncompatibleCheckpoint);
  }
}
