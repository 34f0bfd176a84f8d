#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "handteleop/errors.hpp"
#include "handteleop/model.hpp"
#include "gradcheck.hpp"

namespace ht = handteleop;
namespace km = handteleop::kinematics;
using ht::model::ArchConfig;
using ht::model::Network;
using ht::model::Variant;
using ht::nn::Tensor;

namespace {

template <typename T>
Tensor<T> random_images(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Tensor<T> t({n, 1, 96, 96});
  for (auto& v : t.data) v = static_cast<T>(d(rng));
  return t;
}

// Background +1 with a smooth dip in the middle, like a hand in front of the far plane.
template <typename T>
Tensor<T> smooth_images(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> c(35.0, 60.0), s(8.0, 16.0);
  Tensor<T> t({n, 1, 96, 96});
  for (int b = 0; b < n; ++b) {
    const double cr = c(rng), cc = c(rng), sr = s(rng), sc = s(rng);
    for (int r = 0; r < 96; ++r)
      for (int col = 0; col < 96; ++col) {
        const double e = std::exp(-0.5 * ((r - cr) * (r - cr) / (sr * sr) + (col - cc) * (col - cc) / (sc * sc)));
        t.data[(static_cast<std::size_t>(b) * 96 + r) * 96 + col] = static_cast<T>(1.0 - 1.6 * e);
      }
  }
  return t;
}

template <typename T>
ht::nn::Param<T>& find_param(Network<T>& net, const std::string& name) {
  for (auto* p : net.parameters())
    if (p->name == name) return *p;
  FAIL("no parameter " << name);
  throw;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
  return m;
}

// Plain bilinear lookup with background outside, written from the sampling definition.
double bilinear_oracle(const Tensor<double>& img, int n, double y, double x, double bg) {
  const auto at = [&](int r, int c) {
    if (r < 0 || r >= 96 || c < 0 || c >= 96) return bg;
    return img.data[(static_cast<std::size_t>(n) * 96 + r) * 96 + c];
  };
  const int r0 = static_cast<int>(std::floor(y)), c0 = static_cast<int>(std::floor(x));
  const double fy = y - r0, fx = x - c0;
  return (1 - fy) * ((1 - fx) * at(r0, c0) + fx * at(r0, c0 + 1)) + fy * ((1 - fx) * at(r0 + 1, c0) + fx * at(r0 + 1, c0 + 1));
}

}  // namespace

TEST_CASE("full architecture shapes") {
  Network<float> net(ArchConfig::full(), Variant::kTransteleop, 7);
  const auto x = smooth_images<float>(1, 3);
  const auto out = net.forward_eval(x);
  CHECK(out.encoder_feature.shape == std::vector<int>{1, 512, 6, 6});
  CHECK(out.z_h.shape == std::vector<int>{1, 8192});
  CHECK(out.z_pose.shape == std::vector<int>{1, 1024});
  CHECK(out.z_r.shape == std::vector<int>{1, 18432});
  CHECK(out.joints.shape == std::vector<int>{1, 19});
  CHECK(out.reconstruction.shape == std::vector<int>{1, 1, 96, 96});
  CHECK(out.theta.shape == std::vector<int>{1, 6});
  for (float v : out.reconstruction.data) CHECK((v >= -1.0f && v <= 1.0f));
  CHECK(max_abs_diff(out.stn_output, x) <= 1e-6);

  CHECK(find_param(net, "joint.fc1.weight").value.shape == std::vector<int>{512, 18432});
  CHECK(find_param(net, "joint.fc3.weight").value.shape == std::vector<int>{19, 512 / 2});
  CHECK(find_param(net, "decoder.fc_r.weight").value.shape == std::vector<int>{18432, 1024});
  CHECK(find_param(net, "decoder.up3.conv.weight").value.shape == std::vector<int>{64, 32 * 16});
  CHECK(find_param(net, "decoder.out.weight").value.shape == std::vector<int>{1, 32 * 9});
  CHECK(find_param(net, "encoder.res1.conv2.weight").value.shape == std::vector<int>{512, 512 * 9});
}

TEST_CASE("variants change the parameter set") {
  const auto names = [](const Network<float>& n) {
    std::vector<std::string> v;
    for (const auto* p : n.parameters()) v.push_back(p->name);
    return v;
  };
  Network<float> full(ArchConfig::desk(), Variant::kTransteleop, 1);
  Network<float> no_stn(ArchConfig::desk(), Variant::kNoStn, 1);
  Network<float> robot(ArchConfig::desk(), Variant::kRobotOnly, 1);
  const auto has_prefix = [](const std::vector<std::string>& v, const std::string& prefix) {
    return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.rfind(prefix, 0) == 0; });
  };
  CHECK(has_prefix(names(full), "stn."));
  CHECK(has_prefix(names(full), "decoder.up0"));
  CHECK_FALSE(has_prefix(names(no_stn), "stn."));
  CHECK(has_prefix(names(robot), "stn."));
  CHECK_FALSE(has_prefix(names(robot), "decoder.up"));
  CHECK_FALSE(has_prefix(names(robot), "decoder.out"));
  CHECK(has_prefix(names(robot), "decoder.fc_r"));
  CHECK(robot.forward_eval(smooth_images<float>(1, 1)).reconstruction.empty());

  CHECK(full.architecture_hash() != robot.architecture_hash());
  CHECK(full.architecture_hash() != no_stn.architecture_hash());
  CHECK(full.architecture_hash() != Network<float>(ArchConfig::full(), Variant::kTransteleop, 1).architecture_hash());
  CHECK(full.architecture_hash() == Network<float>(ArchConfig::desk(), Variant::kTransteleop, 99).architecture_hash());
}

TEST_CASE("initialization is seeded") {
  Network<float> a(ArchConfig::desk(), Variant::kTransteleop, 5);
  Network<float> b(ArchConfig::desk(), Variant::kTransteleop, 5);
  Network<float> c(ArchConfig::desk(), Variant::kTransteleop, 6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value == pb[i]->value);
    any_diff = any_diff || !(pa[i]->value == pc[i]->value);
  }
  CHECK(any_diff);
  CHECK(find_param(a, "stn.fc2.bias").value.data == std::vector<float>{1, 0, 0, 0, 1, 0});
  for (float w : find_param(a, "stn.fc2.weight").value.data) CHECK(w == 0.0f);
  for (float g : find_param(a, "encoder.down1.bn.gamma").value.data) CHECK(g == 1.0f);

  double s = 0.0, s2 = 0.0;
  const auto& w = find_param(a, "embed.fc_h.weight").value.data;
  for (float v : w) {
    s += v;
    s2 += double(v) * v;
  }
  const double mean = s / w.size();
  CHECK(std::abs(mean) < 1e-3);
  CHECK(std::sqrt(s2 / w.size() - mean * mean) == doctest::Approx(0.02).epsilon(0.01));
}

TEST_CASE("STN sampling") {
  const auto x = random_images<double>(2, 4);
  SUBCASE("identity is bit-equal") {
    Tensor<double> theta({2, 6});
    for (int n = 0; n < 2; ++n) {
      theta.data[n * 6 + 0] = 1.0;
      theta.data[n * 6 + 4] = 1.0;
    }
    Tensor<double> y;
    ht::nn::affine_sample(x, theta, 1.0, y);
    CHECK(y == x);
    Tensor<float> xf({1, 1, 96, 96}), tf({1, 6}), yf;
    for (int i = 0; i < 9216; ++i) xf.data[i] = static_cast<float>(x.data[i]);
    tf.data = {1, 0, 0, 0, 1, 0};
    ht::nn::affine_sample(xf, tf, 1.0f, yf);
    CHECK(yf == xf);
  }
  SUBCASE("translation by +2 px") {
    Tensor<double> theta({2, 6});
    theta.data = {1, 0, -2.0 / 48.0, 0, 1, 0, 1, 0, 0, 0, 1, -2.0 / 48.0};
    Tensor<double> y;
    ht::nn::affine_sample(x, theta, 1.0, y);
    double worst = 0.0;
    for (int r = 0; r < 96; ++r)
      for (int c = 0; c < 96; ++c) {
        const auto px = [&](int n, int rr, int cc) {
          return rr < 0 || cc < 0 ? 1.0 : x.data[(static_cast<std::size_t>(n) * 96 + rr) * 96 + cc];
        };
        worst = std::max(worst, std::abs(y.data[r * 96 + c] - px(0, r, c - 2)));
        worst = std::max(worst, std::abs(y.data[9216 + r * 96 + c] - px(1, r - 2, c)));
      }
    CHECK(worst <= 1e-12);
  }
  SUBCASE("general affine matches the bilinear oracle") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> d(-0.15, 0.15);
    Tensor<double> theta({2, 6});
    for (int n = 0; n < 2; ++n)
      for (int k = 0; k < 6; ++k) theta.data[n * 6 + k] = (k == 0 || k == 4 ? 1.0 : 0.0) + d(rng);
    Tensor<double> y;
    ht::nn::affine_sample(x, theta, 1.0, y);
    double worst = 0.0;
    for (int n = 0; n < 2; ++n) {
      const double* t = &theta.data[n * 6];
      for (int r = 0; r < 96; ++r)
        for (int c = 0; c < 96; ++c) {
          const double u = c - 47.5, v = r - 47.5;
          const double sx = t[0] * u + t[1] * v + t[2] * 48 + 47.5;
          const double sy = t[3] * u + t[4] * v + t[5] * 48 + 47.5;
          worst = std::max(worst, std::abs(y.data[(n * 96 + r) * 96 + c] - bilinear_oracle(x, n, sy, sx, 1.0)));
        }
    }
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("STN sampling gradient matches central differences") {
  const auto x = smooth_images<double>(2, 9);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> d(-0.05, 0.05), g(-1, 1);
  Tensor<double> theta({2, 6}), dout({2, 1, 96, 96});
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 6; ++k) theta.data[n * 6 + k] = (k == 0 || k == 4 ? 1.0 : 0.0) + d(rng);
  for (auto& v : dout.data) v = g(rng);
  const auto objective = [&](const Tensor<double>& t) {
    Tensor<double> y;
    ht::nn::affine_sample(x, t, 1.0, y);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += dout.data[i] * y.data[i];
    return s;
  };
  Tensor<double> dtheta;
  ht::nn::affine_sample_backward(x, theta, 1.0, dout, dtheta);
  for (int i = 0; i < 12; ++i) {
    auto tp = theta, tm = theta;
    tp.data[i] += 1e-7;
    tm.data[i] -= 1e-7;
    const double num = (objective(tp) - objective(tm)) / 2e-7;
    CAPTURE(i);
    CHECK(dtheta.data[i] == doctest::Approx(num).epsilon(1e-3));
  }
}

TEST_CASE("eval mode is deterministic and batch independent") {
  Network<float> net(ArchConfig::desk(), Variant::kTransteleop, 11);
  // move the running statistics away from their initial values
  for (int i = 0; i < 3; ++i) net.forward_train(smooth_images<float>(4, 100 + i));
  const auto x = smooth_images<float>(2, 12);
  const auto a = net.forward_eval(x);
  const auto b = net.forward_eval(x);
  CHECK(a.joints == b.joints);
  CHECK(a.reconstruction == b.reconstruction);
  CHECK(a.z_pose == b.z_pose);

  for (int n = 0; n < 2; ++n) {
    Tensor<float> one({1, 1, 96, 96});
    std::copy(x.sample(n).begin(), x.sample(n).end(), one.data.begin());
    const auto s = net.forward_eval(one);
    double dj = 0.0, dr = 0.0;
    for (int k = 0; k < 19; ++k) dj = std::max(dj, std::abs(double(s.joints.data[k]) - a.joints.data[n * 19 + k]));
    for (int p = 0; p < 9216; ++p)
      dr = std::max(dr, std::abs(double(s.reconstruction.data[p]) - a.reconstruction.data[n * 9216 + p]));
    CHECK(dj <= 1e-5);
    CHECK(dr <= 1e-5);
  }
}

TEST_CASE("train mode updates running statistics, eval mode does not") {
  Network<float> net(ArchConfig::desk(), Variant::kTransteleop, 2);
  const auto before = net.buffers()[0]->value;
  net.forward_eval(smooth_images<float>(2, 1));
  CHECK(net.buffers()[0]->value == before);
  net.forward_train(smooth_images<float>(2, 1));
  CHECK_FALSE(net.buffers()[0]->value == before);
}

TEST_CASE("infer_joints matches the full forward pass with fewer MACs") {
  Network<float> net(ArchConfig::desk(), Variant::kTransteleop, 13);
  for (int i = 0; i < 2; ++i) net.forward_train(smooth_images<float>(4, 200 + i));
  const auto layout = km::JointLayout::shadow_robot();
  const auto x = random_images<float>(100, 14);
  const auto full = net.forward_eval(x);
  std::uint64_t infer_macs = 0;
  const auto raw = net.infer_joints_raw(x, &infer_macs);
  CHECK(max_abs_diff(raw, full.joints) <= 1e-6);
  CHECK(infer_macs < full.macs);

  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    std::vector<float> px(x.sample(n).begin(), x.sample(n).end());
    const auto q = net.infer_joints(ht::imaging::DepthImage(px), layout);
    REQUIRE(q.size() == 19);
    for (int k = 0; k < 19; ++k) {
      const double expected = std::clamp<double>(full.joints.data[n * 19 + k], layout[k].lower, layout[k].upper);
      worst = std::max(worst, std::abs(q[k] - expected));
    }
  }
  CHECK(worst <= 1e-6);

  SUBCASE("out-of-limit predictions are clamped") {
    auto& bias = find_param(net, "joint.fc3.bias").value.data;
    std::fill(bias.begin(), bias.end(), 50.0f);
    const auto q = net.infer_joints(ht::imaging::DepthImage(), layout);
    for (int k = 0; k < 19; ++k) CHECK(q[k] == layout[k].upper);
    std::fill(bias.begin(), bias.end(), -50.0f);
    const auto q2 = net.infer_joints(ht::imaging::DepthImage(), layout);
    for (int k = 0; k < 19; ++k) CHECK(q2[k] == layout[k].lower);
  }
}

TEST_CASE("non-finite activations name the layer") {
  Network<float> net(ArchConfig::desk(), Variant::kTransteleop, 3);
  find_param(net, "encoder.down2.conv.weight").value.data[5] = std::numeric_limits<float>::infinity();
  try {
    net.forward_eval(smooth_images<float>(1, 1));
    FAIL("expected NumericalFailure");
  } catch (const ht::NumericalFailure& e) {
    CHECK(std::string(e.what()).find("encoder.down2") != std::string::npos);
  }
  CHECK_THROWS_AS(net.forward_eval(Tensor<float>({1, 1, 64, 64})), ht::ContractError);
}

TEST_CASE("loss functions") {
  SUBCASE("reconstruction") {
    const std::vector<double> alpha{1, 0.5, 0.1, 0.1}, target{0.2, 0.2, 1.0, -1.0}, recon{0, 0, 0, 0};
    CHECK(ht::model::recon_loss(target, recon, alpha) == 0.065);
    CHECK(ht::model::recon_loss(target, target, alpha) == 0.0);
    CHECK_THROWS_AS(ht::model::recon_loss(target, std::vector<double>{0, 0}, alpha), ht::ContractError);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-1, 1);
    std::vector<float> a(9216), b(9216);
    for (int i = 0; i < 9216; ++i) {
      a[i] = static_cast<float>(d(rng));
      b[i] = static_cast<float>(d(rng));
    }
    ht::imaging::WeightMap ones;
    ones.alpha.assign(9216, 1.0);
    double mse = 0.0;
    for (int i = 0; i < 9216; ++i) mse += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
    mse /= 9216;
    const ht::imaging::DepthImage ia(a), ib(b);
    CHECK(std::abs(ht::model::recon_loss(ia, ib, ones) - mse) <= 1e-12);
    CHECK(ht::model::recon_loss(ia, ia, ones) == 0.0);
  }
  SUBCASE("joints") {
    std::vector<double> gt(19, 0.3), pred(19, 0.3);
    CHECK(ht::model::joint_loss(pred, gt) == 0.0);
    pred[7] += 0.19;
    CHECK(std::abs(ht::model::joint_loss(pred, gt) - 0.0019) <= 1e-12);
    CHECK_THROWS_AS(ht::model::joint_loss(pred, std::vector<double>(18, 0.0)), ht::ContractError);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : pred) v = d(rng);
    for (auto& v : gt) v = d(rng);
    std::vector<std::size_t> perm(19);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pp(19), gp(19);
    for (int i = 0; i < 19; ++i) {
      pp[i] = pred[perm[i]];
      gp[i] = gt[perm[i]];
    }
    const double l = ht::model::joint_loss(pred, gt);
    CHECK(std::abs(ht::model::joint_loss(pp, gp) - l) <= 1e-15 * std::max(1.0, l));
  }
  SUBCASE("total") {
    CHECK(ht::model::kLambdaRecon == 1.0);
    CHECK(ht::model::kLambdaJoint == 10.0);
    CHECK(ht::model::total_loss(0.065, 0.0019) == 0.084);
    CHECK(ht::model::total_loss(0.5, 0.25, 2.0, 0.0) == 1.0);
    CHECK_THROWS_AS(ht::model::total_loss(1.0, 1.0, -1.0, 1.0), ht::ContractError);
  }
}

namespace {

struct GradProblem {
  Tensor<double> images, targets, alpha, joints;
  double lambda_recon = ht::model::kLambdaRecon;
  double lambda_joint = ht::model::kLambdaJoint;
};

GradProblem make_problem() {
  GradProblem p;
  p.images = smooth_images<double>(2, 21);
  p.targets = smooth_images<double>(2, 22);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> a(0.1, 1.0), j(-0.5, 0.5);
  p.alpha = Tensor<double>({2, 9216});
  for (auto& v : p.alpha.data) v = a(rng);
  p.joints = Tensor<double>({2, 19});
  for (auto& v : p.joints.data) v = j(rng);
  return p;
}

void analytic_grad(Network<double>& net, const GradProblem& p) {
  net.zero_grad();
  const auto out = net.forward_train(p.images);
  const auto l = ht::model::batch_loss(out, p.targets, p.alpha, p.joints, p.lambda_recon, p.lambda_joint);
  net.backward(l.d_joints, &l.d_recon);
}

}  // namespace

TEST_CASE("lambda_joint = 0 decouples the joint head") {
  Network<double> net(ArchConfig::desk(), Variant::kTransteleop, 31);
  auto p = make_problem();
  p.lambda_joint = 0.0;
  analytic_grad(net, p);
  for (const auto* prm : net.parameters()) {
    if (prm->name.rfind("joint.", 0) != 0) continue;
    for (double g : prm->grad.data) CHECK(g == 0.0);
  }
  double enc = 0.0;
  for (double g : find_param(net, "encoder.down0.conv.weight").grad.data) enc += std::abs(g);
  CHECK(enc > 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  for (const Variant variant : {Variant::kTransteleop, Variant::kRobotOnly}) {
    CAPTURE(ht::model::to_string(variant));
    const auto r = gradcheck::run(variant, ArchConfig::desk(), 3);
    CAPTURE(r.worst_group);
    CHECK(r.every_group_checked);
    CHECK(r.worst < 1e-3);
    for (const auto& g : r.groups) {
      CAPTURE(g.name);
      CHECK(g.checked >= 1);
    }
  }
}
