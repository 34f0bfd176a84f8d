#include "handteleop/model.hpp"

#include <cmath>
#include <random>

#include "handteleop/errors.hpp"

namespace handteleop::model {

using nlohmann::json;
using nn::BatchNorm2d;
using nn::Conv2d;
using nn::ConvTranspose2d;
using nn::Linear;
using nn::MacCounter;

namespace {

constexpr int kSide = imaging::kImageSize;
constexpr int kFeatureSide = 6;

template <typename T>
struct ConvBn {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
};

template <typename T>
struct UpBn {
  ConvTranspose2d<T> up;
  BatchNorm2d<T> bn;
};

template <typename T>
struct ResBlock {
  BatchNorm2d<T> bn1;
  Conv2d<T> conv1;
  BatchNorm2d<T> bn2;
  Conv2d<T> conv2;
};

// Activations of one conv -> bn -> relu stage.
template <typename T>
struct StageTrace {
  Tensor<T> input;
  Tensor<T> pre_bn;
  typename BatchNorm2d<T>::Cache cache;
  Tensor<T> out;  // after relu
};

template <typename T>
struct ResTrace {
  Tensor<T> input;
  typename BatchNorm2d<T>::Cache cache1, cache2;
  Tensor<T> r1;  // relu(bn1(input))
  Tensor<T> c1;
  Tensor<T> r2;
};

template <typename T>
void flatten_into(const Tensor<T>& x, Tensor<T>& y) {
  y.shape = {x.dim(0), static_cast<int>(x.stride0())};
  y.data = x.data;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kTransteleop:
      return "transteleop";
    case Variant::kNoStn:
      return "no_stn";
    case Variant::kRobotOnly:
      return "robotonly";
  }
  return "transteleop";
}

Variant parse_variant(std::string_view text) {
  if (text == "transteleop") return Variant::kTransteleop;
  if (text == "no_stn") return Variant::kNoStn;
  if (text == "robotonly") return Variant::kRobotOnly;
  throw ConfigError("unknown variant '" + std::string(text) + "' (expected transteleop, no_stn or robotonly)");
}

ArchConfig ArchConfig::full() { return ArchConfig{}; }

ArchConfig ArchConfig::desk() {
  ArchConfig a;
  a.name = "desk";
  a.encoder_channels = {16, 32, 64, 64};
  a.z_h = 512;
  a.z_pose = 128;
  a.decoder_channels = {32, 16, 8, 8};
  a.joint_hidden = {256, 128};
  return a;
}

ArchConfig ArchConfig::preset(std::string_view name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  throw ConfigError("unknown architecture preset '" + std::string(name) + "' (expected full or desk)");
}

void ArchConfig::validate() const {
  const auto positive = [](int v, const char* what) {
    if (v < 1) throw ConfigError(std::string("architecture: ") + what + " must be >= 1");
  };
  for (int c : encoder_channels) positive(c, "encoder channels");
  for (int c : decoder_channels) positive(c, "decoder channels");
  for (int c : joint_hidden) positive(c, "joint hidden width");
  for (int c : stn_channels) positive(c, "stn channels");
  positive(z_h, "z_h");
  positive(z_pose, "z_pose");
  positive(stn_hidden, "stn hidden width");
  positive(joints, "joint count");
  if (residual_blocks < 0) throw ConfigError("architecture: residual_blocks must be >= 0");
  if (!(init_std > 0.0)) throw ConfigError("architecture: init_std must be positive");
}

json to_json(const ArchConfig& a) {
  return {{"name", a.name},
          {"encoder_channels", a.encoder_channels},
          {"residual_blocks", a.residual_blocks},
          {"z_h", a.z_h},
          {"z_pose", a.z_pose},
          {"decoder_channels", a.decoder_channels},
          {"joint_hidden", a.joint_hidden},
          {"stn_channels", a.stn_channels},
          {"stn_hidden", a.stn_hidden},
          {"joints", a.joints},
          {"init_std", a.init_std}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  try {
    a.name = j.at("name").get<std::string>();
    a.encoder_channels = j.at("encoder_channels").get<std::array<int, 4>>();
    a.residual_blocks = j.at("residual_blocks").get<int>();
    a.z_h = j.at("z_h").get<int>();
    a.z_pose = j.at("z_pose").get<int>();
    a.decoder_channels = j.at("decoder_channels").get<std::array<int, 4>>();
    a.joint_hidden = j.at("joint_hidden").get<std::array<int, 2>>();
    a.stn_channels = j.at("stn_channels").get<std::array<int, 2>>();
    a.stn_hidden = j.at("stn_hidden").get<int>();
    a.joints = j.at("joints").get<int>();
    a.init_std = j.at("init_std").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  a.validate();
  return a;
}

std::uint64_t architecture_hash(const ArchConfig& arch, Variant variant) {
  auto j = to_json(arch);
  j.erase("init_std");  // initialization does not change the parameter layout
  j.erase("name");
  const std::string text = j.dump() + "|" + std::string(to_string(variant));
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Network<T>::Layers {
  // preprocess
  ConvBn<T> stn1, stn2;
  Linear<T> stn_fc1, stn_fc2;
  // encoder
  std::array<ConvBn<T>, 4> down;
  std::vector<ResBlock<T>> res;
  BatchNorm2d<T> enc_bn;
  // embedding
  Linear<T> fc_h, fc_pose, fc_r;
  // decoder
  std::array<UpBn<T>, 4> up;
  Conv2d<T> out_conv;
  // joint head
  Linear<T> j1, j2, j3;

  std::vector<nn::Param<T>*> params;
  std::vector<nn::Buffer<T>*> buffers;
};

template <typename T>
struct Network<T>::Trace {
  Tensor<T> images;
  StageTrace<T> s1, s2;
  Tensor<T> stn_flat, stn_h, theta, stn_out;
  std::array<StageTrace<T>, 4> down;
  std::vector<ResTrace<T>> res;
  Tensor<T> enc_pre;  // residual output, before the final bn
  typename BatchNorm2d<T>::Cache enc_cache;
  Tensor<T> feature_flat;  // relu(bn(enc_pre)) flattened
  Tensor<T> z_h, z_pose, z_r;
  std::array<StageTrace<T>, 4> up;
  Tensor<T> recon;
  Tensor<T> h1, h2;
  bool valid = false;
};

template <typename T>
Network<T>::Network(ArchConfig arch, Variant variant, std::uint64_t seed)
    : arch_(std::move(arch)), variant_(variant), layers_(std::make_unique<Layers>()), trace_(std::make_unique<Trace>()) {
  arch_.validate();
  auto& L = *layers_;
  const auto& ec = arch_.encoder_channels;
  const int c_feat = arch_.feature_channels();
  const auto add_bn = [&](BatchNorm2d<T>& bn) {
    L.params.push_back(&bn.gamma);
    L.params.push_back(&bn.beta);
    L.buffers.push_back(&bn.running_mean);
    L.buffers.push_back(&bn.running_var);
  };
  const auto add_conv = [&](Conv2d<T>& c) {
    L.params.push_back(&c.weight);
    if (!c.bias.value.empty()) L.params.push_back(&c.bias);
  };
  const auto add_linear = [&](Linear<T>& l) {
    L.params.push_back(&l.weight);
    L.params.push_back(&l.bias);
  };

  if (has_stn()) {
    const auto& sc = arch_.stn_channels;
    L.stn1 = {Conv2d<T>("stn.conv1", 1, sc[0], 4, 2, 1, false), BatchNorm2d<T>("stn.bn1", sc[0])};
    L.stn2 = {Conv2d<T>("stn.conv2", sc[0], sc[1], 4, 2, 1, false), BatchNorm2d<T>("stn.bn2", sc[1])};
    L.stn_fc1 = Linear<T>("stn.fc1", sc[1] * (kSide / 4) * (kSide / 4), arch_.stn_hidden);
    L.stn_fc2 = Linear<T>("stn.fc2", arch_.stn_hidden, 6);
    add_conv(L.stn1.conv);
    add_bn(L.stn1.bn);
    add_conv(L.stn2.conv);
    add_bn(L.stn2.bn);
    add_linear(L.stn_fc1);
    add_linear(L.stn_fc2);
  }
  int in = 1;
  for (int i = 0; i < 4; ++i) {
    const std::string p = "encoder.down" + std::to_string(i);
    L.down[i] = {Conv2d<T>(p + ".conv", in, ec[i], 4, 2, 1, false), BatchNorm2d<T>(p + ".bn", ec[i])};
    add_conv(L.down[i].conv);
    add_bn(L.down[i].bn);
    in = ec[i];
  }
  L.res.resize(static_cast<std::size_t>(arch_.residual_blocks));
  for (int r = 0; r < arch_.residual_blocks; ++r) {
    const std::string p = "encoder.res" + std::to_string(r);
    auto& b = L.res[r];
    b.bn1 = BatchNorm2d<T>(p + ".bn1", c_feat);
    b.conv1 = Conv2d<T>(p + ".conv1", c_feat, c_feat, 3, 1, 1, false);
    b.bn2 = BatchNorm2d<T>(p + ".bn2", c_feat);
    b.conv2 = Conv2d<T>(p + ".conv2", c_feat, c_feat, 3, 1, 1, false);
    add_bn(b.bn1);
    add_conv(b.conv1);
    add_bn(b.bn2);
    add_conv(b.conv2);
  }
  L.enc_bn = BatchNorm2d<T>("encoder.bn_out", c_feat);
  add_bn(L.enc_bn);
  L.fc_h = Linear<T>("embed.fc_h", arch_.feature_size(), arch_.z_h);
  L.fc_pose = Linear<T>("embed.fc_pose", arch_.z_h, arch_.z_pose);
  L.fc_r = Linear<T>("decoder.fc_r", arch_.z_pose, arch_.feature_size());
  add_linear(L.fc_h);
  add_linear(L.fc_pose);
  add_linear(L.fc_r);
  if (has_decoder()) {
    in = c_feat;
    for (int i = 0; i < 4; ++i) {
      const std::string p = "decoder.up" + std::to_string(i);
      const int out = arch_.decoder_channels[i];
      L.up[i] = {ConvTranspose2d<T>(p + ".conv", in, out, 4, 2, 1), BatchNorm2d<T>(p + ".bn", out)};
      L.params.push_back(&L.up[i].up.weight);
      add_bn(L.up[i].bn);
      in = out;
    }
    L.out_conv = Conv2d<T>("decoder.out", in, 1, 3, 1, 1, true);
    add_conv(L.out_conv);
  }
  L.j1 = Linear<T>("joint.fc1", arch_.feature_size(), arch_.joint_hidden[0]);
  L.j2 = Linear<T>("joint.fc2", arch_.joint_hidden[0], arch_.joint_hidden[1]);
  L.j3 = Linear<T>("joint.fc3", arch_.joint_hidden[1], arch_.joints);
  add_linear(L.j1);
  add_linear(L.j2);
  add_linear(L.j3);

  // Weights ~ N(0, init_std), biases zero; the STN regressor starts at the identity transform.
  std::mt19937_64 rng(seed);
  for (auto* p : L.params) {
    const auto& n = p->name;
    const bool is_weight = n.size() > 7 && n.compare(n.size() - 7, 7, ".weight") == 0;
    if (is_weight && n != "stn.fc2.weight") nn::normal_fill(p->value.span(), arch_.init_std, rng);
  }
  if (has_stn()) {
    auto& b = L.stn_fc2.bias.value.data;
    b = {T(1), T(0), T(0), T(0), T(1), T(0)};
  }
}

template <typename T>
Network<T>::~Network() = default;
template <typename T>
Network<T>::Network(Network&&) noexcept = default;
template <typename T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <typename T>
std::vector<nn::Param<T>*> Network<T>::parameters() {
  return layers_->params;
}

template <typename T>
std::vector<const nn::Param<T>*> Network<T>::parameters() const {
  return {layers_->params.begin(), layers_->params.end()};
}

template <typename T>
std::vector<nn::Buffer<T>*> Network<T>::buffers() {
  return layers_->buffers;
}

template <typename T>
std::vector<const nn::Buffer<T>*> Network<T>::buffers() const {
  return {layers_->buffers.begin(), layers_->buffers.end()};
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : layers_->params) n += p->value.size();
  return n;
}

template <typename T>
std::uint64_t Network<T>::architecture_hash() const {
  return model::architecture_hash(arch_, variant_);
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto* p : layers_->params) p->zero_grad();
}

namespace {

template <typename T>
void stage_forward(ConvBn<T>& s, const Tensor<T>& x, StageTrace<T>* tr, bool train, Tensor<T>& out, MacCounter& mc,
                   const std::string& name) {
  Tensor<T> pre;
  s.conv.forward(x, pre, mc);
  nn::check_finite(pre, name + ".conv");
  if (train) {
    s.bn.forward_train(pre, out, tr->cache);
  } else {
    s.bn.forward_eval(pre, out);
  }
  nn::relu_forward(out, out);
  if (tr) {
    tr->input = x;
    tr->pre_bn = std::move(pre);
    tr->out = out;
  }
}

template <typename T>
void up_forward(UpBn<T>& s, const Tensor<T>& x, StageTrace<T>* tr, bool train, Tensor<T>& out, MacCounter& mc,
                const std::string& name) {
  Tensor<T> pre;
  s.up.forward(x, pre, mc);
  nn::check_finite(pre, name + ".conv");
  if (train) {
    s.bn.forward_train(pre, out, tr->cache);
  } else {
    s.bn.forward_eval(pre, out);
  }
  nn::relu_forward(out, out);
  if (tr) {
    tr->input = x;
    tr->pre_bn = std::move(pre);
    tr->out = out;
  }
}

template <typename T>
void bn_relu(BatchNorm2d<T>& bn, const Tensor<T>& x, typename BatchNorm2d<T>::Cache* cache, bool train, Tensor<T>& out) {
  if (train) {
    bn.forward_train(x, out, *cache);
  } else {
    bn.forward_eval(x, out);
  }
  nn::relu_forward(out, out);
}

template <typename T>
void linear_relu(const Linear<T>& l, const Tensor<T>& x, Tensor<T>& out, MacCounter& mc, const std::string& name,
                 bool relu = true) {
  l.forward(x, out, mc);
  if (relu) nn::relu_forward(out, out);
  nn::check_finite(out, name);
}

}  // namespace

template <typename T>
ForwardOutput<T> Network<T>::run(const Tensor<T>& images, Trace* tr, bool train, bool decode) const {
  if (images.shape.size() != 4 || images.dim(1) != 1 || images.dim(2) != kSide || images.dim(3) != kSide)
    throw ContractError("network input must be N x 1 x 96 x 96, got " + nn::shape_string(images.shape));
  if (images.dim(0) < 1) throw ContractError("empty batch");
  // Train mode mutates normalization statistics; eval mode only reads.
  auto& L = *layers_;
  ForwardOutput<T> out;
  MacCounter mc;
  const int n = images.dim(0);
  nn::check_finite(images, "input");

  const Tensor<T>* x = &images;
  if (has_stn()) {
    Tensor<T> a, b, flat, h;
    stage_forward(L.stn1, images, tr ? &tr->s1 : nullptr, train, a, mc, "stn.conv1");
    stage_forward(L.stn2, a, tr ? &tr->s2 : nullptr, train, b, mc, "stn.conv2");
    flatten_into(b, flat);
    linear_relu(L.stn_fc1, flat, h, mc, "stn.fc1");
    linear_relu(L.stn_fc2, h, out.theta, mc, "stn.fc2", false);
    nn::affine_sample(images, out.theta, T(imaging::kBackground), out.stn_output);
    mc.macs += static_cast<std::uint64_t>(n) * kSide * kSide * 4;
    nn::check_finite(out.stn_output, "stn.sample");
    out.stn_hidden = h;
    if (tr) {
      tr->stn_flat = std::move(flat);
      tr->stn_h = std::move(h);
      tr->theta = out.theta;
      tr->stn_out = out.stn_output;
    }
    x = &out.stn_output;
  }
  if (tr) tr->images = images;

  Tensor<T> cur;
  for (int i = 0; i < 4; ++i) {
    Tensor<T> next;
    stage_forward(L.down[i], i == 0 ? *x : cur, tr ? &tr->down[i] : nullptr, train, next, mc,
                  "encoder.down" + std::to_string(i));
    cur = std::move(next);
  }
  if (tr) tr->res.resize(L.res.size());
  for (std::size_t r = 0; r < L.res.size(); ++r) {
    auto& blk = L.res[r];
    const std::string name = "encoder.res" + std::to_string(r);
    ResTrace<T> local;
    ResTrace<T>& rt = tr ? tr->res[r] : local;
    Tensor<T> r1, c1, r2, c2;
    bn_relu(blk.bn1, cur, &rt.cache1, train, r1);
    blk.conv1.forward(r1, c1, mc);
    nn::check_finite(c1, name + ".conv1");
    bn_relu(blk.bn2, c1, &rt.cache2, train, r2);
    blk.conv2.forward(r2, c2, mc);
    nn::check_finite(c2, name + ".conv2");
    for (std::size_t i = 0; i < c2.size(); ++i) c2.data[i] += cur.data[i];
    if (tr) {
      rt.input = std::move(cur);
      rt.r1 = std::move(r1);
      rt.c1 = std::move(c1);
      rt.r2 = std::move(r2);
    }
    cur = std::move(c2);
  }
  bn_relu(L.enc_bn, cur, tr ? &tr->enc_cache : nullptr, train, out.encoder_feature);
  if (tr) tr->enc_pre = std::move(cur);

  Tensor<T> flat;
  flatten_into(out.encoder_feature, flat);
  linear_relu(L.fc_h, flat, out.z_h, mc, "embed.fc_h");
  linear_relu(L.fc_pose, out.z_h, out.z_pose, mc, "embed.fc_pose");
  linear_relu(L.fc_r, out.z_pose, out.z_r, mc, "decoder.fc_r");
  if (tr) tr->feature_flat = std::move(flat);

  if (decode && has_decoder()) {
    Tensor<T> d = out.z_r.reshaped({n, arch_.feature_channels(), kFeatureSide, kFeatureSide});
    for (int i = 0; i < 4; ++i) {
      Tensor<T> next;
      up_forward(L.up[i], d, tr ? &tr->up[i] : nullptr, train, next, mc, "decoder.up" + std::to_string(i));
      d = std::move(next);
    }
    Tensor<T> logits;
    L.out_conv.forward(d, logits, mc);
    nn::check_finite(logits, "decoder.out");
    nn::tanh_forward(logits, out.reconstruction);
    if (tr) tr->recon = out.reconstruction;
  }

  Tensor<T> h1, h2;
  linear_relu(L.j1, out.z_r, h1, mc, "joint.fc1");
  linear_relu(L.j2, h1, h2, mc, "joint.fc2");
  linear_relu(L.j3, h2, out.joints, mc, "joint.fc3", false);
  if (tr) {
    tr->z_h = out.z_h;
    tr->z_pose = out.z_pose;
    tr->z_r = out.z_r;
    tr->h1 = std::move(h1);
    tr->h2 = std::move(h2);
    tr->valid = true;
  }
  out.macs = mc.macs;
  return out;
}

template <typename T>
ForwardOutput<T> Network<T>::forward_eval(const Tensor<T>& images) const {
  return run(images, nullptr, false, true);
}

template <typename T>
ForwardOutput<T> Network<T>::forward_train(const Tensor<T>& images) {
  trace_->valid = false;
  return run(images, trace_.get(), true, true);
}

template <typename T>
Tensor<T> Network<T>::infer_joints_raw(const Tensor<T>& images, std::uint64_t* macs) const {
  auto out = run(images, nullptr, false, false);
  if (macs) *macs = out.macs;
  return std::move(out.joints);
}

template <typename T>
kinematics::JointVector Network<T>::infer_joints(const imaging::DepthImage& image,
                                                 const kinematics::JointLayout& layout) const {
  const imaging::DepthImage* ptr = &image;
  const auto raw = infer_joints_raw(to_batch<T>(std::span<const imaging::DepthImage* const>(&ptr, 1)));
  if (static_cast<int>(raw.size()) != layout.count()) throw ContractError("layout size differs from the joint head");
  std::vector<double> q(raw.data.begin(), raw.data.end());
  return kinematics::clamp_to_limits(kinematics::JointVector(std::move(q)), layout);
}

namespace {

template <typename T>
void stage_backward(ConvBn<T>& s, StageTrace<T>& tr, Tensor<T>& d, Tensor<T>* dx) {
  nn::relu_backward(tr.out, d, d);
  Tensor<T> dpre;
  s.bn.backward(tr.pre_bn, tr.cache, d, dpre);
  s.conv.backward(tr.input, dpre, dx);
}

template <typename T>
void up_backward(UpBn<T>& s, StageTrace<T>& tr, Tensor<T>& d, Tensor<T>* dx) {
  nn::relu_backward(tr.out, d, d);
  Tensor<T> dpre;
  s.bn.backward(tr.pre_bn, tr.cache, d, dpre);
  s.up.backward(tr.input, dpre, dx);
}

}  // namespace

template <typename T>
void Network<T>::backward(const Tensor<T>& d_joints, const Tensor<T>* d_recon) {
  auto& tr = *trace_;
  if (!tr.valid) throw ContractError("backward() needs a preceding forward_train()");
  auto& L = *layers_;
  for (auto* p : L.params) p->ensure_grad();
  const int n = tr.images.dim(0);
  if (d_joints.shape != std::vector<int>{n, arch_.joints}) throw ContractError("joint gradient has the wrong shape");

  // joint head
  Tensor<T> d, d2;
  L.j3.backward(tr.h2, d_joints, &d);
  nn::relu_backward(tr.h2, d, d);
  L.j2.backward(tr.h1, d, &d2);
  nn::relu_backward(tr.h1, d2, d2);
  Tensor<T> dz_r;
  L.j1.backward(tr.z_r, d2, &dz_r);

  // decoder
  if (has_decoder() && d_recon && !d_recon->empty()) {
    if (d_recon->shape != tr.recon.shape) throw ContractError("reconstruction gradient has the wrong shape");
    Tensor<T> dl;
    nn::tanh_backward(tr.recon, *d_recon, dl);
    Tensor<T> dd;
    L.out_conv.backward(tr.up[3].out, dl, &dd);
    for (int i = 3; i >= 0; --i) {
      Tensor<T> dprev;
      up_backward(L.up[i], tr.up[i], dd, &dprev);
      dd = std::move(dprev);
    }
    for (std::size_t i = 0; i < dz_r.size(); ++i) dz_r.data[i] += dd.data[i];
  }

  // embedding
  nn::relu_backward(tr.z_r, dz_r, dz_r);
  Tensor<T> dz_pose, dz_h, dflat;
  L.fc_r.backward(tr.z_pose, dz_r, &dz_pose);
  nn::relu_backward(tr.z_pose, dz_pose, dz_pose);
  L.fc_pose.backward(tr.z_h, dz_pose, &dz_h);
  nn::relu_backward(tr.z_h, dz_h, dz_h);
  L.fc_h.backward(tr.feature_flat, dz_h, &dflat);

  // encoder
  Tensor<T> feat = tr.feature_flat.reshaped(tr.enc_pre.shape);
  Tensor<T> dfeat = dflat.reshaped(tr.enc_pre.shape);
  nn::relu_backward(feat, dfeat, dfeat);
  Tensor<T> dcur;
  L.enc_bn.backward(tr.enc_pre, tr.enc_cache, dfeat, dcur);
  for (int r = static_cast<int>(L.res.size()) - 1; r >= 0; --r) {
    auto& blk = L.res[r];
    auto& rt = tr.res[r];
    Tensor<T> dr2, dc1, dr1, dx;
    blk.conv2.backward(rt.r2, dcur, &dr2);
    nn::relu_backward(rt.r2, dr2, dr2);
    blk.bn2.backward(rt.c1, rt.cache2, dr2, dc1);
    blk.conv1.backward(rt.r1, dc1, &dr1);
    nn::relu_backward(rt.r1, dr1, dr1);
    blk.bn1.backward(rt.input, rt.cache1, dr1, dx);
    for (std::size_t i = 0; i < dx.size(); ++i) dcur.data[i] += dx.data[i];
  }
  for (int i = 3; i >= 0; --i) {
    Tensor<T> dprev;
    const bool need_input_grad = i > 0 || has_stn();
    stage_backward(L.down[i], tr.down[i], dcur, need_input_grad ? &dprev : static_cast<Tensor<T>*>(nullptr));
    dcur = std::move(dprev);
  }

  // preprocess: gradients reach the localization network through theta
  if (has_stn()) {
    Tensor<T> dtheta, dh, dflat_s;
    nn::affine_sample_backward(tr.images, tr.theta, T(imaging::kBackground), dcur, dtheta);
    L.stn_fc2.backward(tr.stn_h, dtheta, &dh);
    nn::relu_backward(tr.stn_h, dh, dh);
    L.stn_fc1.backward(tr.stn_flat, dh, &dflat_s);
    Tensor<T> ds = dflat_s.reshaped(tr.s2.out.shape);
    Tensor<T> ds1;
    stage_backward(L.stn2, tr.s2, ds, &ds1);
    stage_backward<T>(L.stn1, tr.s1, ds1, nullptr);
  }
}

template <typename T>
std::vector<std::int32_t> Network<T>::activation_pattern() const {
  const auto& tr = *trace_;
  if (!tr.valid) throw ContractError("activation_pattern() needs a preceding forward_train()");
  std::vector<std::int32_t> out;
  const auto signs = [&out](const Tensor<T>& t) {
    for (T v : t.data) out.push_back(v > T(0) ? 1 : 0);
  };
  if (has_stn()) {
    signs(tr.s1.out);
    signs(tr.s2.out);
    signs(tr.stn_h);
    nn::affine_sample_cells(tr.theta, kSide, kSide, out);
  }
  for (const auto& d : tr.down) signs(d.out);
  for (const auto& r : tr.res) {
    signs(r.r1);
    signs(r.r2);
  }
  signs(tr.feature_flat);
  signs(tr.z_h);
  signs(tr.z_pose);
  signs(tr.z_r);
  if (has_decoder())
    for (const auto& u : tr.up) signs(u.out);
  signs(tr.h1);
  signs(tr.h2);
  return out;
}

template <typename T>
Tensor<T> to_batch(std::span<const imaging::DepthImage* const> images) {
  Tensor<T> t({static_cast<int>(images.size()), 1, kSide, kSide});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto px = images[b]->pixels();
    std::copy(px.begin(), px.end(), t.sample(static_cast<int>(b)).begin());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Losses

double recon_loss(std::span<const double> target, std::span<const double> recon, std::span<const double> alpha) {
  if (target.size() != recon.size() || target.size() != alpha.size() || target.empty())
    throw ContractError("recon_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double r = target[i] - recon[i];
    s += alpha[i] * (r * r);
  }
  return s / static_cast<double>(target.size());
}

double recon_loss(const imaging::DepthImage& target, const imaging::DepthImage& recon, const imaging::WeightMap& alpha) {
  if (alpha.alpha.size() != static_cast<std::size_t>(imaging::kPixelCount)) throw ContractError("recon_loss: weight map size");
  const std::vector<double> t(target.pixels().begin(), target.pixels().end());
  const std::vector<double> r(recon.pixels().begin(), recon.pixels().end());
  return recon_loss(t, r, alpha.alpha);
}

double joint_loss(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw ContractError("joint_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

double joint_loss(const kinematics::JointVector& pred, const kinematics::JointVector& gt) {
  return joint_loss(pred.values(), gt.values());
}

double total_loss(double l_recon, double l_joint, double lambda_recon, double lambda_joint) {
  if (!(lambda_recon >= 0.0) || !(lambda_joint >= 0.0)) throw ContractError("loss weights must be >= 0");
  return lambda_recon * l_recon + lambda_joint * l_joint;
}

template <typename T>
BatchLoss<T> batch_loss(const ForwardOutput<T>& out, const Tensor<T>& target_images, const Tensor<T>& alpha,
                        const Tensor<T>& target_joints, double lambda_recon, double lambda_joint) {
  if (!(lambda_recon >= 0.0) || !(lambda_joint >= 0.0)) throw ContractError("loss weights must be >= 0");
  BatchLoss<T> L;
  const int n = out.joints.dim(0);
  const int m = out.joints.dim(1);
  if (target_joints.shape != out.joints.shape) throw ContractError("batch_loss: joint target shape mismatch");
  L.d_joints = Tensor<T>(out.joints.shape);
  double jsum = 0.0;
  for (int b = 0; b < n; ++b) {
    double s = 0.0;
    for (int k = 0; k < m; ++k) {
      const std::size_t i = static_cast<std::size_t>(b) * m + k;
      const double d = static_cast<double>(out.joints.data[i]) - target_joints.data[i];
      s += d * d;
      L.d_joints.data[i] = static_cast<T>(lambda_joint * 2.0 * d / (static_cast<double>(m) * n));
    }
    jsum += s / m;
  }
  L.joint = jsum / n;
  if (!out.reconstruction.empty()) {
    if (target_images.shape != out.reconstruction.shape) throw ContractError("batch_loss: image target shape mismatch");
    const std::size_t px = out.reconstruction.stride0();
    if (alpha.size() != px * n) throw ContractError("batch_loss: weight map shape mismatch");
    L.d_recon = Tensor<T>(out.reconstruction.shape);
    double rsum = 0.0;
    for (int b = 0; b < n; ++b) {
      double s = 0.0;
      for (std::size_t p = 0; p < px; ++p) {
        const std::size_t i = static_cast<std::size_t>(b) * px + p;
        const double r = static_cast<double>(target_images.data[i]) - out.reconstruction.data[i];
        s += alpha.data[i] * (r * r);
        L.d_recon.data[i] = static_cast<T>(-lambda_recon * 2.0 * alpha.data[i] * r / (static_cast<double>(px) * n));
      }
      rsum += s / static_cast<double>(px);
    }
    L.recon = rsum / n;
  }
  L.total = total_loss(L.recon, L.joint, lambda_recon, lambda_joint);
  return L;
}

template class Network<float>;
template class Network<double>;
template Tensor<float> to_batch<float>(std::span<const imaging::DepthImage* const>);
template Tensor<double> to_batch<double>(std::span<const imaging::DepthImage* const>);
template BatchLoss<float> batch_loss<float>(const ForwardOutput<float>&, const Tensor<float>&, const Tensor<float>&,
                                            const Tensor<float>&, double, double);
template BatchLoss<double> batch_loss<double>(const ForwardOutput<double>&, const Tensor<double>&,
                                              const Tensor<double>&, const Tensor<double>&, double, double);

}  // namespace handteleop::model
