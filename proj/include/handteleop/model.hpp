#pragma once

// Translation network: optional spatial-transformer preprocessing, a
// convolutional encoder with residual blocks, a fully-connected embedding
// bottleneck, an up-convolutional decoder that reconstructs the robot-view
// depth image, and a joint-regression head fed from the robot feature Z_R.
//
//   image -> [STN] -> encoder (4x conv s2, residual blocks) -> 6x6xC
//         -> FC Z_H -> FC Z_pose -> FC Z_R (6x6xC)
//         -> decoder (4x up-conv, conv, tanh) -> reconstruction
//         -> joint head (FC, FC, FC) -> 19 joints

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "handteleop/imaging.hpp"
#include "handteleop/kinematics.hpp"
#include "handteleop/nn/layers.hpp"
#include "handteleop/nn/tensor.hpp"

namespace handteleop::model {

using nn::Tensor;

enum class Variant { kTransteleop, kNoStn, kRobotOnly };
std::string_view to_string(Variant v);
/// Throws ConfigError.
Variant parse_variant(std::string_view text);

struct ArchConfig {
  std::string name = "full";
  std::array<int, 4> encoder_channels{64, 128, 256, 512};
  int residual_blocks = 2;
  int z_h = 8192;
  int z_pose = 1024;
  std::array<int, 4> decoder_channels{256, 128, 64, 32};
  std::array<int, 2> joint_hidden{512, 256};
  std::array<int, 2> stn_channels{8, 16};
  int stn_hidden = 32;
  int joints = kinematics::kRobotJointCount;
  double init_std = 0.02;

  /// Full-width network, about 200M parameters.
  static ArchConfig full();
  /// Same topology with narrow layers, for CPU-budget training runs and the float64 gradient check.
  static ArchConfig desk();
  /// "full" or "desk"; throws ConfigError.
  static ArchConfig preset(std::string_view name);
  void validate() const;

  int feature_channels() const { return encoder_channels[3]; }
  /// Flattened encoder output and Z_R size: 6 * 6 * C.
  int feature_size() const { return 36 * encoder_channels[3]; }
};

nlohmann::json to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j);

template <typename T>
struct ForwardOutput {
  Tensor<T> joints;           // N x 19, linear (unclamped)
  Tensor<T> reconstruction;   // N x 1 x 96 x 96 in [-1, 1]; empty without a decoder
  Tensor<T> encoder_feature;  // N x C x 6 x 6
  Tensor<T> z_h;              // N x z_h
  Tensor<T> z_pose;           // N x z_pose
  Tensor<T> z_r;              // N x 36C
  Tensor<T> stn_hidden;       // N x stn_hidden; empty without STN
  Tensor<T> theta;            // N x 6; empty without STN
  Tensor<T> stn_output;       // N x 1 x 96 x 96; empty without STN
  std::uint64_t macs = 0;
};

template <typename T>
class Network {
 public:
  Network(ArchConfig arch, Variant variant, std::uint64_t seed);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const ArchConfig& arch() const { return arch_; }
  Variant variant() const { return variant_; }
  bool has_stn() const { return variant_ != Variant::kNoStn; }
  bool has_decoder() const { return variant_ != Variant::kRobotOnly; }

  /// Running normalization statistics; a pure function of (images, state). Safe for concurrent callers.
  ForwardOutput<T> forward_eval(const Tensor<T>& images) const;
  /// Batch statistics; updates running statistics and records activations for backward().
  ForwardOutput<T> forward_train(const Tensor<T>& images);
  /// Accumulates parameter gradients for the last forward_train. d_recon may be null.
  void backward(const Tensor<T>& d_joints, const Tensor<T>* d_recon);
  void zero_grad();
  /// Piecewise-linear regime of the last forward_train: every ReLU sign and every
  /// bilinear source cell. Equal patterns at two parameter points mean no kink lies
  /// between them, which is what a finite-difference check needs.
  std::vector<std::int32_t> activation_pattern() const;

  /// Eval-mode joints without running the decoder convolutions.
  Tensor<T> infer_joints_raw(const Tensor<T>& images, std::uint64_t* macs = nullptr) const;
  /// Single image, clamped into `layout` limits.
  kinematics::JointVector infer_joints(const imaging::DepthImage& image, const kinematics::JointLayout& layout) const;

  std::vector<nn::Param<T>*> parameters();
  std::vector<const nn::Param<T>*> parameters() const;
  std::vector<nn::Buffer<T>*> buffers();
  std::vector<const nn::Buffer<T>*> buffers() const;
  std::size_t parameter_count() const;

  /// FNV-1a over the architecture description and variant.
  std::uint64_t architecture_hash() const;

 private:
  struct Layers;
  struct Trace;

  ForwardOutput<T> run(const Tensor<T>& images, Trace* trace, bool train, bool decode) const;

  ArchConfig arch_;
  Variant variant_;
  std::unique_ptr<Layers> layers_;
  std::unique_ptr<Trace> trace_;
};

std::uint64_t architecture_hash(const ArchConfig& arch, Variant variant);

/// Images as an N x 1 x 96 x 96 tensor.
template <typename T>
Tensor<T> to_batch(std::span<const imaging::DepthImage* const> images);

// ---------------------------------------------------------------------------
// Losses

/// (1/N) sum_i alpha_i (target_i - recon_i)^2 over any equal-length spans.
double recon_loss(std::span<const double> target, std::span<const double> recon, std::span<const double> alpha);
double recon_loss(const imaging::DepthImage& target, const imaging::DepthImage& recon, const imaging::WeightMap& alpha);
/// (1/M) ||pred - gt||^2.
double joint_loss(std::span<const double> pred, std::span<const double> gt);
double joint_loss(const kinematics::JointVector& pred, const kinematics::JointVector& gt);

inline constexpr double kLambdaRecon = 1.0;
inline constexpr double kLambdaJoint = 10.0;
/// lambda_recon * L_recon + lambda_joint * L_joint; negative weights are a ContractError.
double total_loss(double l_recon, double l_joint, double lambda_recon = kLambdaRecon, double lambda_joint = kLambdaJoint);

template <typename T>
struct BatchLoss {
  double recon = 0.0;  // batch mean of recon_loss
  double joint = 0.0;  // batch mean of joint_loss
  double total = 0.0;
  Tensor<T> d_recon;   // empty when the output has no reconstruction
  Tensor<T> d_joints;
};

/// Batch-mean losses and their gradients with respect to the network outputs.
/// alpha is N x 96*96 (ignored without a reconstruction).
template <typename T>
BatchLoss<T> batch_loss(const ForwardOutput<T>& out, const Tensor<T>& target_images, const Tensor<T>& alpha,
                        const Tensor<T>& target_joints, double lambda_recon, double lambda_joint);

}  // namespace handteleop::model
