#pragma once

// Replay-driven hand-arm teleoperation in simulated time. The arm loop (20 Hz)
// interpolates the recorded wrist pose, solves IK warm-started from the previous
// solution and applies the velocity law
//   V_t = d1 (J_ik_t - J_ik_{t-1}) + d2 (J_ik_t - J_robot_t)
// in radians per control tick to an integrating plant. The hand loop (10 Hz)
// runs joint inference on the latest human depth image.
//
// Trajectory directory:
//   arm.csv    t, x, y, z, qw, qx, qy, qz        (seconds, meters, unit quaternion)
//   hand.csv   t, image                          (16-bit depth PNG, path relative to the directory)

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "handteleop/data.hpp"
#include "handteleop/kinematics.hpp"
#include "handteleop/model.hpp"

namespace handteleop::teleop {

using kinematics::ArmJoints;

struct GainConfig {
  double delta1 = 0.7;           // feedforward
  double delta2 = 0.1;           // feedback
  double arm_rate = 20.0;        // Hz
  double hand_rate = 10.0;       // Hz
  double velocity_limit = 1.0;   // rad/s; per tick the clip is velocity_limit / arm_rate

  void validate() const;
  double tick() const { return 1.0 / arm_rate; }
  double per_tick_limit() const { return velocity_limit / arm_rate; }
};

nlohmann::json to_json(const GainConfig& gains);
GainConfig gains_from_json(const nlohmann::json& j);

struct ArmState {
  ArmJoints joints{};
  ArmJoints velocities{};  // rad/s realized over the last step
  double timestamp = 0.0;
};

/// Unclipped velocity law, radians per tick.
ArmJoints velocity_law(const ArmJoints& ik_now, const ArmJoints& ik_prev, const ArmJoints& robot,
                       const GainConfig& gains);
/// velocity_law clipped elementwise to +-per_tick_limit().
ArmJoints velocity_command(const ArmJoints& ik_now, const ArmJoints& ik_prev, const ArmJoints& robot,
                           const GainConfig& gains);

/// joints += command * (dt / tick), clamped to the chain limits; records velocities, advances time.
ArmState step_plant(const ArmState& state, const ArmJoints& command, double dt, const kinematics::ArmChain& chain,
                    double tick);

struct ArmSample {
  double t = 0.0;
  kinematics::WristPose pose;
};

struct HandSample {
  double t = 0.0;
  std::filesystem::path image;
};

struct ReplayTrajectory {
  std::vector<ArmSample> arm;
  std::vector<HandSample> hand;

  /// Timestamps strictly increasing per channel, finite poses, unit quaternions; throws ContractError.
  void validate() const;
};

/// Linear in position, spherical-linear in orientation; clamps outside the recorded span.
kinematics::WristPose interpolate(const std::vector<ArmSample>& arm, double t);

ReplayTrajectory read_trajectory(const std::filesystem::path& dir);
void write_trajectory(const std::filesystem::path& dir, const ReplayTrajectory& trajectory);

struct ArmTick {
  std::int64_t tick = 0;
  double t = 0.0;
  ArmJoints ik{};        // commanded target J_ik_t
  ArmJoints command{};   // rad per tick, after clipping
  ArmJoints joints{};    // plant state after the step
  double ik_residual = 0.0;
  bool ik_ok = true;
  double joint_error = 0.0;     // max |J_ik_t - joints|
  double position_error = 0.0;  // m, wrist FK of `joints` vs the interpolated target
  double rotation_error = 0.0;  // rad
};

struct HandTick {
  std::int64_t tick = 0;
  double t = 0.0;
  double image_t = 0.0;  // timestamp of the image used
  kinematics::JointVector joints;
};

struct Event {
  double t = 0.0;
  std::string kind;
  std::string detail;
};

struct TeleopLog {
  std::vector<ArmTick> arm;
  std::vector<HandTick> hand;
  std::vector<Event> events;
};

struct ReplayOptions {
  double duration = 0.0;  // seconds from the first sample; 0 means the recorded span
  std::optional<ArmJoints> initial_joints;  // default: zeros clamped into the limits
  kinematics::IkOptions ik;
  // A 5-joint arm cannot match every interpolated 6-D pose exactly; best-effort
  // solutions within this pose residual count as reached.
  double accept_residual = 1e-3;
  bool realtime = false;  // pace ticks against the wall clock
};

/// Single-threaded interleaving by simulated time; at equal times the arm tick runs first.
/// `network` may be null, which (like an empty hand channel) produces an arm-only log.
TeleopLog run_replay(const ReplayTrajectory& trajectory, const model::Network<float>* network,
                     const kinematics::ArmChain& chain, const kinematics::JointLayout& hand_layout,
                     const GainConfig& gains, const ReplayOptions& options = {});

/// arm_log.csv, hand_log.csv, events.csv.
void write_log(const std::filesystem::path& dir, const TeleopLog& log, const kinematics::JointLayout& hand_layout);

/// Smooth reachable arm path (FK of a sinusoidal joint trajectory) plus hand images
/// drawn from the dataset's test split (or all samples) at the hand rate.
ReplayTrajectory synthesize_trajectory(const data::Dataset& dataset, const kinematics::ArmChain& chain,
                                       const std::filesystem::path& out_dir, double seconds, std::uint64_t seed,
                                       const GainConfig& gains);

}  // namespace handteleop::teleop
