#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace handteleop {

/// Base of every error thrown by the library. Carries a single-line message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (shape, length, emptiness).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A joint value lies outside its configured limits.
class LimitViolation : public Error {
 public:
  LimitViolation(std::string joint, double value, double lower, double upper);

  const std::string& joint() const { return joint_; }

 private:
  std::string joint_;
};

/// No pixel of the frame was covered by geometry.
class EmptyRender : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable dataset member.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// On-disk format or version not understood.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint and model disagree on architecture.
class IncompatibleCheckpoint : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity surfaced inside the network or the loss.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// IK gave up; the best joints found and their residual travel with the error.
class UnreachableTarget : public Error {
 public:
  UnreachableTarget(std::vector<double> best_joints, double residual);

  const std::vector<double>& best_joints() const { return best_joints_; }
  double residual() const { return residual_; }

 private:
  std::vector<double> best_joints_;
  double residual_;
};

}  // namespace handteleop
