#include "handteleop/errors.hpp"

#include <sstream>
#include <utility>

namespace handteleop {

namespace {

std::string limit_message(const std::string& joint, double value, double lower, double upper) {
  std::ostringstream os;
  os << "joint " << joint << " = " << value << " outside limits [" << lower << ", " << upper << "]";
  return os.str();
}

std::string unreachable_message(double residual) {
  std::ostringstream os;
  os << "target unreachable, residual " << residual;
  return os.str();
}

}  // namespace

LimitViolation::LimitViolation(std::string joint, double value, double lower, double upper)
    : Error(limit_message(joint, value, lower, upper)), joint_(std::move(joint)) {}

UnreachableTarget::UnreachableTarget(std::vector<double> best_joints, double residual)
    : Error(unreachable_message(residual)), best_joints_(std::move(best_joints)), residual_(residual) {}

}  // namespace handteleop
