#pragma once

#include "bnet/dynamics.hpp"

#include <Eigen/Dense>

namespace bnet {

/// Class-K function. `Power` is the odd extension gain*sign(x)*|x|^power so
/// it is defined (extended class K) for negative arguments as well.
struct ClassK {
  enum class Kind { Linear, Power };
  Kind kind = Kind::Linear;
  double gain = 1.0;
  double power = 1.0;

  static ClassK linear(double gain = 1.0) { return {Kind::Linear, gain, 1.0}; }
  static ClassK power_law(double gain, double power) { return {Kind::Power, gain, power}; }

  double operator()(double x) const;
  double derivative(double x) const;
  void validate() const;
};

enum class BarrierKind { LaneLeft, LaneRight, ObstacleDisk };

/// One relative-degree-two safety constraint b(x) >= 0.
///   lane_left:     b = d_lf - d
///   lane_right:    b = d_lf + d
///   obstacle_disk: b = (s_obs - s)^2 + (d - d_obs)^2 - r_D^2
struct BarrierSpec {
  BarrierKind kind = BarrierKind::LaneLeft;
  double d_lf = 0.0;
  double s_obs = 0.0;
  double d_obs = 0.0;
  double r_D = 0.0;
  ClassK alpha1{};
  ClassK alpha2{};
  int rel_degree = 2;

  static BarrierSpec lane_left(double d_lf);
  static BarrierSpec lane_right(double d_lf);
  static BarrierSpec obstacle(double s_obs, double d_obs, double r_D);

  void validate() const;
};

struct Penalties {
  double p1 = 1.0;
  double p2 = 1.0;
};

/// coeff . u + constant >= 0
struct LinearControlConstraint {
  Eigen::VectorXd coeff;
  double constant = 0.0;

  double slack(const Eigen::VectorXd& u) const { return coeff.dot(u) + constant; }
};

struct LieDerivatives {
  double Lf_b = 0.0;
  double Lf2_b = 0.0;
  Eigen::Vector2d LgLf_b = Eigen::Vector2d::Zero();  // (a, omega)
};

/// Everything the differentiable layer needs about one constraint row,
/// including sensitivities of the constant term to the penalties.
struct HocbfTerms {
  double b = 0.0;
  double psi1 = 0.0;
  LieDerivatives lie;
  LinearControlConstraint row;
  double dconst_dp1 = 0.0;
  double dconst_dp2 = 0.0;
};

double barrier_value(const BarrierSpec& spec, const CurvilinearState& state);

LieDerivatives lie_derivatives(const BarrierSpec& spec, const CurvilinearState& state,
                               const ReferencePath& path, const VehicleParams& params);
LieDerivatives lie_derivatives(const BarrierSpec& spec, const CurvilinearState& state, double kappa,
                               const VehicleParams& params);

double psi1(const BarrierSpec& spec, const CurvilinearState& state, const Penalties& penalties,
            const ReferencePath& path, const VehicleParams& params);

LinearControlConstraint hocbf_constraint(const BarrierSpec& spec, const CurvilinearState& state,
                                         const Penalties& penalties, const ReferencePath& path,
                                         const VehicleParams& params);

HocbfTerms hocbf_terms(const BarrierSpec& spec, const CurvilinearState& state, const Penalties& penalties,
                       double kappa, const VehicleParams& params);

/// Relative-degree-one constraint Lf_b + Lg_b . u + alpha(b) >= 0.
LinearControlConstraint cbf_constraint_m1(double b, double Lf_b, const Eigen::VectorXd& Lg_b,
                                          const ClassK& alpha);

}  // namespace bnet
