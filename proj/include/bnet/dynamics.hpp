#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace bnet {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Vec7 = Eigen::Matrix<double, 7, 1>;

struct Bounds {
  double min = 0.0;
  double max = 0.0;

  bool contains(double x) const { return x >= min && x <= max; }
  double clamp(double x) const { return x < min ? min : (x > max ? max : x); }
};

/// Kinematic bicycle parameters and actuator limits.
struct VehicleParams {
  double l_r = 1.395;  // rear axle to CoG (m)
  double l_f = 1.395;  // front axle to CoG (m)
  Bounds a_bounds{-6.0, 3.0};           // m/s^2
  Bounds omega_bounds{-1.0, 1.0};       // rad/s
  Bounds jerk_bounds{-8.0, 8.0};        // m/s^3
  Bounds steer_acc_bounds{-4.0, 4.0};   // rad/s^2
  double dt = 0.1;

  void validate() const;
};

/// Vehicle state relative to a reference path. Sign convention: d and the
/// path normal are positive to the left of the direction of travel.
/// `a` and `omega` are states of the NMPC model only; the 5-state model
/// ignores them on input and records the applied control in them on output.
struct CurvilinearState {
  double s = 0.0;
  double d = 0.0;
  double mu = 0.0;
  double v = 0.0;
  double delta = 0.0;
  double a = 0.0;
  double omega = 0.0;

  Vec5 head5() const { return (Vec5() << s, d, mu, v, delta).finished(); }
  Vec7 full7() const { return (Vec7() << s, d, mu, v, delta, a, omega).finished(); }
  static CurvilinearState from5(const Vec5& x, double a = 0.0, double omega = 0.0);
  static CurvilinearState from7(const Vec7& x);
};

/// Control of the 5-state model.
struct Control {
  double a = 0.0;
  double omega = 0.0;

  Eigen::Vector2d vec() const { return {a, omega}; }
};

/// Control of the 7-state NMPC model.
struct MpcControl {
  double jerk = 0.0;
  double steer_acc = 0.0;
};

struct PathSegment {
  double length = 0.0;     // m
  double curvature = 0.0;  // 1/m
};

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

/// Piecewise-constant-curvature reference path. The first segment starts at
/// the origin heading along +x.
class ReferencePath {
 public:
  ReferencePath() = default;
  ReferencePath(std::vector<PathSegment> segments, double lane_half_width, bool closed);

  static ReferencePath straight(double length, double lane_half_width = 2.0);

  const std::vector<PathSegment>& segments() const { return segments_; }
  double lane_half_width() const { return lane_half_width_; }
  bool closed() const { return closed_; }
  double length() const { return total_length_; }

  /// Arc length wrapped onto [0, length) for closed paths; range-checked for
  /// open ones.
  double wrap(double s) const;
  double curvature_at(double s) const;
  /// Pose of the path itself (d = 0) at arc length s; theta is the tangent.
  Pose2 point_at(double s) const;
  /// Nearest-point projection of a Cartesian point, returned as (s, d).
  Eigen::Vector2d project(double x, double y) const;

 private:
  std::size_t segment_index(double s_wrapped) const;

  std::vector<PathSegment> segments_;
  std::vector<double> starts_;
  std::vector<Pose2> start_poses_;
  double lane_half_width_ = 2.0;
  bool closed_ = false;
  double total_length_ = 0.0;
};

/// Raised when 1 - d*kappa <= 0. Carries the state that triggered it.
class SingularityError : public std::runtime_error {
 public:
  SingularityError(const std::string& what, const CurvilinearState& state)
      : std::runtime_error(what), state_(state) {}
  const CurvilinearState& state() const { return state_; }

 private:
  CurvilinearState state_;
};

double slip_angle(double delta, const VehicleParams& params);
/// d(beta)/d(delta).
double slip_angle_derivative(double delta, const VehicleParams& params);

double curvature_at(const ReferencePath& path, double s);

/// Drift of the reduced model, rows (s, d, mu, v, delta). Controls (a, omega)
/// enter through a constant matrix on the v and delta rows.
Vec5 drift_bn(const CurvilinearState& state, const ReferencePath& path, const VehicleParams& params);
Vec5 drift_bn(const CurvilinearState& state, double kappa, const VehicleParams& params);
Vec5 dynamics_bn(const CurvilinearState& state, const Control& u, double kappa,
                 const VehicleParams& params);

/// Full model, rows (s, d, mu, v, delta, a, omega).
Vec7 dynamics_mpc(const CurvilinearState& state, const MpcControl& u, const ReferencePath& path,
                  const VehicleParams& params);
Vec7 dynamics_mpc(const CurvilinearState& state, const MpcControl& u, double kappa,
                  const VehicleParams& params);

CurvilinearState step_rk4(const CurvilinearState& state, const Control& u, const ReferencePath& path,
                          const VehicleParams& params, double dt);
CurvilinearState step_rk4_mpc(const CurvilinearState& state, const MpcControl& u,
                              const ReferencePath& path, const VehicleParams& params, double dt);

Pose2 global_pose(const ReferencePath& path, const CurvilinearState& state);

}  // namespace bnet
