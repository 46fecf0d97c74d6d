#include "bnet/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace bnet {

namespace {

constexpr double kPi = std::numbers::pi;

void check_bounds(const Bounds& b, const char* name) {
  if (!(b.min < b.max)) {
    throw std::invalid_argument(std::string("VehicleParams: ") + name + " requires min < max");
  }
}

Pose2 advance(const Pose2& p, double kappa, double l) {
  if (std::abs(kappa) < 1e-12) {
    return {p.x + l * std::cos(p.theta), p.y + l * std::sin(p.theta), p.theta};
  }
  const double phi = p.theta + kappa * l;
  return {p.x + (std::sin(phi) - std::sin(p.theta)) / kappa,
          p.y - (std::cos(phi) - std::cos(p.theta)) / kappa, phi};
}

}  // namespace

void VehicleParams::validate() const {
  if (!(l_r > 0.0) || !(l_f > 0.0)) throw std::invalid_argument("VehicleParams: l_r, l_f must be > 0");
  check_bounds(a_bounds, "a_bounds");
  check_bounds(omega_bounds, "omega_bounds");
  check_bounds(jerk_bounds, "jerk_bounds");
  check_bounds(steer_acc_bounds, "steer_acc_bounds");
  if (!(dt > 0.0)) throw std::invalid_argument("VehicleParams: dt must be > 0");
}

CurvilinearState CurvilinearState::from5(const Vec5& x, double a, double omega) {
  return {x(0), x(1), x(2), x(3), x(4), a, omega};
}

CurvilinearState CurvilinearState::from7(const Vec7& x) {
  return {x(0), x(1), x(2), x(3), x(4), x(5), x(6)};
}

// ---------------------------------------------------------------------------
// ReferencePath

ReferencePath::ReferencePath(std::vector<PathSegment> segments, double lane_half_width, bool closed)
    : segments_(std::move(segments)), lane_half_width_(lane_half_width), closed_(closed) {
  if (segments_.empty()) throw std::invalid_argument("ReferencePath: no segments");
  if (!(lane_half_width_ > 0.0)) throw std::invalid_argument("ReferencePath: lane_half_width must be > 0");
  Pose2 pose;
  double s = 0.0;
  for (const auto& seg : segments_) {
    if (!(seg.length > 0.0)) throw std::invalid_argument("ReferencePath: segment length must be > 0");
    if (!(std::abs(seg.curvature) * lane_half_width_ < 1.0)) {
      throw std::invalid_argument("ReferencePath: |kappa| * lane_half_width must be < 1");
    }
    starts_.push_back(s);
    start_poses_.push_back(pose);
    pose = advance(pose, seg.curvature, seg.length);
    s += seg.length;
  }
  total_length_ = s;
}

ReferencePath ReferencePath::straight(double length, double lane_half_width) {
  return ReferencePath({{length, 0.0}}, lane_half_width, false);
}

double ReferencePath::wrap(double s) const {
  if (closed_) {
    double w = std::fmod(s, total_length_);
    if (w < 0.0) w += total_length_;
    return w;
  }
  if (s < 0.0 || s > total_length_) {
    std::ostringstream os;
    os << "ReferencePath: s=" << s << " outside open path [0, " << total_length_ << "]";
    throw std::out_of_range(os.str());
  }
  return s;
}

std::size_t ReferencePath::segment_index(double s_wrapped) const {
  std::size_t i = 0;
  while (i + 1 < starts_.size() && s_wrapped >= starts_[i + 1]) ++i;
  return i;
}

double ReferencePath::curvature_at(double s) const { return segments_[segment_index(wrap(s))].curvature; }

Pose2 ReferencePath::point_at(double s) const {
  const double w = wrap(s);
  const std::size_t i = segment_index(w);
  return advance(start_poses_[i], segments_[i].curvature, w - starts_[i]);
}

Eigen::Vector2d ReferencePath::project(double x, double y) const {
  double best_dist = std::numeric_limits<double>::infinity();
  Eigen::Vector2d best{0.0, 0.0};

  auto consider_point = [&](double s, const Pose2& p) {
    const double dx = x - p.x;
    const double dy = y - p.y;
    const double dist = std::hypot(dx, dy);
    if (dist < best_dist) {
      best_dist = dist;
      best = {s, -std::sin(p.theta) * dx + std::cos(p.theta) * dy};
    }
  };

  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& seg = segments_[i];
    const Pose2& p0 = start_poses_[i];
    const double k = seg.curvature;
    if (std::abs(k) < 1e-12) {
      const double t = (x - p0.x) * std::cos(p0.theta) + (y - p0.y) * std::sin(p0.theta);
      const double l = std::clamp(t, 0.0, seg.length);
      consider_point(starts_[i] + l, advance(p0, 0.0, l));
      continue;
    }
    const double cx = p0.x - std::sin(p0.theta) / k;
    const double cy = p0.y + std::cos(p0.theta) / k;
    const double rx = x - cx;
    const double ry = y - cy;
    const double sgn = k > 0.0 ? 1.0 : -1.0;
    const double phi = std::atan2(sgn * rx, -sgn * ry);
    double turn = sgn * (phi - p0.theta);
    turn = std::fmod(turn, 2.0 * kPi);
    if (turn < 0.0) turn += 2.0 * kPi;
    const double l = turn / std::abs(k);
    if (l <= seg.length) {
      consider_point(starts_[i] + l, advance(p0, k, l));
    } else {
      consider_point(starts_[i], p0);
      consider_point(starts_[i] + seg.length, advance(p0, k, seg.length));
    }
  }
  if (closed_) best(0) = wrap(best(0));
  return best;
}

// ---------------------------------------------------------------------------
// Kinematics

double slip_angle(double delta, const VehicleParams& params) {
  if (!(std::abs(delta) < kPi / 2.0)) throw std::domain_error("slip_angle: |delta| must be < pi/2");
  const double k = params.l_r / (params.l_r + params.l_f);
  return std::atan(k * std::tan(delta));
}

double slip_angle_derivative(double delta, const VehicleParams& params) {
  if (!(std::abs(delta) < kPi / 2.0)) throw std::domain_error("slip_angle: |delta| must be < pi/2");
  const double k = params.l_r / (params.l_r + params.l_f);
  const double t = std::tan(delta);
  return k * (1.0 + t * t) / (1.0 + k * k * t * t);
}

double curvature_at(const ReferencePath& path, double s) { return path.curvature_at(s); }

Vec5 drift_bn(const CurvilinearState& x, double kappa, const VehicleParams& params) {
  const double den = 1.0 - x.d * kappa;
  if (!(den > 0.0)) throw SingularityError("drift: 1 - d*kappa <= 0", x);
  const double beta = slip_angle(x.delta, params);
  const double c = std::cos(x.mu + beta);
  const double s_dot = x.v * c / den;
  Vec5 f;
  f << s_dot, x.v * std::sin(x.mu + beta), x.v / params.l_r * std::sin(beta) - kappa * s_dot, 0.0, 0.0;
  return f;
}

Vec5 drift_bn(const CurvilinearState& state, const ReferencePath& path, const VehicleParams& params) {
  return drift_bn(state, path.curvature_at(state.s), params);
}

Vec5 dynamics_bn(const CurvilinearState& state, const Control& u, double kappa, const VehicleParams& params) {
  Vec5 f = drift_bn(state, kappa, params);
  f(3) += u.a;
  f(4) += u.omega;
  return f;
}

Vec7 dynamics_mpc(const CurvilinearState& state, const MpcControl& u, double kappa,
                  const VehicleParams& params) {
  const Vec5 f5 = drift_bn(state, kappa, params);
  Vec7 f;
  f << f5(0), f5(1), f5(2), state.a, state.omega, u.jerk, u.steer_acc;
  return f;
}

Vec7 dynamics_mpc(const CurvilinearState& state, const MpcControl& u, const ReferencePath& path,
                  const VehicleParams& params) {
  return dynamics_mpc(state, u, path.curvature_at(state.s), params);
}

CurvilinearState step_rk4(const CurvilinearState& state, const Control& u, const ReferencePath& path,
                          const VehicleParams& params, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_rk4: dt must be > 0");
  auto f = [&](const Vec5& x) {
    const auto st = CurvilinearState::from5(x);
    return dynamics_bn(st, u, path.curvature_at(st.s), params);
  };
  const Vec5 x0 = state.head5();
  const Vec5 k1 = f(x0);
  const Vec5 k2 = f(x0 + 0.5 * dt * k1);
  const Vec5 k3 = f(x0 + 0.5 * dt * k2);
  const Vec5 k4 = f(x0 + dt * k3);
  const Vec5 x1 = x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  auto out = CurvilinearState::from5(x1, u.a, u.omega);
  if (path.closed()) out.s = path.wrap(out.s);
  return out;
}

CurvilinearState step_rk4_mpc(const CurvilinearState& state, const MpcControl& u,
                              const ReferencePath& path, const VehicleParams& params, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_rk4_mpc: dt must be > 0");
  auto f = [&](const Vec7& x) {
    const auto st = CurvilinearState::from7(x);
    return dynamics_mpc(st, u, path.curvature_at(st.s), params);
  };
  const Vec7 x0 = state.full7();
  const Vec7 k1 = f(x0);
  const Vec7 k2 = f(x0 + 0.5 * dt * k1);
  const Vec7 k3 = f(x0 + 0.5 * dt * k2);
  const Vec7 k4 = f(x0 + dt * k3);
  auto out = CurvilinearState::from7(x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  if (path.closed()) out.s = path.wrap(out.s);
  return out;
}

Pose2 global_pose(const ReferencePath& path, const CurvilinearState& state) {
  const Pose2 p = path.point_at(state.s);
  return {p.x - state.d * std::sin(p.theta), p.y + state.d * std::cos(p.theta), p.theta + state.mu};
}

}  // namespace bnet
