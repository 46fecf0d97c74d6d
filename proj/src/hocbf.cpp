#include "bnet/hocbf.hpp"

#include <cmath>
#include <stdexcept>

namespace bnet {

double ClassK::operator()(double x) const {
  if (kind == Kind::Linear) return gain * x;
  const double m = gain * std::pow(std::abs(x), power);
  return x < 0.0 ? -m : m;
}

double ClassK::derivative(double x) const {
  if (kind == Kind::Linear) return gain;
  if (power == 1.0) return gain;
  return gain * power * std::pow(std::abs(x), power - 1.0);
}

void ClassK::validate() const {
  if (!(gain > 0.0)) throw std::invalid_argument("ClassK: gain must be > 0");
  if (kind == Kind::Power && !(power > 0.0)) throw std::invalid_argument("ClassK: power must be > 0");
}

BarrierSpec BarrierSpec::lane_left(double d_lf) {
  BarrierSpec s;
  s.kind = BarrierKind::LaneLeft;
  s.d_lf = d_lf;
  return s;
}

BarrierSpec BarrierSpec::lane_right(double d_lf) {
  BarrierSpec s;
  s.kind = BarrierKind::LaneRight;
  s.d_lf = d_lf;
  return s;
}

BarrierSpec BarrierSpec::obstacle(double s_obs, double d_obs, double r_D) {
  BarrierSpec s;
  s.kind = BarrierKind::ObstacleDisk;
  s.s_obs = s_obs;
  s.d_obs = d_obs;
  s.r_D = r_D;
  return s;
}

void BarrierSpec::validate() const {
  if (rel_degree != 2) throw std::invalid_argument("BarrierSpec: only relative degree 2 is supported");
  switch (kind) {
    case BarrierKind::LaneLeft:
    case BarrierKind::LaneRight:
      if (!(d_lf > 0.0)) throw std::invalid_argument("BarrierSpec: lane bound d_lf must be > 0");
      break;
    case BarrierKind::ObstacleDisk:
      if (!(r_D > 0.0)) throw std::invalid_argument("BarrierSpec: disk radius must be > 0");
      break;
    default:
      throw std::invalid_argument("BarrierSpec: unknown kind");
  }
  alpha1.validate();
  alpha2.validate();
}

namespace {

// Every barrier here depends on (s, d) only. Its first and second partials
// are all the Lie-derivative formulas need.
struct PlanarPartials {
  double b = 0.0;
  double bs = 0.0, bd = 0.0;
  double bss = 0.0, bsd = 0.0, bdd = 0.0;
};

PlanarPartials partials(const BarrierSpec& spec, const CurvilinearState& x) {
  PlanarPartials p;
  switch (spec.kind) {
    case BarrierKind::LaneLeft:
      p.b = spec.d_lf - x.d;
      p.bd = -1.0;
      break;
    case BarrierKind::LaneRight:
      p.b = spec.d_lf + x.d;
      p.bd = 1.0;
      break;
    case BarrierKind::ObstacleDisk: {
      const double ds = spec.s_obs - x.s;
      const double e = x.d - spec.d_obs;
      p.b = ds * ds + e * e - spec.r_D * spec.r_D;
      p.bs = -2.0 * ds;
      p.bd = 2.0 * e;
      p.bss = 2.0;
      p.bdd = 2.0;
      break;
    }
    default:
      throw std::invalid_argument("barrier: unknown kind");
  }
  return p;
}

}  // namespace

double barrier_value(const BarrierSpec& spec, const CurvilinearState& state) {
  return partials(spec, state).b;
}

// With c = cos(mu + beta), sn = sin(mu + beta), D = 1 - d*kappa and kappa
// locally constant, the drift is
//   s' = v c / D,   d' = v sn,   mu' = (v / l_r) sin(beta) - kappa s'
// and v' = delta' = 0. Controls act on v (a) and delta (omega).
//
//   Lf b   = b_s s' + b_d d'
//   Lf^2 b = [b_ss s' + b_sd d'] s'
//          + [b_sd s' + b_dd d' + b_s v c kappa / D^2] d'
//          + [-b_s v sn / D + b_d v c] mu'
//   LgLf b = ( d(Lf b)/dv, d(Lf b)/ddelta )
//          = ( b_s c / D + b_d sn,  beta'(delta) * [-b_s v sn / D + b_d v c] )
// The delta column reuses the mu partial because s' and d' depend on delta
// only through mu + beta(delta); mu' has no influence on Lf b.
LieDerivatives lie_derivatives(const BarrierSpec& spec, const CurvilinearState& x, double kappa,
                               const VehicleParams& params) {
  const double D = 1.0 - x.d * kappa;
  if (!(D > 0.0)) throw SingularityError("lie_derivatives: 1 - d*kappa <= 0", x);
  const PlanarPartials p = partials(spec, x);
  const double beta = slip_angle(x.delta, params);
  const double dbeta = slip_angle_derivative(x.delta, params);
  const double c = std::cos(x.mu + beta);
  const double sn = std::sin(x.mu + beta);
  const double s_dot = x.v * c / D;
  const double d_dot = x.v * sn;
  const double mu_dot = x.v / params.l_r * std::sin(beta) - kappa * s_dot;

  const double dLf_ds = p.bss * s_dot + p.bsd * d_dot;
  const double dLf_dd = p.bsd * s_dot + p.bdd * d_dot + p.bs * x.v * c * kappa / (D * D);
  const double dLf_dmu = -p.bs * x.v * sn / D + p.bd * x.v * c;

  LieDerivatives out;
  out.Lf_b = p.bs * s_dot + p.bd * d_dot;
  out.Lf2_b = dLf_ds * s_dot + dLf_dd * d_dot + dLf_dmu * mu_dot;
  out.LgLf_b = {p.bs * c / D + p.bd * sn, dbeta * dLf_dmu};
  return out;
}

LieDerivatives lie_derivatives(const BarrierSpec& spec, const CurvilinearState& state,
                               const ReferencePath& path, const VehicleParams& params) {
  return lie_derivatives(spec, state, path.curvature_at(state.s), params);
}

// psi1 = Lf b + p1 a1(b). With p1 held constant over the step,
//   psi1' = Lf^2 b + LgLf b . u + p1 a1'(b) Lf b
// and the constraint is psi1' + p2 a2(psi1) >= 0.
HocbfTerms hocbf_terms(const BarrierSpec& spec, const CurvilinearState& state, const Penalties& pen,
                       double kappa, const VehicleParams& params) {
  HocbfTerms t;
  t.lie = lie_derivatives(spec, state, kappa, params);
  t.b = barrier_value(spec, state);
  const double a1 = spec.alpha1(t.b);
  const double a1p = spec.alpha1.derivative(t.b);
  t.psi1 = t.lie.Lf_b + pen.p1 * a1;
  t.row.coeff = t.lie.LgLf_b;
  t.row.constant = t.lie.Lf2_b + pen.p1 * a1p * t.lie.Lf_b + pen.p2 * spec.alpha2(t.psi1);
  t.dconst_dp2 = spec.alpha2(t.psi1);
  t.dconst_dp1 = a1p * t.lie.Lf_b + pen.p2 * spec.alpha2.derivative(t.psi1) * a1;
  return t;
}

double psi1(const BarrierSpec& spec, const CurvilinearState& state, const Penalties& penalties,
            const ReferencePath& path, const VehicleParams& params) {
  const auto lie = lie_derivatives(spec, state, path, params);
  return lie.Lf_b + penalties.p1 * spec.alpha1(barrier_value(spec, state));
}

LinearControlConstraint hocbf_constraint(const BarrierSpec& spec, const CurvilinearState& state,
                                         const Penalties& penalties, const ReferencePath& path,
                                         const VehicleParams& params) {
  if (!(penalties.p1 > 0.0) || !(penalties.p2 > 0.0)) {
    throw std::invalid_argument("hocbf_constraint: penalties must be > 0");
  }
  return hocbf_terms(spec, state, penalties, path.curvature_at(state.s), params).row;
}

LinearControlConstraint cbf_constraint_m1(double b, double Lf_b, const Eigen::VectorXd& Lg_b,
                                          const ClassK& alpha) {
  return {Lg_b, Lf_b + alpha(b)};
}

}  // namespace bnet
