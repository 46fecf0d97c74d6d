#include "bnet/lie_oracle.hpp"

#include <stdexcept>

namespace bnet {

namespace {

struct Flow {
  const BarrierSpec& spec;
  CurvilinearState x0;
  double kappa;
  const VehicleParams& params;
  Control u;

  double b_at(double t) const {
    if (t == 0.0) return barrier_value(spec, x0);
    auto f = [&](const Vec5& x) { return dynamics_bn(CurvilinearState::from5(x), u, kappa, params); };
    const Vec5 y = x0.head5();
    const Vec5 k1 = f(y);
    const Vec5 k2 = f(y + 0.5 * t * k1);
    const Vec5 k3 = f(y + 0.5 * t * k2);
    const Vec5 k4 = f(y + t * k3);
    return barrier_value(spec, CurvilinearState::from5(y + t / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)));
  }

  double first(double h) const { return (b_at(h) - b_at(-h)) / (2.0 * h); }
  double second(double h) const { return (b_at(h) - 2.0 * b_at(0.0) + b_at(-h)) / (h * h); }
};

template <typename Stencil>
double richardson(Stencil&& d, double h) {
  const double d1 = d(h), d2 = d(h / 2.0), d4 = d(h / 4.0);
  const double r1 = (4.0 * d2 - d1) / 3.0;
  const double r2 = (4.0 * d4 - d2) / 3.0;
  return (16.0 * r2 - r1) / 15.0;
}

}  // namespace

LieDerivatives numeric_lie_oracle(const BarrierSpec& spec, const CurvilinearState& state,
                                  const ReferencePath& path, const VehicleParams& params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("numeric_lie_oracle: eps must be > 0");
  const double kappa = path.curvature_at(state.s);
  auto second_with = [&](Control u) {
    Flow fl{spec, state, kappa, params, u};
    return richardson([&](double h) { return fl.second(h); }, eps);
  };
  Flow drift{spec, state, kappa, params, {}};
  LieDerivatives out;
  out.Lf_b = richardson([&](double h) { return drift.first(h); }, eps);
  out.Lf2_b = second_with({0.0, 0.0});
  // d^2/dt^2 b along f + g u is affine in u: Lf^2 b + LgLf b . u.
  out.LgLf_b(0) = second_with({1.0, 0.0}) - out.Lf2_b;
  out.LgLf_b(1) = second_with({0.0, 1.0}) - out.Lf2_b;
  return out;
}

}  // namespace bnet
