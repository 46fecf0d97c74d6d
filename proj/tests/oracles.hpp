#pragma once

// Independent reference implementations used only by the tests.

#include "bnet/barriernet.hpp"
#include "bnet/diffqp.hpp"
#include "bnet/dynamics.hpp"
#include "bnet/scenario.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace oracle {

/// Exact QP minimizer by enumerating active sets of size <= n. Returns false
/// when no feasible candidate exists.
inline bool qp_enumerate(const bnet::QPProblem& p, Eigen::VectorXd& best_u, double& best_obj) {
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  p.assembled(G, h);
  const int n = p.num_vars(), m = static_cast<int>(G.rows());
  best_obj = std::numeric_limits<double>::infinity();
  bool found = false;
  std::vector<int> idx;
  std::function<void(int)> rec = [&](int start) {
    const int k = static_cast<int>(idx.size());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    K.topLeftCorner(n, n) = p.H;
    rhs.head(n) = -p.F;
    for (int i = 0; i < k; ++i) {
      K.block(0, n + i, n, 1) = G.row(idx[i]).transpose();
      K.block(n + i, 0, 1, n) = G.row(idx[i]);
      rhs(n + i) = h(idx[i]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (lu.isInvertible()) {
      const Eigen::VectorXd sol = lu.solve(rhs);
      const Eigen::VectorXd u = sol.head(n);
      const bool primal = ((G * u - h).array() <= 1e-9).all();
      const bool dual = k == 0 || (sol.tail(k).array() >= -1e-9).all();
      if (primal && dual) {
        const double obj = 0.5 * u.dot(p.H * u) + p.F.dot(u);
        if (obj < best_obj) {
          best_obj = obj;
          best_u = u;
          found = true;
        }
      }
    }
    if (k == n) return;
    for (int i = start; i < m; ++i) {
      idx.push_back(i);
      rec(i + 1);
      idx.pop_back();
    }
  };
  rec(0);
  return found;
}

/// Explicit Euler with `substeps` substeps, control held constant.
inline bnet::CurvilinearState euler_fine(bnet::CurvilinearState x, const bnet::Control& u,
                                         const bnet::ReferencePath& path, const bnet::VehicleParams& vp, double dt,
                                         int substeps) {
  const double h = dt / substeps;
  for (int i = 0; i < substeps; ++i) {
    const bnet::Vec5 f = bnet::dynamics_bn(x, u, path.curvature_at(x.s), vp);
    x.s += h * f(0);
    x.d += h * f(1);
    x.mu += h * f(2);
    x.v += h * f(3);
    x.delta += h * f(4);
  }
  return x;
}

inline std::vector<Eigen::Vector2d> rect_corners(const bnet::Pose2& p, double len, double wid) {
  const Eigen::Vector2d c(p.x, p.y), ax(std::cos(p.theta), std::sin(p.theta)), ay(-std::sin(p.theta), std::cos(p.theta));
  return {c + 0.5 * len * ax + 0.5 * wid * ay, c - 0.5 * len * ax + 0.5 * wid * ay, c - 0.5 * len * ax - 0.5 * wid * ay,
          c + 0.5 * len * ax - 0.5 * wid * ay};
}

inline bool inside_rect(const Eigen::Vector2d& q, const bnet::Pose2& p, double len, double wid) {
  const Eigen::Vector2d r(q.x() - p.x, q.y() - p.y);
  const double lx = r.x() * std::cos(p.theta) + r.y() * std::sin(p.theta);
  const double ly = -r.x() * std::sin(p.theta) + r.y() * std::cos(p.theta);
  return std::abs(lx) <= 0.5 * len && std::abs(ly) <= 0.5 * wid;
}

/// Rectangle distance by dense boundary sampling: `n` points per edge of one
/// rectangle against exact point-to-edge distances of the other, both ways.
inline double rect_distance_sampled(const bnet::Pose2& a, double al, double aw, const bnet::Pose2& b, double bl,
                                    double bw, int n = 10000) {
  const auto ca = rect_corners(a, al, aw), cb = rect_corners(b, bl, bw);
  auto seg = [](const Eigen::Vector2d& q, const Eigen::Vector2d& s0, const Eigen::Vector2d& s1) {
    const Eigen::Vector2d d = s1 - s0;
    const double t = std::clamp((q - s0).dot(d) / d.squaredNorm(), 0.0, 1.0);
    return (s0 + t * d - q).norm();
  };
  double best = std::numeric_limits<double>::infinity();
  bool overlap = false;
  auto sweep = [&](const std::vector<Eigen::Vector2d>& c, const std::vector<Eigen::Vector2d>& other,
                   const bnet::Pose2& op, double ol, double ow) {
    for (int e = 0; e < 4; ++e) {
      for (int i = 0; i <= n; ++i) {
        const Eigen::Vector2d q = c[e] + (c[(e + 1) % 4] - c[e]) * (static_cast<double>(i) / n);
        if (inside_rect(q, op, ol, ow)) overlap = true;
        for (int f = 0; f < 4; ++f) best = std::min(best, seg(q, other[f], other[(f + 1) % 4]));
      }
    }
  };
  sweep(ca, cb, b, bl, bw);
  sweep(cb, ca, a, al, aw);
  return overlap ? 0.0 : best;
}

/// Cross-entropy method minimizer with a diagonal Gaussian.
inline double cem_minimize(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd mean,
                           Eigen::VectorXd sigma, int samples, int iterations, int elites, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  double best = f(mean);
  std::vector<std::pair<double, Eigen::VectorXd>> pop(samples);
  for (int it = 0; it < iterations; ++it) {
    for (auto& p : pop) {
      p.second = mean + sigma.cwiseProduct(Eigen::VectorXd::NullaryExpr(mean.size(), [&] { return N(rng); }));
      p.first = f(p.second);
    }
    std::partial_sort(pop.begin(), pop.begin() + elites, pop.end(),
                      [](const auto& x, const auto& y) { return x.first < y.first; });
    best = std::min(best, pop[0].first);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(mean.size()), v = Eigen::VectorXd::Zero(mean.size());
    for (int e = 0; e < elites; ++e) m += pop[e].second;
    m /= elites;
    for (int e = 0; e < elites; ++e) v += (pop[e].second - m).cwiseAbs2();
    mean = m;
    sigma = (v / elites).cwiseSqrt().cwiseMax(1e-4);
  }
  return std::min(best, f(mean));
}

/// Label admissibility rebuilt from a dataset row alone: ego from the state
/// labels, curvature from obs(4), slot 0 re-covered from the (ds, dobs)
/// labels, further present slots from the observation, parked disks after.
/// Returns an empty string when bounds, b > 0 and HOCBF slack >= 0 all hold.
inline std::string recheck_sample(const bnet::TrainingSample& s, const bnet::PolicyConfig& pc, double obs_length,
                                  double obs_width) {
  using namespace bnet;
  const auto& vp = pc.vehicle;
  const double a = s.labels[kLabelA], w = s.labels[kLabelOmega];
  if (!(a >= vp.a_bounds.min && a <= vp.a_bounds.max && w >= vp.omega_bounds.min && w <= vp.omega_bounds.max)) {
    return "bounds";
  }
  CurvilinearState x;
  x.d = s.labels[kLabelD];
  x.mu = s.labels[kLabelMu];
  x.v = s.labels[kLabelV];
  x.delta = s.labels[kLabelDelta];
  std::vector<ObstacleDisk> disks;
  for (int k = 0; k < pc.obs.slots; ++k) {
    const int off = pc.obs.slot_offset(k);
    if (s.obs(off + 3) < 0.5) break;
    Footprint fp{s.obs(off), s.obs(off + 1), obs_length, obs_width};
    if (k == 0) {
      if (!s.valid(kLabelDs) || !s.valid(kLabelDobs)) return "slot 0 present without labels";
      fp.s = s.labels[kLabelDs];
      fp.d = s.labels[kLabelDobs];
    }
    ObstacleDisk disk = cover_obstacle(fp, pc.lane_half_width, pc.cover);
    disk.slot = k;
    if (std::abs(disk.r_D - s.obs(off + 2)) > 1e-9) return "radius mismatch";
    disks.push_back(disk);
  }
  for (const auto& p : parked_disks(0.0, pc.lane_half_width, static_cast<int>(disks.size()), pc.slot)) {
    disks.push_back(p);
  }
  const auto specs = make_barrier_specs(disks, pc.barrier, pc.slot);
  const Eigen::Vector2d u(a, w);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!(barrier_value(specs[i], x) > 0.0)) return "barrier " + std::to_string(i);
    const auto t = hocbf_terms(specs[i], x, Penalties{}, s.obs(4), vp);
    if (!(t.row.slack(u) >= 0.0)) return "slack " + std::to_string(i);
  }
  return {};
}

}  // namespace oracle
