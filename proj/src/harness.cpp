#include "bnet/harness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace bnet {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Policies

PolicyStep BarrierNetPolicy::act(const StepInput& in) {
  return net_->act(*in.obs, *in.exact, in.previous, mode_);
}

TrackingPolicy::TrackingPolicy(double target_speed, VehicleParams vehicle, Gains gains)
    : target_(target_speed), vp_(vehicle), k_(gains) {}

PolicyStep TrackingPolicy::act(const StepInput& in) {
  const auto& x = *in.state;
  PolicyStep ps;
  ps.control.a = vp_.a_bounds.clamp(k_.speed * (target_ - x.v));
  ps.control.omega = vp_.omega_bounds.clamp(-(k_.d * x.d + k_.mu * x.mu + k_.delta * x.delta));
  return ps;
}

PolicyStep ConstantPolicy::act(const StepInput&) {
  PolicyStep ps;
  ps.control = u_;
  return ps;
}

PolicyStep NominalPolicy::act(const StepInput& in) {
  const auto res = nmpc_solve(*in.state, *in.path, *in.obstacles, cfg_, safety_, warm_.size() ? &warm_ : nullptr);
  const int n = static_cast<int>(res.controls.size());
  warm_.resize(n);
  warm_.head(n - 2) = res.controls.tail(n - 2);
  warm_.tail(2) = res.controls.tail(2);
  PolicyStep ps;
  ps.control = {safety_.vehicle.a_bounds.clamp(res.label.a), safety_.vehicle.omega_bounds.clamp(res.label.omega)};
  return ps;
}

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Crash: return "crash";
    case EventKind::OffLane: return "off_lane";
    case EventKind::QpInfeasible: return "qp_infeasible";
    case EventKind::Completed: return "completed";
  }
  return "?";
}

void RolloutConfig::validate() const {
  if (max_steps < 1) throw std::invalid_argument("RolloutConfig: max_steps must be >= 1");
  if (!(ego_length > 0.0) || !(ego_width > 0.0)) throw std::invalid_argument("RolloutConfig: ego dims must be > 0");
  if (!(off_lane > 0.0)) throw std::invalid_argument("RolloutConfig: off_lane must be > 0");
  if (obs.slots != slot.slots) throw std::invalid_argument("RolloutConfig: slot counts differ");
  vehicle.validate();
}

bool RolloutResult::crashed() const {
  const Event* t = terminal();
  return t != nullptr && (t->kind == EventKind::Crash || t->kind == EventKind::OffLane);
}

const Event* RolloutResult::terminal() const {
  for (const auto& e : events) {
    if (e.kind != EventKind::QpInfeasible) return &e;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Geometry

namespace {

using Corners = std::array<Eigen::Vector2d, 4>;

Corners corners(const Pose2& p, double length, double width) {
  const Eigen::Vector2d c(p.x, p.y);
  const Eigen::Vector2d ax(std::cos(p.theta), std::sin(p.theta));
  const Eigen::Vector2d ay(-ax.y(), ax.x());
  const double hl = 0.5 * length, hw = 0.5 * width;
  return {c + hl * ax + hw * ay, c - hl * ax + hw * ay, c - hl * ax - hw * ay, c + hl * ax - hw * ay};
}

bool separated_on(const Corners& a, const Corners& b, const Eigen::Vector2d& axis) {
  double amin = std::numeric_limits<double>::infinity(), amax = -amin, bmin = amin, bmax = -amin;
  for (const auto& p : a) {
    amin = std::min(amin, p.dot(axis));
    amax = std::max(amax, p.dot(axis));
  }
  for (const auto& p : b) {
    bmin = std::min(bmin, p.dot(axis));
    bmax = std::max(bmax, p.dot(axis));
  }
  return amax < bmin || bmax < amin;
}

double point_segment(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (a + t * ab - p).norm();
}

}  // namespace

double clearance(const Pose2& pa, double a_length, double a_width, const Pose2& pb, double b_length, double b_width) {
  const Corners a = corners(pa, a_length, a_width);
  const Corners b = corners(pb, b_length, b_width);
  bool separated = false;
  for (const Corners* poly : {&a, &b}) {
    for (int i = 0; i < 2 && !separated; ++i) {
      const Eigen::Vector2d edge = (*poly)[(i + 1) % 4] - (*poly)[i];
      separated = separated_on(a, b, Eigen::Vector2d(-edge.y(), edge.x()));
    }
  }
  if (!separated) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      best = std::min(best, point_segment(a[i], b[j], b[(j + 1) % 4]));
      best = std::min(best, point_segment(b[i], a[j], a[(j + 1) % 4]));
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Rollout

RolloutResult rollout(Policy& policy, const Scenario& sc, const RolloutConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  sc.validate();
  std::mt19937_64 rng(seed);
  policy.reset();

  RolloutResult r;
  r.has_obstacles = !sc.obstacles.empty();
  r.min_clearance = std::numeric_limits<double>::infinity();
  CurvilinearState x = sc.ego_init;
  x.a = 0.0;
  x.omega = 0.0;
  Control prev{};
  const auto& vp = cfg.vehicle;

  for (int step = 0;; ++step) {
    const Pose2 ego_pose = global_pose(sc.path, x);
    double clr = std::numeric_limits<double>::infinity();
    for (const auto& o : sc.obstacles) {
      const CurvilinearState oc{o.s, o.d, 0.0, 0.0, 0.0, 0.0, 0.0};
      const Pose2 op = global_pose(sc.path, sc.path.closed() ? oc : CurvilinearState{std::clamp(o.s, 0.0, sc.path.length()), o.d});
      clr = std::min(clr, clearance(ego_pose, cfg.ego_length, cfg.ego_width, op, o.length, o.width));
    }
    r.states.push_back(x);
    r.clearance.push_back(clr);
    r.min_clearance = std::min(r.min_clearance, clr);

    if (std::abs(x.d) > cfg.off_lane) {
      r.events.push_back({EventKind::OffLane, step, "|d| exceeds lane limit"});
      break;
    }
    if (clr <= 0.0) {
      r.events.push_back({EventKind::Crash, step, "footprints overlap"});
      break;
    }
    if (step >= cfg.max_steps || (!sc.path.closed() && x.s + x.v * vp.dt + 1.0 > sc.path.length())) {
      r.events.push_back({EventKind::Completed, step, ""});
      break;
    }

    const auto ranked = rank_obstacles(x, sc.obstacles, sc.path, cfg.slot, cfg.cover);
    const Eigen::VectorXd obs = build_observation(x, sc.path, ranked, cfg.obs, cfg.noise, &rng).z;
    ConstraintContext exact;
    exact.ego = x;
    exact.kappa = sc.path.curvature_at(x.s);
    exact.disks = sort_and_slot(x, sc.obstacles, sc.path, cfg.slot, cfg.cover);

    StepInput in;
    in.state = &x;
    in.path = &sc.path;
    in.obstacles = &sc.obstacles;
    in.obs = &obs;
    in.exact = &exact;
    in.previous = prev;
    const PolicyStep ps = policy.act(in);

    const auto specs = make_barrier_specs(exact.disks, cfg.barrier, cfg.slot);
    std::vector<double> bs, ps1;
    std::vector<Penalties> pens;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const Penalties pen = i < ps.heads.penalties.size() ? ps.heads.penalties[i] : Penalties{};
      const auto t = hocbf_terms(specs[i], x, pen, exact.kappa, vp);
      bs.push_back(t.b);
      ps1.push_back(t.psi1);
      pens.push_back(pen);
    }
    r.barriers.push_back(std::move(bs));
    r.psi1.push_back(std::move(ps1));
    r.penalties.push_back(std::move(pens));
    r.controls.push_back(ps.control);
    if (ps.fallback) {
      r.events.push_back({EventKind::QpInfeasible, step, ps.held ? "previous control held" : "control bounds dropped"});
    }

    try {
      x = step_rk4(x, ps.control, sc.path, vp, vp.dt);
    } catch (const SingularityError& e) {
      r.events.push_back({EventKind::Crash, step, std::string("singularity: ") + e.what()});
      break;
    } catch (const std::domain_error& e) {
      r.events.push_back({EventKind::Crash, step, std::string("invalid state: ") + e.what()});
      break;
    }
    prev = ps.control;
  }
  if (!r.has_obstacles) r.min_clearance = std::numeric_limits<double>::infinity();
  return r;
}

// ---------------------------------------------------------------------------
// Metrics

Metrics aggregate(const std::vector<RolloutResult>& rollouts, const std::vector<double>& thresholds) {
  Metrics m;
  m.episodes = static_cast<int>(rollouts.size());
  m.thresholds = thresholds;
  std::vector<long> over(thresholds.size(), 0);
  double clr_sum = 0.0;
  int clr_n = 0;
  m.min_clearance = std::numeric_limits<double>::infinity();
  for (const auto& r : rollouts) {
    const Event* t = r.terminal();
    if (t && t->kind == EventKind::Crash) ++m.collisions;
    if (t && t->kind == EventKind::OffLane) ++m.off_lane;
    if (r.crashed()) ++m.crashes;
    for (const auto& e : r.events) {
      if (e.kind == EventKind::QpInfeasible) ++m.qp_infeasible;
    }
    if (r.has_obstacles) {
      const double c = std::max(0.0, r.min_clearance);
      clr_sum += c;
      ++clr_n;
      m.min_clearance = std::min(m.min_clearance, c);
    }
    for (const auto& x : r.states) {
      ++m.steps;
      for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (std::abs(x.d) > thresholds[i]) ++over[i];
      }
    }
  }
  m.crash_rate = m.episodes ? static_cast<double>(m.crashes) / m.episodes : 0.0;
  m.mean_min_clearance = clr_n ? clr_sum / clr_n : std::numeric_limits<double>::quiet_NaN();
  if (clr_n == 0) m.min_clearance = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    m.exceedance.push_back(m.steps ? static_cast<double>(over[i]) / static_cast<double>(m.steps) : 0.0);
  }
  return m;
}

namespace {

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 20; ++i) t.push_back(0.1 * i);
  return t;
}

}  // namespace

EvalResult evaluate(Policy& policy, const ScenarioDistribution& dist, int episodes, std::uint64_t seed,
                    const RolloutConfig& cfg, bool keep_rollouts) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  std::vector<RolloutResult> all;
  all.reserve(episodes);
  for (int i = 0; i < episodes; ++i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Scenario sc = dist.sample(rng);
    all.push_back(rollout(policy, sc, cfg, derive_seed(seed, static_cast<std::uint64_t>(i), 1)));
  }
  EvalResult res;
  res.metrics = aggregate(all, default_thresholds());
  if (keep_rollouts) res.rollouts = std::move(all);
  return res;
}

std::vector<SweepRow> noise_sweep(Policy& policy, const ScenarioDistribution& dist, NoiseChannel channel,
                                  const std::vector<double>& sigmas, int episodes, std::uint64_t seed,
                                  const RolloutConfig& cfg) {
  std::vector<SweepRow> rows;
  for (double sigma : sigmas) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("noise_sweep: sigma must be >= 0");
    RolloutConfig c = cfg;
    c.noise[channel] = sigma;
    const auto m = evaluate(policy, dist, episodes, seed, c).metrics;
    rows.push_back({sigma, m.crash_rate, m.episodes});
  }
  return rows;
}

double two_proportion_p(int c1, int n1, int c2, int n2) {
  if (n1 < 1 || n2 < 1) throw std::invalid_argument("two_proportion_p: empty sample");
  const double p1 = static_cast<double>(c1) / n1, p2 = static_cast<double>(c2) / n2;
  const double p = static_cast<double>(c1 + c2) / (n1 + n2);
  const double se = std::sqrt(p * (1.0 - p) * (1.0 / n1 + 1.0 / n2));
  if (se == 0.0) return p2 > p1 ? 0.0 : 1.0;
  const double z = (p2 - p1) / se;
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

// ---------------------------------------------------------------------------
// Output

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void write_rollout_jsonl(std::ostream& os, const RolloutResult& r) {
  for (std::size_t k = 0; k < r.states.size(); ++k) {
    const auto& x = r.states[k];
    json j;
    j["schema_version"] = kOutputSchema;
    j["step"] = k;
    j["state"] = {{"s", x.s}, {"d", x.d}, {"mu", x.mu}, {"v", x.v}, {"delta", x.delta}};
    j["clearance"] = finite_or_null(r.clearance[k]);
    if (k < r.controls.size()) {
      j["control"] = {{"a", r.controls[k].a}, {"omega", r.controls[k].omega}};
      j["barriers"] = r.barriers[k];
      j["psi1"] = r.psi1[k];
      json pens = json::array();
      for (const auto& p : r.penalties[k]) pens.push_back({p.p1, p.p2});
      j["penalties"] = pens;
    } else {
      j["control"] = nullptr;
      j["barriers"] = nullptr;
      j["psi1"] = nullptr;
      j["penalties"] = nullptr;
    }
    json ev = json::array();
    for (const auto& e : r.events) {
      if (e.step == static_cast<int>(k)) ev.push_back({{"kind", to_string(e.kind)}, {"detail", e.detail}});
    }
    j["events"] = ev;
    os << j.dump() << '\n';
  }
}

void write_metrics_json(std::ostream& os, const Metrics& m, const std::string& policy_name) {
  json j;
  j["schema_version"] = kOutputSchema;
  j["policy"] = policy_name;
  j["episodes"] = m.episodes;
  j["crashes"] = m.crashes;
  j["collisions"] = m.collisions;
  j["off_lane"] = m.off_lane;
  j["qp_infeasible_events"] = m.qp_infeasible;
  j["crash_rate"] = m.crash_rate;
  j["mean_min_clearance"] = finite_or_null(m.mean_min_clearance);
  j["min_clearance"] = finite_or_null(m.min_clearance);
  j["deviation_exceedance"] = {{"thresholds", m.thresholds}, {"probability", m.exceedance}};
  j["steps"] = m.steps;
  os << j.dump(2) << '\n';
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "sigma,crash_rate,n\n";
  for (const auto& r : rows) os << r.sigma << ',' << r.crash_rate << ',' << r.n << '\n';
}

}  // namespace bnet
