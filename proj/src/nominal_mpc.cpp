#include "bnet/nominal_mpc.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace bnet {

void MPCConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("MPCConfig: horizon must be >= 1");
  if (!(dt > 0.0)) throw std::invalid_argument("MPCConfig: dt must be > 0");
  for (double w : {w_lateral, w_heading, w_speed, w_jerk, w_steer, w_accel, w_omega, w_barrier, w_hocbf, w_bounds}) {
    if (!(w >= 0.0)) throw std::invalid_argument("MPCConfig: weights must be >= 0");
  }
  if (!(margin > 0.0)) throw std::invalid_argument("MPCConfig: margin must be > 0");
  if (!(hocbf_margin >= 0.0)) throw std::invalid_argument("MPCConfig: hocbf_margin must be >= 0");
  if (!(target_speed >= 0.0)) throw std::invalid_argument("MPCConfig: target_speed must be >= 0");
  if (max_iter < 0 || rescue_iter < 0 || !(grad_tol > 0.0) || !(fd_step > 0.0)) {
    throw std::invalid_argument("MPCConfig: bad solver settings");
  }
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

namespace {

constexpr double kHuge = 1e12;

double hinge2(double x) { return x > 0.0 ? x * x : 0.0; }

double clearance_m(const BarrierSpec& spec, const CurvilinearState& x) {
  switch (spec.kind) {
    case BarrierKind::LaneLeft: return spec.d_lf - x.d;
    case BarrierKind::LaneRight: return spec.d_lf + x.d;
    case BarrierKind::ObstacleDisk: return std::hypot(spec.s_obs - x.s, x.d - spec.d_obs) - spec.r_D;
  }
  return 0.0;
}

// Single-shooting problem over (jerk, steer_acc) per step.
class Shooter {
 public:
  Shooter(const CurvilinearState& x0, const ReferencePath& path, const std::vector<Footprint>& obstacles,
          const MPCConfig& cfg, const SafetySetup& safety)
      : x0_(x0), path_(path), cfg_(cfg), safety_(safety), H_(cfg.horizon) {
    const auto disks = sort_and_slot(x0, obstacles, path, safety.slot, safety.cover);
    first_specs_ = make_barrier_specs(disks, safety.barrier, safety.slot);
    for (const auto& spec : first_specs_) {
      const bool parked = spec.kind == BarrierKind::ObstacleDisk &&
                          std::any_of(disks.begin(), disks.end(), [&](const ObstacleDisk& d) {
                            return d.parked && d.s_obs == spec.s_obs && d.d_obs == spec.d_obs;
                          });
      if (!parked) specs_.push_back(spec);
    }
    states_.resize(H_ + 1);
    prefix_.resize(H_ + 1);
  }

  int dim() const { return 2 * H_; }

  // Cost of stage j (1..H): state x_j reached from x_{j-1} with control U_{j-1}.
  double stage(int j, const CurvilinearState& prev, const CurvilinearState& x, double jerk, double steer) const {
    const auto& vp = safety_.vehicle;
    double c = cfg_.w_lateral * x.d * x.d + cfg_.w_heading * x.mu * x.mu +
               cfg_.w_speed * (x.v - cfg_.target_speed) * (x.v - cfg_.target_speed) + cfg_.w_jerk * jerk * jerk +
               cfg_.w_steer * steer * steer + cfg_.w_accel * x.a * x.a + cfg_.w_omega * x.omega * x.omega;
    double pen = 0.0;
    for (const auto& spec : specs_) pen += hinge2(cfg_.margin - clearance_m(spec, x));
    c += cfg_.w_barrier * pen;

    // HOCBF slack at the previous state under the control reached here.
    const Eigen::Vector2d u(x.a, x.omega);
    const double kappa = path_.curvature_at(prev.s);
    const auto& hs = j == 1 ? first_specs_ : specs_;
    double hp = 0.0;
    for (const auto& spec : hs) {
      const auto t = hocbf_terms(spec, prev, Penalties{}, kappa, vp);
      // Disk rows scale with the radius; bring them to lane-row units.
      const double scale = spec.kind == BarrierKind::ObstacleDisk ? 2.0 * spec.r_D : 1.0;
      hp += hinge2(cfg_.hocbf_margin - t.row.slack(u) / scale);
    }
    c += cfg_.w_hocbf * hp;

    double bp = hinge2(x.a - vp.a_bounds.max) + hinge2(vp.a_bounds.min - x.a) + hinge2(x.omega - vp.omega_bounds.max) +
                hinge2(vp.omega_bounds.min - x.omega) + hinge2(jerk - vp.jerk_bounds.max) +
                hinge2(vp.jerk_bounds.min - jerk) + hinge2(steer - vp.steer_acc_bounds.max) +
                hinge2(vp.steer_acc_bounds.min - steer);
    c += cfg_.w_bounds * bp;
    return c;
  }

  // Full rollout; fills the state/prefix caches.
  double evaluate(const Eigen::VectorXd& U) {
    states_[0] = x0_;
    prefix_[0] = 0.0;
    try {
      for (int j = 1; j <= H_; ++j) {
        const MpcControl u{U(2 * (j - 1)), U(2 * (j - 1) + 1)};
        states_[j] = step_rk4_mpc(states_[j - 1], u, path_, safety_.vehicle, cfg_.dt);
        prefix_[j] = prefix_[j - 1] + stage(j, states_[j - 1], states_[j], u.jerk, u.steer_acc);
        if (!std::isfinite(prefix_[j])) return kHuge;
      }
    } catch (const std::exception&) {
      return kHuge;
    }
    return prefix_[H_];
  }

  // Cost with U replaced at index i, reusing cached states before step i/2.
  double evaluate_from(const Eigen::VectorXd& U, int i) const {
    const int k = i / 2;
    double c = prefix_[k];
    CurvilinearState x = states_[k];
    try {
      for (int j = k + 1; j <= H_; ++j) {
        const MpcControl u{U(2 * (j - 1)), U(2 * (j - 1) + 1)};
        const CurvilinearState nx = step_rk4_mpc(x, u, path_, safety_.vehicle, cfg_.dt);
        c += stage(j, x, nx, u.jerk, u.steer_acc);
        x = nx;
      }
    } catch (const std::exception&) {
      return kHuge;
    }
    return std::isfinite(c) ? c : kHuge;
  }

  double value_and_gradient(const Eigen::VectorXd& U, Eigen::VectorXd& g) {
    const double f = evaluate(U);
    g.resize(dim());
    Eigen::VectorXd Up = U;
    const double h = cfg_.fd_step;
    for (int i = 0; i < dim(); ++i) {
      Up(i) = U(i) + h;
      const double fp = evaluate_from(Up, i);
      Up(i) = U(i) - h;
      const double fm = evaluate_from(Up, i);
      Up(i) = U(i);
      g(i) = (fp - fm) / (2.0 * h);
    }
    return f;
  }

  const std::vector<CurvilinearState>& states() const { return states_; }
  const std::vector<BarrierSpec>& horizon_specs() const { return specs_; }

 private:
  CurvilinearState x0_;
  const ReferencePath& path_;
  const MPCConfig& cfg_;
  const SafetySetup& safety_;
  int H_;
  std::vector<BarrierSpec> first_specs_;
  std::vector<BarrierSpec> specs_;
  std::vector<CurvilinearState> states_;
  std::vector<double> prefix_;
};

}  // namespace

MPCResult nmpc_solve(const CurvilinearState& state7, const ReferencePath& path, const std::vector<Footprint>& obstacles,
                     const MPCConfig& cfg, const SafetySetup& safety, const Eigen::VectorXd* warm_start) {
  cfg.validate();
  Shooter sh(state7, path, obstacles, cfg, safety);
  const int n = sh.dim();
  Eigen::VectorXd U = Eigen::VectorXd::Zero(n);
  if (warm_start != nullptr) {
    if (warm_start->size() != n) throw std::invalid_argument("nmpc_solve: warm start has wrong size");
    U = *warm_start;
  }

  Eigen::VectorXd g, g_new, U_new;
  double f = sh.value_and_gradient(U, g);
  if (warm_start != nullptr && !(f < kHuge)) {
    U.setZero();
    f = sh.value_and_gradient(U, g);
  }

  // BFGS with Armijo backtracking; returns iterations used.
  auto optimize = [&](int max_iter) {
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
    bool scaled = false;
    int it = 0;
    for (; it < max_iter; ++it) {
      if (g.cwiseAbs().maxCoeff() <= cfg.grad_tol) break;
      Eigen::VectorXd p = -(Hinv * g);
      double slope = g.dot(p);
      if (!(slope < 0.0)) {
        Hinv.setIdentity();
        p = -g;
        slope = -g.squaredNorm();
      }
      double alpha = 1.0;
      double f_new = f;
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls) {
        U_new = U + alpha * p;
        f_new = sh.evaluate(U_new);
        if (f_new <= f + 1e-4 * alpha * slope) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) break;
      f_new = sh.value_and_gradient(U_new, g_new);
      const Eigen::VectorXd s = U_new - U;
      const Eigen::VectorXd y = g_new - g;
      const double sy = s.dot(y);
      if (sy > 1e-12) {
        if (!scaled) {
          Hinv *= sy / y.squaredNorm();
          scaled = true;
        }
        const double rho = 1.0 / sy;
        const Eigen::VectorXd Hy = Hinv * y;
        Hinv += (rho * rho * y.dot(Hy) + rho) * (s * s.transpose()) - rho * (Hy * s.transpose() + s * Hy.transpose());
      }
      U = U_new;
      f = f_new;
      g = g_new;
    }
    return it;
  };

  auto finish = [&](MPCResult& res) {
    f = sh.evaluate(U);
    res.controls = U;
    res.predicted = sh.states();
    res.cost = f;
    res.grad_norm = g.cwiseAbs().maxCoeff();
    res.label = {res.predicted[1].a, res.predicted[1].omega};
    res.safe = false;
    res.reject_reason.clear();
    if (!(f < kHuge)) {
      res.reject_reason = "rollout failed";
      return;
    }
    for (std::size_t j = 0; j < res.predicted.size(); ++j) {
      for (const auto& spec : sh.horizon_specs()) {
        if (!(barrier_value(spec, res.predicted[j]) > 0.0)) {
          res.reject_reason = "horizon barrier violated at step " + std::to_string(j);
          return;
        }
      }
    }
    res.reject_reason = check_label(state7, res.label, path, obstacles, safety);
    res.safe = res.reject_reason.empty();
  };

  MPCResult res;
  res.iterations = optimize(cfg.max_iter);
  finish(res);
  if (!res.safe && cfg.rescue_iter > 0) {
    if (!(f < kHuge)) U.setZero();
    f = sh.value_and_gradient(U, g);
    res.iterations += optimize(cfg.rescue_iter);
    finish(res);
  }
  return res;
}

double nmpc_cost(const CurvilinearState& state7, const ReferencePath& path, const std::vector<Footprint>& obstacles,
                 const MPCConfig& cfg, const SafetySetup& safety, const Eigen::VectorXd& controls) {
  cfg.validate();
  Shooter sh(state7, path, obstacles, cfg, safety);
  if (controls.size() != sh.dim()) throw std::invalid_argument("nmpc_cost: wrong control vector size");
  return sh.evaluate(controls);
}

std::string check_label(const CurvilinearState& state, const Control& label, const ReferencePath& path,
                        const std::vector<Footprint>& obstacles, const SafetySetup& safety) {
  const auto& vp = safety.vehicle;
  if (!vp.a_bounds.contains(label.a) || !vp.omega_bounds.contains(label.omega)) return "label outside bounds";
  const auto disks = sort_and_slot(state, obstacles, path, safety.slot, safety.cover);
  const auto specs = make_barrier_specs(disks, safety.barrier, safety.slot);
  const double kappa = path.curvature_at(state.s);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!(barrier_value(specs[i], state) > 0.0)) return "barrier " + std::to_string(i) + " not positive";
    const auto t = hocbf_terms(specs[i], state, Penalties{}, kappa, vp);
    if (!(t.row.slack(label.vec()) >= 0.0)) return "hocbf slack negative on constraint " + std::to_string(i);
  }
  return {};
}

void DatasetSpec::validate() const {
  if (episodes < 0 || steps < 1) throw std::invalid_argument("DatasetSpec: episodes >= 0, steps >= 1");
  if (!(lane_fraction >= 0.0 && lane_fraction <= 1.0)) {
    throw std::invalid_argument("DatasetSpec: lane_fraction must be in [0, 1]");
  }
  if (!(max_reject_fraction >= 0.0 && max_reject_fraction <= 1.0)) {
    throw std::invalid_argument("DatasetSpec: max_reject_fraction must be in [0, 1]");
  }
  obstacle.validate();
  lane.validate();
  if (obstacle.slots != obs.slots || lane.slots != obs.slots) {
    throw std::invalid_argument("DatasetSpec: scenario and observation slot counts differ");
  }
}

namespace {

bool run_episode(const Scenario& sc, int episode, const DatasetSpec& spec, const MPCConfig& cfg,
                 const SafetySetup& safety, std::mt19937_64& rng, std::vector<TrainingSample>& out) {
  CurvilinearState x = sc.ego_init;
  x.a = 0.0;
  x.omega = 0.0;
  Eigen::VectorXd warm;
  bool have_warm = false;
  for (int step = 0; step < spec.steps; ++step) {
    if (!sc.path.closed() && x.s + 40.0 > sc.path.length()) break;
    const MPCResult res = nmpc_solve(x, sc.path, sc.obstacles, cfg, safety, have_warm ? &warm : nullptr);
    if (!res.safe) return false;

    const auto ranked = rank_obstacles(x, sc.obstacles, sc.path, safety.slot, safety.cover);
    TrainingSample s;
    s.episode = episode;
    s.step = step;
    s.obs = build_observation(x, sc.path, ranked, spec.obs, spec.noise, &rng).z;
    s.labels[kLabelV] = x.v;
    s.labels[kLabelDelta] = x.delta;
    s.labels[kLabelD] = x.d;
    s.labels[kLabelMu] = x.mu;
    s.labels[kLabelA] = res.label.a;
    s.labels[kLabelOmega] = res.label.omega;
    if (!ranked.empty()) {
      s.labels[kLabelDs] = ranked[0].footprint.s - x.s;
      s.labels[kLabelDobs] = ranked[0].footprint.d;
    } else {
      s.mask &= ~((1u << kLabelDs) | (1u << kLabelDobs));
    }
    out.push_back(std::move(s));

    x = step_rk4_mpc(x, {res.controls(0), res.controls(1)}, sc.path, safety.vehicle, cfg.dt);
    warm.resize(res.controls.size());
    const int n = static_cast<int>(res.controls.size());
    warm.head(n - 2) = res.controls.tail(n - 2);
    warm.tail(2) = res.controls.tail(2);
    have_warm = true;
  }
  return true;
}

}  // namespace

std::vector<TrainingSample> generate_dataset(const DatasetSpec& spec, const MPCConfig& cfg, const SafetySetup& safety,
                                             DatasetStats* stats) {
  spec.validate();
  cfg.validate();
  if (spec.obs.slots != safety.slot.slots) throw std::invalid_argument("generate_dataset: slot count mismatch");
  std::vector<TrainingSample> data;
  DatasetStats st;
  for (int ep = 0; ep < spec.episodes; ++ep) {
    for (int attempt = 0;; ++attempt) {
      std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(ep), static_cast<std::uint64_t>(attempt)));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const bool lane = unit(rng) < spec.lane_fraction;
      const Scenario sc = (lane ? spec.lane : spec.obstacle).sample(rng);
      std::vector<TrainingSample> episode;
      ++st.attempts;
      if (run_episode(sc, ep, spec, cfg, safety, rng, episode)) {
        data.insert(data.end(), std::make_move_iterator(episode.begin()), std::make_move_iterator(episode.end()));
        break;
      }
      ++st.rejected;
      if (st.attempts >= 10 && st.rejected > spec.max_reject_fraction * st.attempts) {
        std::ostringstream os;
        os << "generate_dataset: rejection rate " << st.rejected << "/" << st.attempts
           << " exceeds limit; the scenario ranges are likely infeasible for the expert";
        throw std::runtime_error(os.str());
      }
    }
  }
  st.samples = static_cast<int>(data.size());
  if (stats) *stats = st;
  return data;
}

void write_dataset_csv(std::ostream& os, const std::vector<TrainingSample>& data, int obs_dim) {
  os << "episode,step";
  for (int i = 0; i < obs_dim; ++i) os << ",obs_" << i;
  for (const char* name : kLabelNames) os << ",label_" << name;
  os << ",mask_bits\n";
  char buf[64];
  auto put = [&](double v) {
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    os.write(buf, r.ptr - buf);
  };
  for (const auto& s : data) {
    if (s.obs.size() != obs_dim) throw std::invalid_argument("write_dataset_csv: observation size mismatch");
    os << s.episode << ',' << s.step;
    for (int i = 0; i < obs_dim; ++i) {
      os << ',';
      put(s.obs(i));
    }
    for (double l : s.labels) {
      os << ',';
      put(l);
    }
    os << ',' << s.mask << '\n';
  }
}

std::vector<TrainingSample> read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("read_dataset_csv: empty input");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) header.push_back(col);
  }
  const int ncols = static_cast<int>(header.size());
  const int obs_dim = ncols - 2 - kNumLabels - 1;
  if (obs_dim < 1 || header[0] != "episode" || header[1] != "step" || header.back() != "mask_bits") {
    throw std::runtime_error("read_dataset_csv: unexpected header");
  }
  for (int i = 0; i < obs_dim; ++i) {
    if (header[2 + i] != "obs_" + std::to_string(i)) throw std::runtime_error("read_dataset_csv: bad obs column");
  }
  for (int f = 0; f < kNumLabels; ++f) {
    if (header[2 + obs_dim + f] != std::string("label_") + kLabelNames[f]) {
      throw std::runtime_error("read_dataset_csv: bad label column " + header[2 + obs_dim + f]);
    }
  }
  std::vector<TrainingSample> data;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> vals;
    vals.reserve(ncols);
    const char* p = line.data();
    const char* end = p + line.size();
    while (p <= end) {
      const char* comma = std::find(p, end, ',');
      double v = 0.0;
      auto r = std::from_chars(p, comma, v);
      if (r.ec != std::errc() || r.ptr != comma) {
        throw std::runtime_error("read_dataset_csv: bad number on line " + std::to_string(lineno));
      }
      vals.push_back(v);
      p = comma + 1;
    }
    if (static_cast<int>(vals.size()) != ncols) {
      throw std::runtime_error("read_dataset_csv: wrong column count on line " + std::to_string(lineno));
    }
    TrainingSample s;
    s.episode = static_cast<int>(vals[0]);
    s.step = static_cast<int>(vals[1]);
    s.obs = Eigen::Map<const Eigen::VectorXd>(vals.data() + 2, obs_dim);
    for (int f = 0; f < kNumLabels; ++f) s.labels[f] = vals[2 + obs_dim + f];
    s.mask = static_cast<std::uint32_t>(vals.back());
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace bnet
