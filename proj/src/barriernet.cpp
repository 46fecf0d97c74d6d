#include "bnet/barriernet.hpp"

#include "bnet/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace bnet {

const std::array<const char*, kNumLabels> kLabelNames{"v", "delta", "d", "dobs", "mu", "ds", "a", "omega"};

NoiseChannel parse_noise_channel(const std::string& name) {
  if (name == "d") return NoiseChannel::D;
  if (name == "mu") return NoiseChannel::Mu;
  if (name == "v") return NoiseChannel::V;
  if (name == "delta") return NoiseChannel::Delta;
  if (name == "ds") return NoiseChannel::Ds;
  if (name == "dobs" || name == "d_obs") return NoiseChannel::Dobs;
  throw std::invalid_argument("unknown noise channel: " + name);
}

std::string to_string(NoiseChannel c) {
  switch (c) {
    case NoiseChannel::D: return "d";
    case NoiseChannel::Mu: return "mu";
    case NoiseChannel::V: return "v";
    case NoiseChannel::Delta: return "delta";
    case NoiseChannel::Ds: return "ds";
    case NoiseChannel::Dobs: return "dobs";
  }
  return "?";
}

double& NoiseConfig::operator[](NoiseChannel c) {
  switch (c) {
    case NoiseChannel::D: return d;
    case NoiseChannel::Mu: return mu;
    case NoiseChannel::V: return v;
    case NoiseChannel::Delta: return delta;
    case NoiseChannel::Ds: return ds;
    case NoiseChannel::Dobs: return dobs;
  }
  throw std::invalid_argument("NoiseConfig: bad channel");
}

double NoiseConfig::operator[](NoiseChannel c) const { return const_cast<NoiseConfig&>(*this)[c]; }

bool NoiseConfig::any() const { return d > 0 || mu > 0 || v > 0 || delta > 0 || ds > 0 || dobs > 0; }

namespace {

double kappa_ahead(const ReferencePath& path, double s) {
  if (!path.closed()) s = std::clamp(s, 0.0, path.length());
  return path.curvature_at(s);
}

// Gaussian corruption of ego channels and present slots, in a fixed draw order.
void apply_noise(Eigen::VectorXd& z, const ObservationConfig& cfg, const NoiseConfig& noise, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  auto add = [&](int idx, double sigma) {
    if (sigma > 0.0) z(idx) += sigma * n01(rng);
  };
  add(0, noise.d);
  add(1, noise.mu);
  add(2, noise.v);
  add(3, noise.delta);
  for (int k = 0; k < cfg.slots; ++k) {
    const int off = cfg.slot_offset(k);
    if (z(off + 3) < 0.5) continue;
    add(off, noise.ds);
    add(off + 1, noise.dobs);
  }
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

const double kPosShift = std::log(std::exp(1.0) - 1.0);

}  // namespace

Observation build_observation(const CurvilinearState& ego, const ReferencePath& path,
                              const std::vector<RankedObstacle>& ranked, const ObservationConfig& cfg,
                              const NoiseConfig& noise, std::mt19937_64* rng) {
  Observation o;
  o.noise = noise;
  o.z = Eigen::VectorXd::Zero(cfg.dim());
  o.z(0) = ego.d;
  o.z(1) = ego.mu;
  o.z(2) = ego.v;
  o.z(3) = ego.delta;
  for (std::size_t i = 0; i < cfg.lookahead.size(); ++i) o.z(4 + i) = kappa_ahead(path, ego.s + cfg.lookahead[i]);
  const int n = std::min<int>(cfg.slots, static_cast<int>(ranked.size()));
  for (int k = 0; k < n; ++k) {
    const int off = cfg.slot_offset(k);
    o.z(off) = ranked[k].footprint.s - ego.s;
    o.z(off + 1) = ranked[k].footprint.d;
    o.z(off + 2) = ranked[k].disk.r_D;
    o.z(off + 3) = 1.0;
  }
  if (rng != nullptr && noise.any()) apply_noise(o.z, cfg, noise, *rng);
  return o;
}

double positive_map(double raw) { return softplus(raw + kPosShift); }

double positive_map_derivative(double raw) { return 1.0 / (1.0 + std::exp(-(raw + kPosShift))); }

void PolicyConfig::validate() const {
  if (obs.slots < 1) throw std::invalid_argument("PolicyConfig: slots must be >= 1");
  if (obs.slots != slot.slots) throw std::invalid_argument("PolicyConfig: observation and slot counts differ");
  if (obs.lookahead.empty() || obs.lookahead.front() != 0.0) {
    throw std::invalid_argument("PolicyConfig: lookahead must start at 0");
  }
  if (hidden.empty()) throw std::invalid_argument("PolicyConfig: at least one hidden layer");
  if (!(h_diag.minCoeff() > 0.0)) throw std::invalid_argument("PolicyConfig: H diagonal must be > 0");
  if (!(a_ref_clip > 0.0) || !(omega_ref_clip > 0.0)) throw std::invalid_argument("PolicyConfig: clips must be > 0");
  if (!(lane_half_width > 0.0)) throw std::invalid_argument("PolicyConfig: lane_half_width must be > 0");
  vehicle.validate();
  slot.validate();
  cover.validate();
}

PolicyMode parse_policy_mode(const std::string& name) {
  if (name == "estimated") return PolicyMode::Estimated;
  if (name == "exact") return PolicyMode::ExactState;
  if (name == "no_barrier" || name == "none") return PolicyMode::NoBarrier;
  throw std::invalid_argument("unknown policy mode: " + name);
}

std::string to_string(PolicyMode mode) {
  switch (mode) {
    case PolicyMode::Estimated: return "estimated";
    case PolicyMode::ExactState: return "exact";
    case PolicyMode::NoBarrier: return "no_barrier";
  }
  return "?";
}

PolicyNetwork::PolicyNetwork(PolicyConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const int depth = static_cast<int>(config_.hidden.size());
  std::vector<HeadSpec> heads{
      {std::min(1, depth), 4},
      {std::min(2, depth), 2},
      {depth, 2},
      // Small but nonzero: with p1 == p2 everywhere the two gradients coincide
      // and training could never separate them.
      {depth, 2 * config_.num_constraints(), 0.05},
  };
  mlp_ = Mlp(config_.obs.dim(), config_.hidden, heads, seed);
  in_mean = Eigen::VectorXd::Zero(config_.obs.dim());
  in_std = Eigen::VectorXd::Ones(config_.obs.dim());
  label_mean.fill(0.0);
  label_std.fill(1.0);
}

Mlp::Cache PolicyNetwork::run(const Eigen::VectorXd& obs) const {
  if (obs.size() != config_.obs.dim()) throw std::invalid_argument("PolicyNetwork: observation has wrong size");
  return mlp_.forward((obs - in_mean).cwiseQuotient(in_std));
}

HeadOutputs PolicyNetwork::decode(const Mlp::Cache& c) const {
  HeadOutputs h;
  auto field = [&](int f, double raw) { return label_mean[f] + label_std[f] * raw; };
  const auto& st = c.heads[kHeadState];
  h.d = field(kLabelD, st(0));
  h.dobs = field(kLabelDobs, st(1));
  h.mu = field(kLabelMu, st(2));
  h.ds = field(kLabelDs, st(3));
  const auto& kin = c.heads[kHeadKin];
  h.v = field(kLabelV, kin(0));
  h.delta = field(kLabelDelta, kin(1));
  const auto& ref = c.heads[kHeadRef];
  h.u_ref(0) = config_.a_ref_clip * std::tanh(field(kLabelA, ref(0)) / config_.a_ref_clip);
  h.u_ref(1) = config_.omega_ref_clip * std::tanh(field(kLabelOmega, ref(1)) / config_.omega_ref_clip);
  const auto& pen = c.heads[kHeadPenalty];
  const int nc = config_.num_constraints();
  h.raw_penalties.assign(pen.data(), pen.data() + pen.size());
  h.penalties.resize(nc);
  for (int i = 0; i < nc; ++i) h.penalties[i] = {positive_map(pen(2 * i)), positive_map(pen(2 * i + 1))};
  return h;
}

QPProblem PolicyNetwork::build_qp(const ConstraintContext& ctx, const HeadOutputs& heads, bool with_bounds,
                                  std::vector<BarrierSpec>* specs_out, std::vector<HocbfTerms>* terms_out) const {
  const int nc = config_.num_constraints();
  if (static_cast<int>(ctx.disks.size()) != config_.obs.slots) {
    throw std::invalid_argument("build_qp: disk count must equal slot count");
  }
  const auto specs = make_barrier_specs(ctx.disks, config_.barrier, config_.slot);
  QPProblem qp;
  qp.H = config_.h_diag.asDiagonal();
  qp.F = -(qp.H * heads.u_ref);
  qp.G.resize(nc, 2);
  qp.h.resize(nc);
  std::vector<HocbfTerms> terms;
  terms.reserve(nc);
  for (int i = 0; i < nc; ++i) {
    terms.push_back(hocbf_terms(specs[i], ctx.ego, heads.penalties[i], ctx.kappa, config_.vehicle));
    qp.G.row(i) = -terms.back().row.coeff.transpose();
    qp.h(i) = terms.back().row.constant;
  }
  if (with_bounds) {
    qp.lb = Eigen::Vector2d(config_.vehicle.a_bounds.min, config_.vehicle.omega_bounds.min);
    qp.ub = Eigen::Vector2d(config_.vehicle.a_bounds.max, config_.vehicle.omega_bounds.max);
  }
  if (specs_out) *specs_out = specs;
  if (terms_out) *terms_out = std::move(terms);
  return qp;
}

namespace {

std::vector<ObstacleDisk> disks_from_observation(const Eigen::VectorXd& obs, const PolicyConfig& cfg, double s,
                                                 const std::optional<std::pair<double, double>>& slot0) {
  std::vector<ObstacleDisk> disks;
  for (int k = 0; k < cfg.obs.slots; ++k) {
    const int off = cfg.obs.slot_offset(k);
    if (obs(off + 3) < 0.5) break;
    double ds = obs(off);
    double d = obs(off + 1);
    if (k == 0 && slot0) std::tie(ds, d) = *slot0;
    ObstacleDisk disk;
    disk.slot = k;
    disk.s_obs = s + ds;
    disk.d_obs = d + (d >= 0.0 ? 1.0 : -1.0) * cfg.cover.offset;
    disk.r_D = obs(off + 2);
    disks.push_back(disk);
  }
  for (const auto& p : parked_disks(s, cfg.lane_half_width, static_cast<int>(disks.size()), cfg.slot)) {
    disks.push_back(p);
  }
  return disks;
}

}  // namespace

ConstraintContext PolicyNetwork::estimated_context(const Eigen::VectorXd& obs, const HeadOutputs& heads,
                                                   double s) const {
  ConstraintContext ctx;
  ctx.ego.s = s;
  ctx.ego.d = heads.d;
  ctx.ego.mu = heads.mu;
  ctx.ego.v = std::max(0.0, heads.v);
  ctx.ego.delta = std::clamp(heads.delta, -1.2, 1.2);
  ctx.kappa = obs(4);
  ctx.disks = disks_from_observation(obs, config_, s, std::make_pair(heads.ds, heads.dobs));
  return ctx;
}

ConstraintContext PolicyNetwork::context_from_observation(const Eigen::VectorXd& obs,
                                                          const CurvilinearState& ego) const {
  ConstraintContext ctx;
  ctx.ego = ego;
  ctx.kappa = obs(4);
  ctx.disks = disks_from_observation(obs, config_, ego.s, std::nullopt);
  return ctx;
}

PolicyStep PolicyNetwork::act(const Eigen::VectorXd& obs, const ConstraintContext& ctx, const Control& previous,
                              PolicyMode mode) const {
  PolicyStep step;
  const auto cache = run(obs);
  step.heads = decode(cache);
  const auto& vp = config_.vehicle;
  if (mode == PolicyMode::NoBarrier) {
    step.control = {vp.a_bounds.clamp(step.heads.u_ref(0)), vp.omega_bounds.clamp(step.heads.u_ref(1))};
    return step;
  }
  const ConstraintContext used = mode == PolicyMode::Estimated ? estimated_context(obs, step.heads, ctx.ego.s) : ctx;
  auto qp = build_qp(used, step.heads, true, &step.specs, &step.terms);
  auto sol = qp_solve(qp, config_.qp_tol, config_.qp_max_iter);
  step.status = sol.status;
  if (sol.status != QPStatus::Optimal) {
    step.fallback = true;
    qp.lb.reset();
    qp.ub.reset();
    sol = qp_solve(qp, config_.qp_tol, config_.qp_max_iter);
  }
  if (sol.status == QPStatus::Optimal) {
    step.control = {vp.a_bounds.clamp(sol.u_star(0)), vp.omega_bounds.clamp(sol.u_star(1))};
  } else {
    step.held = true;
    step.control = previous;
  }
  return step;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
  if (epochs < 0 || batch_size < 1) throw std::invalid_argument("TrainConfig: epochs >= 0, batch_size >= 1");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("TrainConfig: grad_clip must be > 0");
  if (!(loss_cap > 0.0)) throw std::invalid_argument("TrainConfig: loss_cap must be > 0");
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("TrainConfig: weights must be >= 0");
  }
}

ConstraintContext label_context(const PolicyNetwork& net, const TrainingSample& s) {
  CurvilinearState ego;
  ego.s = 0.0;
  ego.d = s.labels[kLabelD];
  ego.mu = s.labels[kLabelMu];
  ego.v = std::max(0.0, s.labels[kLabelV]);
  ego.delta = s.labels[kLabelDelta];
  ConstraintContext ctx;
  ctx.ego = ego;
  ctx.kappa = s.obs(4);
  std::optional<std::pair<double, double>> slot0;
  if (s.valid(kLabelDs) && s.valid(kLabelDobs)) slot0 = std::make_pair(s.labels[kLabelDs], s.labels[kLabelDobs]);
  ctx.disks = disks_from_observation(s.obs, net.config(), 0.0, slot0);
  return ctx;
}

LossBreakdown sample_loss(const PolicyNetwork& net, const TrainingSample& sample, const TrainConfig& cfg,
                          Eigen::VectorXd* grad, const Eigen::VectorXd* obs_override) {
  const Eigen::VectorXd& z = obs_override ? *obs_override : sample.obs;
  const auto cache = net.run(z);
  const auto heads = net.decode(cache);
  const auto& pc = net.config();

  LossBreakdown out;
  std::vector<Eigen::VectorXd> hg{Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2),
                                  Eigen::VectorXd::Zero(2 * pc.num_constraints())};

  // Regression heads: normalized error e = raw - (label - mean) / std.
  auto regress = [&](int field, int head, int idx, double& bucket, bool capped) {
    if (!sample.valid(field)) return;
    const double raw = cache.heads[head](idx);
    const double e = raw - (sample.labels[field] - net.label_mean[field]) / net.label_std[field];
    const double w = cfg.weights[field];
    double sq = e * e;
    double g = 2.0 * w * e;
    if (capped && sq > cfg.loss_cap) {
      sq = cfg.loss_cap;
      g = 0.0;
    }
    bucket += w * sq;
    hg[head](idx) += g;
  };
  regress(kLabelD, kHeadState, 0, out.state, false);
  regress(kLabelDobs, kHeadState, 1, out.state, true);
  regress(kLabelMu, kHeadState, 2, out.state, false);
  regress(kLabelDs, kHeadState, 3, out.state, true);
  regress(kLabelV, kHeadKin, 0, out.kin, false);
  regress(kLabelDelta, kHeadKin, 1, out.kin, false);

  const bool want_control = sample.valid(kLabelA) || sample.valid(kLabelOmega);
  if (want_control) {
    const auto ctx = label_context(net, sample);
    std::vector<HocbfTerms> terms;
    const QPProblem qp = net.build_qp(ctx, heads, false, nullptr, &terms);
    const QPSolution sol = qp_solve(qp, pc.qp_tol, pc.qp_max_iter);
    if (sol.status != QPStatus::Optimal) {
      out.qp_ok = false;
    } else {
      Eigen::Vector2d gu = Eigen::Vector2d::Zero();
      const int fields[2] = {kLabelA, kLabelOmega};
      for (int j = 0; j < 2; ++j) {
        const int f = fields[j];
        if (!sample.valid(f)) continue;
        const double e = (sol.u_star(j) - sample.labels[f]) / net.label_std[f];
        out.control += cfg.weights[f] * e * e;
        gu(j) = 2.0 * cfg.weights[f] * e / net.label_std[f];
      }
      if (grad) {
        const QPGradients qg = qp_backward(qp, sol, gu);
        out.active = qg.active_rows;
        // F = -H u_ref.
        const Eigen::Vector2d du_ref = -(qp.H * qg.dF);
        const double clips[2] = {pc.a_ref_clip, pc.omega_ref_clip};
        for (int j = 0; j < 2; ++j) {
          const int f = fields[j];
          const double x = net.label_mean[f] + net.label_std[f] * cache.heads[kHeadRef](j);
          const double t = std::tanh(x / clips[j]);
          hg[kHeadRef](j) += du_ref(j) * (1.0 - t * t) * net.label_std[f];
        }
        for (int i = 0; i < pc.num_constraints(); ++i) {
          const double dp1 = qg.dh(i) * terms[i].dconst_dp1;
          const double dp2 = qg.dh(i) * terms[i].dconst_dp2;
          hg[kHeadPenalty](2 * i) += dp1 * positive_map_derivative(heads.raw_penalties[2 * i]);
          hg[kHeadPenalty](2 * i + 1) += dp2 * positive_map_derivative(heads.raw_penalties[2 * i + 1]);
        }
      }
    }
  }
  out.total = out.state + out.kin + out.control;
  if (grad) net.mlp().backward(cache, hg, *grad);
  return out;
}

void fit_normalization(PolicyNetwork& net, const std::vector<TrainingSample>& data) {
  if (data.empty()) throw std::invalid_argument("fit_normalization: empty dataset");
  const int dim = net.config().obs.dim();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim), sq = Eigen::VectorXd::Zero(dim);
  for (const auto& s : data) {
    if (s.obs.size() != dim) throw std::invalid_argument("fit_normalization: observation size mismatch");
    sum += s.obs;
    sq += s.obs.cwiseAbs2();
  }
  const double n = static_cast<double>(data.size());
  net.in_mean = sum / n;
  net.in_std = (sq / n - net.in_mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  for (int i = 0; i < dim; ++i) {
    if (net.in_std(i) < 1e-6) net.in_std(i) = 1.0;
  }
  for (int f = 0; f < kNumLabels; ++f) {
    double s1 = 0.0, s2 = 0.0;
    int cnt = 0;
    for (const auto& s : data) {
      if (!s.valid(f)) continue;
      s1 += s.labels[f];
      s2 += s.labels[f] * s.labels[f];
      ++cnt;
    }
    if (cnt == 0) {
      net.label_mean[f] = 0.0;
      net.label_std[f] = 1.0;
      continue;
    }
    const double m = s1 / cnt;
    const double sd = std::sqrt(std::max(0.0, s2 / cnt - m * m));
    net.label_mean[f] = m;
    net.label_std[f] = sd < 1e-6 ? 1.0 : sd;
  }
}

double mean_loss(const PolicyNetwork& net, const std::vector<TrainingSample>& data, const TrainConfig& cfg) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : data) total += sample_loss(net, s, cfg).total;
  return total / static_cast<double>(data.size());
}

TrainResult train(PolicyNetwork& net, const std::vector<TrainingSample>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (!net.normalized) {
    fit_normalization(net, data);
    net.normalized = true;
  }
  TrainResult res;
  res.initial_loss = mean_loss(net, data, cfg);

  Eigen::VectorXd theta = net.mlp().flat();
  Adam adam(static_cast<int>(theta.size()), AdamConfig{cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Eigen::VectorXd grad(theta.size()), noisy;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    int batch = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      grad.setZero();
      LossRow row;
      row.epoch = epoch;
      row.batch = batch;
      for (std::size_t k = start; k < end; ++k) {
        const TrainingSample& s = data[order[k]];
        const Eigen::VectorXd* override_obs = nullptr;
        if (cfg.augment.any()) {
          noisy = s.obs;
          apply_noise(noisy, net.config().obs, cfg.augment, rng);
          override_obs = &noisy;
        }
        const auto l = sample_loss(net, s, cfg, &grad, override_obs);
        if (!l.qp_ok) ++row.skipped;
        row.loss.total += l.total;
        row.loss.state += l.state;
        row.loss.kin += l.kin;
        row.loss.control += l.control;
      }
      const double nb = static_cast<double>(end - start);
      epoch_total += row.loss.total;
      row.loss.total /= nb;
      row.loss.state /= nb;
      row.loss.kin /= nb;
      row.loss.control /= nb;
      res.skipped_infeasible += row.skipped;
      grad /= nb;
      if (!std::isfinite(row.loss.total) || !grad.allFinite()) {
        throw std::runtime_error("train: non-finite loss or gradient at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch));
      }
      const double gn = grad.norm();
      if (gn > cfg.grad_clip) grad *= cfg.grad_clip / gn;
      if (cfg.learning_rate > 0.0) {
        adam.step(theta, grad);
        net.mlp().set_flat(theta);
      }
      res.rows.push_back(row);
    }
    res.epoch_mean.push_back(epoch_total / static_cast<double>(data.size()));
  }
  return res;
}

void write_loss_csv(std::ostream& os, const TrainResult& result) {
  os << "epoch,batch,total_loss,loss_state,loss_kin,loss_control,skipped\n";
  os.precision(10);
  for (const auto& r : result.rows) {
    os << r.epoch << ',' << r.batch << ',' << r.loss.total << ',' << r.loss.state << ',' << r.loss.kin << ','
       << r.loss.control << ',' << r.skipped << '\n';
  }
}

}  // namespace bnet
