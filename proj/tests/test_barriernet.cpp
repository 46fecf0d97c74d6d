#include "bnet/barriernet.hpp"
#include "bnet/nominal_mpc.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace bnet;

namespace {

PolicyConfig small_config() {
  PolicyConfig c;
  c.hidden = {12, 12, 12};
  return c;
}

TrainingSample make_sample(const PolicyConfig& pc, const CurvilinearState& ego, const std::vector<Footprint>& obs,
                           double a, double omega) {
  const auto path = ReferencePath::straight(400.0);
  const auto ranked = rank_obstacles(ego, obs, path, pc.slot, pc.cover);
  TrainingSample s;
  s.obs = build_observation(ego, path, ranked, pc.obs).z;
  s.labels[kLabelV] = ego.v;
  s.labels[kLabelDelta] = ego.delta;
  s.labels[kLabelD] = ego.d;
  s.labels[kLabelMu] = ego.mu;
  if (ranked.empty()) {
    s.mask &= ~((1u << kLabelDs) | (1u << kLabelDobs));
  } else {
    s.labels[kLabelDs] = ranked[0].footprint.s - ego.s;
    s.labels[kLabelDobs] = ranked[0].footprint.d;
  }
  s.labels[kLabelA] = a;
  s.labels[kLabelOmega] = omega;
  return s;
}

// Heading hard toward the left lane edge: the lane barrier binds.
TrainingSample active_sample(const PolicyConfig& pc) {
  return make_sample(pc, CurvilinearState{100.0, 1.7, 0.25, 10.0, 0.2}, {{125.0, -1.5}}, 0.3, 0.4);
}

}  // namespace

TEST(PositiveMap, UnitAtZeroAndPositive) {
  EXPECT_NEAR(positive_map(0.0), 1.0, 1e-14);
  for (double x : {-50.0, -5.0, -0.3, 0.7, 4.0, 60.0}) EXPECT_GT(positive_map(x), 0.0);
  for (double x : {-3.0, 0.0, 2.5}) {
    const double e = 1e-6;
    EXPECT_NEAR(positive_map_derivative(x), (positive_map(x + e) - positive_map(x - e)) / (2 * e), 1e-8);
  }
}

TEST(Observation, LayoutAndSlots) {
  const PolicyConfig pc;
  EXPECT_EQ(pc.obs.dim(), 19);
  const CurvilinearState ego{100.0, 0.3, 0.05, 8.0, 0.01};
  const auto s = make_sample(pc, ego, {{140.0, 1.5}}, 0.0, 0.0);
  EXPECT_EQ(s.obs(0), 0.3);
  EXPECT_EQ(s.obs(2), 8.0);
  const int off = pc.obs.slot_offset(0);
  EXPECT_NEAR(s.obs(off), 40.0, 1e-12);
  EXPECT_EQ(s.obs(off + 1), 1.5);
  EXPECT_GT(s.obs(off + 2), 0.0);
  EXPECT_EQ(s.obs(off + 3), 1.0);
  EXPECT_EQ(s.obs(pc.obs.slot_offset(1) + 3), 0.0);
}

TEST(Observation, NoiseOnlyTouchesChosenChannel) {
  const PolicyConfig pc;
  const CurvilinearState ego{100.0, 0.3, 0.05, 8.0, 0.01};
  const auto path = ReferencePath::straight(400.0);
  const auto ranked = rank_obstacles(ego, {{140.0, 1.5}}, path, pc.slot, pc.cover);
  const auto clean = build_observation(ego, path, ranked, pc.obs).z;
  NoiseConfig n;
  n.d = 0.3;
  std::mt19937_64 rng(4);
  const auto noisy = build_observation(ego, path, ranked, pc.obs, n, &rng).z;
  EXPECT_NE(noisy(0), clean(0));
  EXPECT_EQ((noisy.tail(noisy.size() - 1) - clean.tail(clean.size() - 1)).norm(), 0.0);
}

TEST(Mlp, BackwardMatchesFiniteDifference) {
  Mlp m(5, {7, 6}, {{0, 2}, {1, 3}, {2, 2}}, 3);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> N(0.0, 1.0);
  const Eigen::VectorXd x = Eigen::VectorXd::NullaryExpr(5, [&] { return N(rng); });
  std::vector<Eigen::VectorXd> hg;
  for (const auto& h : m.head_specs()) hg.push_back(Eigen::VectorXd::NullaryExpr(h.outputs, [&] { return N(rng); }));
  auto f = [&](const Mlp& mm) {
    const auto c = mm.forward(x);
    double v = 0.0;
    for (std::size_t i = 0; i < hg.size(); ++i) v += hg[i].dot(c.heads[i]);
    return v;
  };
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m.num_params());
  m.backward(m.forward(x), hg, g);
  const Eigen::VectorXd theta = m.flat();
  for (int i = 0; i < theta.size(); ++i) {
    Mlp p = m, q = m;
    Eigen::VectorXd t = theta;
    t(i) += 1e-6;
    p.set_flat(t);
    t(i) -= 2e-6;
    q.set_flat(t);
    EXPECT_NEAR(g(i), (f(p) - f(q)) / 2e-6, 1e-6) << "param " << i;
  }
}

TEST(PolicyNetwork, PenaltiesStartNearOne) {
  const PolicyNetwork net(small_config(), 1);
  const auto s = active_sample(net.config());
  const auto h = net.decode(net.run(s.obs));
  ASSERT_EQ(static_cast<int>(h.penalties.size()), net.config().num_constraints());
  for (const auto& p : h.penalties) {
    EXPECT_NEAR(p.p1, 1.0, 0.2);
    EXPECT_NEAR(p.p2, 1.0, 0.2);
    EXPECT_NE(p.p1, p.p2);
  }
}

TEST(PolicyNetwork, NoBarrierReturnsClampedReference) {
  const PolicyNetwork net(small_config(), 2);
  const auto s = active_sample(net.config());
  const auto ctx = label_context(net, s);
  const auto step = net.act(s.obs, ctx, {}, PolicyMode::NoBarrier);
  const auto& vp = net.config().vehicle;
  EXPECT_EQ(step.control.a, vp.a_bounds.clamp(step.heads.u_ref(0)));
  EXPECT_EQ(step.control.omega, vp.omega_bounds.clamp(step.heads.u_ref(1)));
  EXPECT_TRUE(step.terms.empty());
}

TEST(PolicyNetwork, ExactModeSatisfiesConstraints) {
  const PolicyNetwork net(small_config(), 3);
  const auto s = make_sample(net.config(), CurvilinearState{100.0, 0.5, 0.05, 8.0, 0.02}, {{130.0, -1.5}}, 0.0, 0.0);
  const auto ctx = label_context(net, s);
  const auto step = net.act(s.obs, ctx, {}, PolicyMode::ExactState);
  ASSERT_EQ(step.status, QPStatus::Optimal);
  const Eigen::Vector2d u(step.control.a, step.control.omega);
  for (const auto& t : step.terms) EXPECT_GE(t.row.slack(u), -1e-6);
}

TEST(SampleLoss, ZeroWhenHeadsReproduceLabels) {
  PolicyNetwork net(small_config(), 4);
  const auto s = make_sample(net.config(), CurvilinearState{100.0, 0.0, 0.0, 8.0, 0.0}, {}, 0.5, 0.1);
  for (auto& h : net.mlp().heads()) {
    h.W.setZero();
    h.b.setZero();
  }
  for (int f = 0; f < kNumLabels; ++f) net.label_mean[f] = s.labels[f];
  net.label_mean[kLabelA] = net.config().a_ref_clip * std::atanh(0.5 / net.config().a_ref_clip);
  net.label_mean[kLabelOmega] = net.config().omega_ref_clip * std::atanh(0.1 / net.config().omega_ref_clip);
  TrainConfig tc;
  const auto l = sample_loss(net, s, tc);
  ASSERT_TRUE(l.qp_ok);
  EXPECT_LT(l.total, 1e-12);
}

TEST(SampleLoss, GradientMatchesFiniteDifference) {
  PolicyNetwork net(small_config(), 5);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N(0.0, 0.3);
  // Nonzero penalty-head weights so the penalty path is exercised off its init.
  Eigen::VectorXd theta = net.mlp().flat();
  const auto [off, len] = net.mlp().head_range(kHeadPenalty);
  for (int i = 0; i < len; ++i) theta(off + i) = N(rng);
  net.mlp().set_flat(theta);
  const auto s = active_sample(net.config());
  const TrainConfig tc;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
  const auto l = sample_loss(net, s, tc, &g);
  ASSERT_TRUE(l.qp_ok);
  ASSERT_GT(l.active, 0);
  std::vector<int> idx;
  for (int i = 0; i < len; ++i) idx.push_back(off + i);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(theta.size()) - 1);
  for (int i = 0; i < 60; ++i) idx.push_back(pick(rng));
  int bad = 0;
  for (int i : idx) {
    PolicyNetwork p = net, q = net;
    Eigen::VectorXd t = theta;
    t(i) += 1e-6;
    p.mlp().set_flat(t);
    t(i) -= 2e-6;
    q.mlp().set_flat(t);
    const double num = (sample_loss(p, s, tc).total - sample_loss(q, s, tc).total) / 2e-6;
    if (std::abs(num - g(i)) > 1e-4 * std::abs(num) + 1e-6) ++bad;
  }
  EXPECT_EQ(bad, 0);
}

TEST(SampleLoss, PenaltyGradientNonzeroOnlyWhenActive) {
  const PolicyNetwork net(small_config(), 6);
  const TrainConfig tc;
  const auto [off, len] = net.mlp().head_range(kHeadPenalty);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(net.mlp().num_params());
  sample_loss(net, active_sample(net.config()), tc, &g);
  EXPECT_GT(g.segment(off, len).norm(), 0.0);

  const auto calm = make_sample(net.config(), CurvilinearState{100.0, 0.0, 0.0, 8.0, 0.0}, {}, 0.0, 0.0);
  g.setZero();
  const auto l = sample_loss(net, calm, tc, &g);
  ASSERT_EQ(l.active, 0);
  EXPECT_EQ(g.segment(off, len).norm(), 0.0);
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  PolicyNetwork net(small_config(), 7);
  std::vector<TrainingSample> data{active_sample(net.config())};
  const Eigen::VectorXd before = net.mlp().flat();
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 3;
  const auto r = train(net, data, tc);
  EXPECT_EQ(net.mlp().flat(), before);
  EXPECT_EQ(r.rows.size(), 3u);
}

TEST(Train, FitsSingleSample) {
  PolicyNetwork net(small_config(), 8);
  DatasetSpec spec;
  spec.episodes = 1;
  spec.steps = 20;
  const auto data = generate_dataset(spec, MPCConfig{});
  ASSERT_EQ(data.size(), 20u);
  TrainConfig tc;
  tc.epochs = 300;
  tc.learning_rate = 3e-3;
  const auto r = train(net, data, tc);
  EXPECT_LT(r.epoch_mean.back(), 0.1 * r.initial_loss);
  for (std::size_t i = 1; i < r.rows.size(); ++i) EXPECT_TRUE(std::isfinite(r.rows[i].loss.total));
}

TEST(Train, DeterministicForSeed) {
  std::vector<TrainingSample> data;
  PolicyNetwork a(small_config(), 9), b(small_config(), 9);
  data.push_back(active_sample(a.config()));
  TrainConfig tc;
  tc.epochs = 5;
  train(a, data, tc);
  train(b, data, tc);
  EXPECT_EQ(a.mlp().flat(), b.mlp().flat());
}
