#include "bnet/harness.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

using namespace bnet;

namespace {

Scenario empty_road(double d0) {
  Scenario sc;
  sc.path = ReferencePath::straight(1000.0);
  sc.ego_init = CurvilinearState{20.0, d0, 0.0, 8.0, 0.0};
  return sc;
}

ScenarioDistribution head_on() {
  ScenarioDistribution dist;
  dist.ego_d = {-0.2, 0.2};
  dist.obs_abs_d = {0.0, 0.3};
  return dist;
}

std::shared_ptr<const PolicyNetwork> random_net(std::uint64_t seed) {
  PolicyConfig pc;
  pc.hidden = {16, 16, 16};
  return std::make_shared<const PolicyNetwork>(pc, seed);
}

}  // namespace

TEST(Clearance, Examples) {
  const Pose2 a{0.0, 0.0, 0.0};
  EXPECT_EQ(clearance(a, 4.5, 1.8, a, 4.5, 1.8), 0.0);
  EXPECT_NEAR(clearance(a, 1.0, 1.0, Pose2{2.0, 0.0, 0.0}, 1.0, 1.0), 1.0, 1e-12);
  EXPECT_NEAR(clearance(a, 1.0, 1.0, Pose2{0.0, -3.0, 0.0}, 1.0, 1.0), 2.0, 1e-12);
}

TEST(Clearance, MatchesSamplingOracleAndIsSymmetric) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  int overlaps = 0;
  for (int i = 0; i < 40; ++i) {
    const Pose2 a{U(rng), U(rng), 3.2 * U(rng)};
    const Pose2 b{4.0 * U(rng) + 2.0, 4.0 * U(rng), 3.2 * U(rng)};
    const double al = 2 + 3 * std::abs(U(rng)), aw = 1 + std::abs(U(rng));
    const double bl = 2 + 3 * std::abs(U(rng)), bw = 1 + std::abs(U(rng));
    const double c = clearance(a, al, aw, b, bl, bw);
    EXPECT_EQ(c, clearance(b, bl, bw, a, al, aw));
    const double ref = oracle::rect_distance_sampled(a, al, aw, b, bl, bw, 10000);
    EXPECT_NEAR(c, ref, 1e-3) << "case " << i;
    if (ref == 0.0) ++overlaps;
  }
  EXPECT_GT(overlaps, 0);
}

TEST(Rollout, TrackingStaysCentered) {
  RolloutConfig cfg;
  TrackingPolicy policy(8.0, cfg.vehicle);
  const auto r = rollout(policy, empty_road(0.0), cfg, 1);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].kind, EventKind::Completed);
  EXPECT_EQ(static_cast<int>(r.controls.size()), cfg.max_steps);
  EXPECT_EQ(r.states.size(), r.controls.size() + 1);
  for (const auto& x : r.states) EXPECT_LE(std::abs(x.d), 0.05);
}

TEST(Rollout, OffLaneAtStart) {
  RolloutConfig cfg;
  TrackingPolicy policy(8.0, cfg.vehicle);
  const auto r = rollout(policy, empty_road(2.5), cfg, 1);
  ASSERT_NE(r.terminal(), nullptr);
  EXPECT_EQ(r.terminal()->kind, EventKind::OffLane);
  EXPECT_EQ(r.terminal()->step, 0);
  EXPECT_TRUE(r.crashed());
}

TEST(Rollout, CrashEventsMatchTrace) {
  RolloutConfig cfg;
  ConstantPolicy floor_it({cfg.vehicle.a_bounds.max, 0.0});
  const auto ev = evaluate(floor_it, head_on(), 20, 3, cfg, true);
  for (const auto& r : ev.rollouts) {
    for (const auto& e : r.events) {
      if (e.kind != EventKind::Crash && e.kind != EventKind::OffLane) continue;
      ASSERT_LT(e.step, static_cast<int>(r.states.size()));
      const bool hit = r.clearance[e.step] <= 0.0 || std::abs(r.states[e.step].d) > cfg.off_lane;
      EXPECT_TRUE(hit) << e.detail;
    }
  }
}

TEST(Rollout, ExactStateKeepsBarriersNonnegative) {
  RolloutConfig cfg;
  BarrierNetPolicy policy(random_net(4), PolicyMode::ExactState);
  ScenarioDistribution dist;
  const auto ev = evaluate(policy, dist, 20, 5, cfg, true);
  int checked = 0;
  for (const auto& r : ev.rollouts) {
    bool infeasible = false;
    for (const auto& e : r.events) infeasible |= e.kind == EventKind::QpInfeasible;
    if (infeasible) continue;
    ++checked;
    for (const auto& row : r.barriers) {
      for (double b : row) EXPECT_GE(b, -1e-3);
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Evaluate, CrashAlwaysPolicy) {
  RolloutConfig cfg;
  ConstantPolicy floor_it({cfg.vehicle.a_bounds.max, 0.0});
  const auto m = evaluate(floor_it, head_on(), 25, 2, cfg).metrics;
  EXPECT_EQ(m.episodes, 25);
  EXPECT_EQ(m.crash_rate, 1.0);
}

TEST(Evaluate, SingleEpisodeMatchesOutcome) {
  RolloutConfig cfg;
  TrackingPolicy policy(8.0, cfg.vehicle);
  ScenarioDistribution dist;
  const auto ev = evaluate(policy, dist, 1, 6, cfg, true);
  ASSERT_EQ(ev.rollouts.size(), 1u);
  const auto& r = ev.rollouts[0];
  EXPECT_EQ(ev.metrics.episodes, 1);
  EXPECT_EQ(ev.metrics.crashes, r.crashed() ? 1 : 0);
  EXPECT_EQ(ev.metrics.min_clearance, r.min_clearance);
}

TEST(Evaluate, ExceedanceIsEmpiricalAndMonotone) {
  RolloutConfig cfg;
  cfg.noise.d = 0.3;
  TrackingPolicy policy(8.0, cfg.vehicle);
  ScenarioDistribution dist;
  dist.ego_d = {-1.5, 1.5};
  const auto ev = evaluate(policy, dist, 10, 7, cfg, true);
  const auto& m = ev.metrics;
  ASSERT_EQ(m.thresholds.size(), m.exceedance.size());
  for (std::size_t i = 1; i < m.exceedance.size(); ++i) EXPECT_LE(m.exceedance[i], m.exceedance[i - 1]);
  for (std::size_t i = 0; i < m.thresholds.size(); ++i) {
    long over = 0, total = 0;
    for (const auto& r : ev.rollouts) {
      for (const auto& x : r.states) {
        ++total;
        over += std::abs(x.d) > m.thresholds[i];
      }
    }
    EXPECT_EQ(m.exceedance[i], static_cast<double>(over) / static_cast<double>(total));
  }
}

TEST(Evaluate, Deterministic) {
  RolloutConfig cfg;
  cfg.noise.dobs = 0.4;
  BarrierNetPolicy policy(random_net(2), PolicyMode::Estimated);
  ScenarioDistribution dist;
  const auto a = evaluate(policy, dist, 8, 11, cfg).metrics;
  const auto b = evaluate(policy, dist, 8, 11, cfg).metrics;
  EXPECT_EQ(a.crashes, b.crashes);
  EXPECT_EQ(a.steps, b.steps);
  EXPECT_EQ(a.mean_min_clearance, b.mean_min_clearance);
  EXPECT_EQ(a.exceedance, b.exceedance);
}

TEST(NoiseSweep, ZeroSigmaEqualsEvaluate) {
  RolloutConfig cfg;
  BarrierNetPolicy policy(random_net(3), PolicyMode::Estimated);
  ScenarioDistribution dist;
  const auto base = evaluate(policy, dist, 6, 13, cfg).metrics;
  const auto rows = noise_sweep(policy, dist, NoiseChannel::Dobs, {0.0}, 6, 13, cfg);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].crash_rate, base.crash_rate);
  EXPECT_EQ(rows[0].n, 6);
}

TEST(NoiseSweep, SingleEpisodeAllChannels) {
  RolloutConfig cfg;
  TrackingPolicy policy(8.0, cfg.vehicle);
  ScenarioDistribution dist;
  for (auto ch : {NoiseChannel::D, NoiseChannel::Mu, NoiseChannel::Ds, NoiseChannel::Dobs}) {
    const auto rows = noise_sweep(policy, dist, ch, {0.0}, 1, 2, cfg);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].n, 1);
  }
  EXPECT_THROW(noise_sweep(policy, dist, NoiseChannel::D, {-0.1}, 1, 2, cfg), std::invalid_argument);
}

TEST(TwoProportion, Examples) {
  EXPECT_NEAR(two_proportion_p(10, 100, 10, 100), 0.5, 1e-12);
  EXPECT_LT(two_proportion_p(0, 300, 30, 300), 1e-4);
  EXPECT_GT(two_proportion_p(30, 300, 0, 300), 0.99);
}

TEST(Output, RolloutJsonLines) {
  RolloutConfig cfg;
  BarrierNetPolicy policy(random_net(5), PolicyMode::ExactState);
  ScenarioDistribution dist;
  std::mt19937_64 rng(1);
  const auto r = rollout(policy, dist.sample(rng), cfg, 1);
  std::ostringstream os;
  write_rollout_jsonl(os, r);
  std::istringstream in(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("schema_version"), kOutputSchema);
    EXPECT_TRUE(j.contains("state"));
    EXPECT_TRUE(j.contains("control"));
    EXPECT_TRUE(j.contains("barriers"));
    EXPECT_TRUE(j.contains("penalties"));
    if (n < r.controls.size()) EXPECT_EQ(j.at("barriers").size(), 5u);
    ++n;
  }
  EXPECT_EQ(n, r.states.size());
}

TEST(Output, SweepCsv) {
  std::ostringstream os;
  write_sweep_csv(os, {{0.0, 0.1, 300}, {0.5, 0.25, 300}});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "sigma,crash_rate,n");
}
