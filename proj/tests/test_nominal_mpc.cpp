#include "bnet/nominal_mpc.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace bnet;

namespace {

DatasetSpec small_spec(int episodes, int steps) {
  DatasetSpec spec;
  spec.episodes = episodes;
  spec.steps = steps;
  return spec;
}

}  // namespace

TEST(NmpcSolve, CenteredAtTargetSpeedIsAlreadyOptimal) {
  const MPCConfig cfg;
  const CurvilinearState x{20.0, 0.0, 0.0, cfg.target_speed, 0.0};
  const auto r = nmpc_solve(x, ReferencePath::straight(400.0), {}, cfg);
  ASSERT_TRUE(r.safe) << r.reject_reason;
  EXPECT_LE(r.label.vec().norm(), 1e-3);
}

TEST(NmpcSolve, LateralOffsetSteersTowardCenter) {
  const MPCConfig cfg;
  for (double d : {1.0, -1.0}) {
    const CurvilinearState x{20.0, d, 0.0, cfg.target_speed, 0.0};
    const auto r = nmpc_solve(x, ReferencePath::straight(400.0), {}, cfg);
    ASSERT_TRUE(r.safe) << r.reject_reason;
    EXPECT_LT(r.label.omega * d, 0.0);
  }
}

TEST(NmpcSolve, ObstacleAheadSafeAndNearCemOracle) {
  const MPCConfig cfg;
  const SafetySetup safety;
  const auto path = ReferencePath::straight(400.0);
  const CurvilinearState x{20.0, 0.0, 0.0, cfg.target_speed, 0.0};
  const std::vector<Footprint> obs{{50.0, 0.0, 4.5, 1.8}};
  const auto r = nmpc_solve(x, path, obs, cfg, safety);
  ASSERT_TRUE(r.safe) << r.reject_reason;

  // Re-simulate the returned sequence and check the obstacle barrier.
  CurvilinearState y = x;
  for (int k = 0; k < cfg.horizon; ++k) {
    y = step_rk4_mpc(y, {r.controls(2 * k), r.controls(2 * k + 1)}, path, safety.vehicle, cfg.dt);
    const auto disks = sort_and_slot(y, obs, path, safety.slot, safety.cover);
    ASSERT_FALSE(disks[0].parked);
    const auto specs = make_barrier_specs(disks, safety.barrier, safety.slot);
    EXPECT_GT(barrier_value(specs[0], y), 0.0) << "step " << k;
  }

  auto f = [&](const Eigen::VectorXd& u) { return nmpc_cost(x, path, obs, cfg, safety, u); };
  EXPECT_NEAR(f(r.controls), r.cost, 1e-9 * (1.0 + r.cost));
  const Eigen::VectorXd mean = Eigen::VectorXd::Zero(2 * cfg.horizon);
  const Eigen::VectorXd sigma = Eigen::VectorXd::Constant(2 * cfg.horizon, 1.0);
  const double cem = oracle::cem_minimize(f, mean, sigma, 2000, 10, 100, 17);
  EXPECT_LE(r.cost, 1.05 * cem) << "nmpc " << r.cost << " cem " << cem;
}

TEST(NmpcSolve, DeterministicAndRejectsBadConfig) {
  const MPCConfig cfg;
  const CurvilinearState x{20.0, 0.4, 0.05, 7.5, 0.0};
  const std::vector<Footprint> obs{{55.0, 1.5}};
  const auto a = nmpc_solve(x, ReferencePath::straight(400.0), obs, cfg);
  const auto b = nmpc_solve(x, ReferencePath::straight(400.0), obs, cfg);
  EXPECT_EQ(a.controls, b.controls);
  MPCConfig bad;
  bad.horizon = 0;
  EXPECT_THROW(nmpc_solve(x, ReferencePath::straight(400.0), {}, bad), std::invalid_argument);
}

TEST(NmpcClosedLoop, EmptyRoadConverges) {
  const MPCConfig cfg;
  const SafetySetup safety;
  const auto path = ReferencePath::straight(1000.0);
  for (double d0 : {1.0, -0.7}) {
    CurvilinearState x{20.0, d0, 0.0, cfg.target_speed, 0.0};
    Eigen::VectorXd warm;
    bool converged = false;
    for (int k = 0; k < 100 && !converged; ++k) {
      const auto r = nmpc_solve(x, path, {}, cfg, safety, warm.size() ? &warm : nullptr);
      ASSERT_TRUE(r.safe) << r.reject_reason;
      x = step_rk4_mpc(x, {r.controls(0), r.controls(1)}, path, safety.vehicle, cfg.dt);
      warm = r.controls;
      converged = std::abs(x.d) < 0.05;
    }
    EXPECT_TRUE(converged) << "d0 " << d0 << " final d " << x.d;
  }
}

TEST(CheckLabel, FlagsUnsafeLabels) {
  const SafetySetup safety;
  const auto path = ReferencePath::straight(400.0);
  const CurvilinearState x{100.0, 1.7, 0.25, 10.0, 0.2};
  EXPECT_FALSE(check_label(x, {0.0, 0.5}, path, {}, safety).empty());
  EXPECT_FALSE(check_label(x, {100.0, 0.0}, path, {}, safety).empty());
  EXPECT_TRUE(check_label(CurvilinearState{100, 0, 0, 8, 0}, {0.0, 0.0}, path, {}, safety).empty());
}

TEST(GenerateDataset, ZeroEpisodesGivesEmpty) {
  EXPECT_TRUE(generate_dataset(small_spec(0, 10), MPCConfig{}).empty());
}

TEST(GenerateDataset, NoObstaclesMasksObstacleLabels) {
  auto spec = small_spec(3, 8);
  spec.obstacle.obstacle_probability = 0.0;
  spec.lane_fraction = 0.0;
  const auto data = generate_dataset(spec, MPCConfig{});
  ASSERT_FALSE(data.empty());
  for (const auto& s : data) {
    EXPECT_FALSE(s.valid(kLabelDs));
    EXPECT_FALSE(s.valid(kLabelDobs));
    EXPECT_TRUE(s.valid(kLabelA));
  }
}

TEST(GenerateDataset, LabelsPassIndependentRecheck) {
  const auto spec = small_spec(6, 30);
  DatasetStats st;
  const auto data = generate_dataset(spec, MPCConfig{}, SafetySetup{}, &st);
  EXPECT_EQ(st.samples, static_cast<int>(data.size()));
  const PolicyConfig pc;
  int failed = 0;
  for (const auto& s : data) {
    const auto why = oracle::recheck_sample(s, pc, spec.obstacle.obs_length, spec.obstacle.obs_width);
    if (!why.empty()) {
      ++failed;
      ADD_FAILURE() << "episode " << s.episode << " step " << s.step << ": " << why;
      if (failed > 5) break;
    }
  }
  EXPECT_EQ(failed, 0);
}

TEST(GenerateDataset, DeterministicAndCsvRoundTrip) {
  const auto spec = small_spec(2, 12);
  MPCConfig cfg;
  cfg.seed = 99;
  const auto a = generate_dataset(spec, cfg);
  const auto b = generate_dataset(spec, cfg);
  std::ostringstream oa, ob;
  write_dataset_csv(oa, a, spec.obs.dim());
  write_dataset_csv(ob, b, spec.obs.dim());
  EXPECT_EQ(oa.str(), ob.str());

  const std::string text = oa.str();
  std::string header = text.substr(0, text.find('\n'));
  EXPECT_EQ(header.rfind("episode,step,obs_0,", 0), 0u);
  EXPECT_NE(header.find(",obs_18,label_v,label_delta,label_d,label_dobs,label_mu,label_ds,label_a,label_omega,mask_bits"),
            std::string::npos);

  std::istringstream in(text);
  const auto back = read_dataset_csv(in);
  ASSERT_EQ(back.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(back[i].obs, a[i].obs);
    EXPECT_EQ(back[i].labels, a[i].labels);
    EXPECT_EQ(back[i].mask, a[i].mask);
  }
}

TEST(DeriveSeed, DistinctStreams) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
  EXPECT_EQ(derive_seed(5, 3, 2), derive_seed(5, 3, 2));
}
