#pragma once

#include "bnet/barriernet.hpp"
#include "bnet/dynamics.hpp"
#include "bnet/scenario.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bnet {

struct MPCConfig {
  int horizon = 20;
  double dt = 0.1;
  double w_lateral = 10.0;
  double w_heading = 5.0;
  double w_speed = 1.0;
  double w_jerk = 0.1;
  double w_steer = 0.1;
  double w_accel = 0.05;
  double w_omega = 0.5;
  /// Hinge weight on barriers measured as a clearance in meters.
  double w_barrier = 2000.0;
  /// Required clearance to lane bounds and disks inside the horizon (m).
  double margin = 0.1;
  /// Hinge weight on negative HOCBF slack (unit penalties).
  double w_hocbf = 2000.0;
  double hocbf_margin = 0.05;
  double w_bounds = 2000.0;
  double target_speed = 8.0;
  int max_iter = 30;
  /// Extra iterations granted when the first pass fails the safety checks.
  int rescue_iter = 150;
  double grad_tol = 1e-4;
  double fd_step = 1e-6;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Geometry and barrier settings shared by the expert and the learner.
struct SafetySetup {
  BarrierDefaults barrier;
  SlotConfig slot;
  CoverConfig cover;
  VehicleParams vehicle;
};

struct MPCResult {
  Eigen::VectorXd controls;  // (jerk, steer_acc) per step, 2 * horizon
  std::vector<CurvilinearState> predicted;  // horizon + 1 states
  Control label;  // (a, omega) after the first step
  double cost = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool safe = false;
  std::string reject_reason;
};

MPCResult nmpc_solve(const CurvilinearState& state7, const ReferencePath& path, const std::vector<Footprint>& obstacles,
                     const MPCConfig& config, const SafetySetup& safety = {},
                     const Eigen::VectorXd* warm_start = nullptr);

/// Cost the solver minimizes, for a (jerk, steer_acc) sequence of length
/// 2 * horizon. Returns 1e12 when the rollout leaves the model's domain.
double nmpc_cost(const CurvilinearState& state7, const ReferencePath& path, const std::vector<Footprint>& obstacles,
                 const MPCConfig& config, const SafetySetup& safety, const Eigen::VectorXd& controls);

/// Independent check that a label is admissible at a recorded state: control
/// bounds and nonnegative HOCBF slack (unit penalties) for every slot and lane
/// constraint. Returns an empty string when it passes.
std::string check_label(const CurvilinearState& state, const Control& label, const ReferencePath& path,
                        const std::vector<Footprint>& obstacles, const SafetySetup& safety);

struct DatasetSpec {
  int episodes = 100;
  int steps = 100;
  ScenarioDistribution obstacle{};
  ScenarioDistribution lane{ScenarioKind::LaneKeeping};
  /// Fraction of episodes drawn from the lane-keeping distribution.
  double lane_fraction = 0.3;
  NoiseConfig noise;
  ObservationConfig obs;
  double max_reject_fraction = 0.5;

  void validate() const;
};

struct DatasetStats {
  int attempts = 0;
  int rejected = 0;
  int samples = 0;
};

std::vector<TrainingSample> generate_dataset(const DatasetSpec& spec, const MPCConfig& config,
                                             const SafetySetup& safety = {}, DatasetStats* stats = nullptr);

/// Mixes a master seed with stream indices (splitmix64).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

constexpr int kDatasetSchema = 1;
void write_dataset_csv(std::ostream& os, const std::vector<TrainingSample>& data, int obs_dim);
std::vector<TrainingSample> read_dataset_csv(std::istream& is);

}  // namespace bnet
