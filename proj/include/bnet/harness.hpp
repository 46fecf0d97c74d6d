#pragma once

#include "bnet/barriernet.hpp"
#include "bnet/nominal_mpc.hpp"

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace bnet {

/// Everything a policy may look at in one step.
struct StepInput {
  const CurvilinearState* state = nullptr;  // ground truth
  const ReferencePath* path = nullptr;
  const std::vector<Footprint>* obstacles = nullptr;
  const Eigen::VectorXd* obs = nullptr;  // possibly noisy observation
  const ConstraintContext* exact = nullptr;
  Control previous;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual void reset() {}
  virtual PolicyStep act(const StepInput& in) = 0;
  virtual std::string name() const = 0;
};

class BarrierNetPolicy : public Policy {
 public:
  BarrierNetPolicy(std::shared_ptr<const PolicyNetwork> net, PolicyMode mode) : net_(std::move(net)), mode_(mode) {}
  PolicyStep act(const StepInput& in) override;
  std::string name() const override { return "barriernet_" + to_string(mode_); }
  const PolicyNetwork& network() const { return *net_; }

 private:
  std::shared_ptr<const PolicyNetwork> net_;
  PolicyMode mode_;
};

/// Linear state feedback toward the lane center at a target speed.
class TrackingPolicy : public Policy {
 public:
  struct Gains {
    double speed = 1.0;
    double d = 0.6;
    double mu = 2.5;
    double delta = 3.0;
  };
  TrackingPolicy(double target_speed, VehicleParams vehicle, Gains gains);
  TrackingPolicy(double target_speed, VehicleParams vehicle) : TrackingPolicy(target_speed, vehicle, Gains{}) {}
  PolicyStep act(const StepInput& in) override;
  std::string name() const override { return "tracking"; }

 private:
  double target_;
  VehicleParams vp_;
  Gains k_;
};

class ConstantPolicy : public Policy {
 public:
  explicit ConstantPolicy(Control u) : u_(u) {}
  PolicyStep act(const StepInput&) override;
  std::string name() const override { return "constant"; }

 private:
  Control u_;
};

/// The expert run in closed loop on the 5-state model.
class NominalPolicy : public Policy {
 public:
  NominalPolicy(MPCConfig cfg, SafetySetup safety) : cfg_(std::move(cfg)), safety_(std::move(safety)) {}
  void reset() override { warm_.resize(0); }
  PolicyStep act(const StepInput& in) override;
  std::string name() const override { return "nominal_mpc"; }

 private:
  MPCConfig cfg_;
  SafetySetup safety_;
  Eigen::VectorXd warm_;
};

enum class EventKind { Crash, OffLane, QpInfeasible, Completed };
std::string to_string(EventKind kind);

struct Event {
  EventKind kind;
  int step;
  std::string detail;
};

struct RolloutConfig {
  int max_steps = 200;
  NoiseConfig noise;
  ObservationConfig obs;
  SlotConfig slot;
  CoverConfig cover;
  BarrierDefaults barrier;
  VehicleParams vehicle;
  double ego_length = 4.5;
  double ego_width = 1.8;
  double off_lane = 2.0;

  void validate() const;
};

struct RolloutResult {
  std::vector<CurvilinearState> states;
  std::vector<Control> controls;
  /// Per step, per constraint (slots then lane_left, lane_right), at the true state.
  std::vector<std::vector<double>> barriers;
  std::vector<std::vector<double>> psi1;
  std::vector<std::vector<Penalties>> penalties;
  std::vector<double> clearance;  // per step, min over obstacles (inf if none)
  std::vector<Event> events;
  double min_clearance = 0.0;
  bool has_obstacles = false;

  bool crashed() const;
  const Event* terminal() const;
};

/// Minimum distance between two rectangles (center pose, length along the
/// heading, width across it); zero when they overlap.
double clearance(const Pose2& a, double a_length, double a_width, const Pose2& b, double b_length, double b_width);

RolloutResult rollout(Policy& policy, const Scenario& scenario, const RolloutConfig& cfg, std::uint64_t seed);

struct Metrics {
  int episodes = 0;
  int crashes = 0;  // clearance <= 0 or off-lane
  int collisions = 0;
  int off_lane = 0;
  int qp_infeasible = 0;
  double crash_rate = 0.0;
  /// Mean over episodes with obstacles of the per-episode minimum clearance.
  double mean_min_clearance = 0.0;
  double min_clearance = 0.0;
  std::vector<double> thresholds;
  std::vector<double> exceedance;  // P(|d| > threshold), pooled per step
  long steps = 0;
};

struct EvalResult {
  Metrics metrics;
  std::vector<RolloutResult> rollouts;  // only when keep_rollouts
};

Metrics aggregate(const std::vector<RolloutResult>& rollouts, const std::vector<double>& thresholds);

EvalResult evaluate(Policy& policy, const ScenarioDistribution& dist, int episodes, std::uint64_t seed,
                    const RolloutConfig& cfg, bool keep_rollouts = false);

struct SweepRow {
  double sigma = 0.0;
  double crash_rate = 0.0;
  int n = 0;
};

std::vector<SweepRow> noise_sweep(Policy& policy, const ScenarioDistribution& dist, NoiseChannel channel,
                                  const std::vector<double>& sigmas, int episodes, std::uint64_t seed,
                                  const RolloutConfig& cfg);

/// Two-proportion z-test, one-sided p-value for rate2 > rate1.
double two_proportion_p(int crashes1, int n1, int crashes2, int n2);

constexpr int kOutputSchema = 1;
void write_rollout_jsonl(std::ostream& os, const RolloutResult& r);
void write_metrics_json(std::ostream& os, const Metrics& m, const std::string& policy_name);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace bnet
