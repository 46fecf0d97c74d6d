#pragma once

#include "bnet/diffqp.hpp"
#include "bnet/hocbf.hpp"
#include "bnet/network.hpp"
#include "bnet/scenario.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

namespace bnet {

// ---------------------------------------------------------------------------
// Observation

enum class NoiseChannel { D, Mu, V, Delta, Ds, Dobs };

NoiseChannel parse_noise_channel(const std::string& name);
std::string to_string(NoiseChannel channel);

struct NoiseConfig {
  double d = 0.0;
  double mu = 0.0;
  double v = 0.0;
  double delta = 0.0;
  double ds = 0.0;
  double dobs = 0.0;

  double& operator[](NoiseChannel c);
  double operator[](NoiseChannel c) const;
  bool any() const;
};

/// Layout: [d, mu, v, delta, kappa(s + l) for l in lookahead, then per slot
/// (ds, d, r_D, present)]. Slot ds/d are the obstacle footprint center.
struct ObservationConfig {
  int slots = 3;
  std::vector<double> lookahead{0.0, 10.0, 20.0};

  int ego_dim() const { return 4 + static_cast<int>(lookahead.size()); }
  int dim() const { return ego_dim() + 4 * slots; }
  int slot_offset(int slot) const { return ego_dim() + 4 * slot; }
};

struct Observation {
  Eigen::VectorXd z;
  NoiseConfig noise;
};

Observation build_observation(const CurvilinearState& ego, const ReferencePath& path,
                              const std::vector<RankedObstacle>& ranked, const ObservationConfig& cfg,
                              const NoiseConfig& noise = {}, std::mt19937_64* rng = nullptr);

// ---------------------------------------------------------------------------
// Labels

enum LabelField { kLabelV = 0, kLabelDelta, kLabelD, kLabelDobs, kLabelMu, kLabelDs, kLabelA, kLabelOmega };
constexpr int kNumLabels = 8;
extern const std::array<const char*, kNumLabels> kLabelNames;

struct TrainingSample {
  int episode = 0;
  int step = 0;
  Eigen::VectorXd obs;
  std::array<double, kNumLabels> labels{};
  /// Bit i set when label i is valid.
  std::uint32_t mask = (1u << kNumLabels) - 1u;

  bool valid(int field) const { return (mask >> field) & 1u; }
};

// ---------------------------------------------------------------------------
// Policy

double positive_map(double raw);
double positive_map_derivative(double raw);

struct PolicyConfig {
  ObservationConfig obs;
  std::vector<int> hidden{64, 64, 64};
  BarrierDefaults barrier;
  SlotConfig slot;
  CoverConfig cover;
  VehicleParams vehicle;
  double lane_half_width = 2.0;
  Eigen::Vector2d h_diag{1.0, 1.0};
  /// Soft clip magnitudes for the reference control.
  double a_ref_clip = 6.0;
  double omega_ref_clip = 1.0;
  double qp_tol = 1e-8;
  int qp_max_iter = 50;

  int num_constraints() const { return obs.slots + 2; }
  void validate() const;
};

enum class PolicyMode { Estimated, ExactState, NoBarrier };
PolicyMode parse_policy_mode(const std::string& name);
std::string to_string(PolicyMode mode);

/// Ego state and obstacle geometry the constraints are built from.
struct ConstraintContext {
  CurvilinearState ego;
  double kappa = 0.0;
  std::vector<ObstacleDisk> disks;
};

struct HeadOutputs {
  // Denormalized estimates.
  double d = 0.0, dobs = 0.0, mu = 0.0, ds = 0.0, v = 0.0, delta = 0.0;
  Eigen::Vector2d u_ref = Eigen::Vector2d::Zero();
  std::vector<Penalties> penalties;
  std::vector<double> raw_penalties;
};

struct PolicyStep {
  Control control;
  HeadOutputs heads;
  std::vector<BarrierSpec> specs;
  std::vector<HocbfTerms> terms;
  QPStatus status = QPStatus::Optimal;
  bool fallback = false;  // bounds dropped or previous control held
  bool held = false;      // previous control held
};

class PolicyNetwork {
 public:
  PolicyNetwork() = default;
  PolicyNetwork(PolicyConfig config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  PolicyConfig& config() { return config_; }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }

  // Normalization: z_n = (z - in_mean) / in_std; field = label_mean + label_std * raw.
  Eigen::VectorXd in_mean, in_std;
  std::array<double, kNumLabels> label_mean{};
  std::array<double, kNumLabels> label_std{};
  bool normalized = false;

  Mlp::Cache run(const Eigen::VectorXd& obs) const;
  HeadOutputs decode(const Mlp::Cache& cache) const;

  /// QP assembled from a constraint context and head outputs. Constraint rows
  /// are `-LgLf b . u <= constant`.
  QPProblem build_qp(const ConstraintContext& ctx, const HeadOutputs& heads, bool with_bounds,
                     std::vector<BarrierSpec>* specs_out = nullptr, std::vector<HocbfTerms>* terms_out = nullptr) const;

  /// Context rebuilt from network estimates: ego (d, mu, v, delta) and the
  /// nearest obstacle (ds, dobs) from the heads; other slots from the observation.
  ConstraintContext estimated_context(const Eigen::VectorXd& obs, const HeadOutputs& heads, double s) const;
  /// Context from a (possibly noisy) observation plus explicit ego values.
  ConstraintContext context_from_observation(const Eigen::VectorXd& obs, const CurvilinearState& ego) const;

  PolicyStep act(const Eigen::VectorXd& obs, const ConstraintContext& ctx, const Control& previous,
                 PolicyMode mode = PolicyMode::ExactState) const;

 private:
  PolicyConfig config_;
  Mlp mlp_;
};

enum HeadIndex { kHeadState = 0, kHeadKin = 1, kHeadRef = 2, kHeadPenalty = 3 };

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 50;
  int batch_size = 64;
  double grad_clip = 10.0;
  /// Cap on the normalized squared error of ds and dobs.
  double loss_cap = 4.0;
  std::array<double, kNumLabels> weights{1, 1, 1, 1, 1, 1, 1, 1};
  NoiseConfig augment;
  std::uint64_t seed = 7;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double state = 0.0;    // d, dobs, mu, ds
  double kin = 0.0;      // v, delta
  double control = 0.0;  // a, omega on the QP output
  bool qp_ok = true;
  int active = 0;
};

/// Loss of one sample and (optionally) its gradient w.r.t. the flat network
/// parameters. The QP uses constraints built from the label state and no
/// control bounds.
LossBreakdown sample_loss(const PolicyNetwork& net, const TrainingSample& sample, const TrainConfig& cfg,
                          Eigen::VectorXd* grad = nullptr, const Eigen::VectorXd* obs_override = nullptr);

/// Constraint context built from a sample's labels (ego, nearest obstacle)
/// and observation (curvature, remaining slots).
ConstraintContext label_context(const PolicyNetwork& net, const TrainingSample& sample);

struct LossRow {
  int epoch = 0;
  int batch = 0;
  LossBreakdown loss;
  int skipped = 0;
};

struct TrainResult {
  std::vector<LossRow> rows;
  std::vector<double> epoch_mean;
  double initial_loss = 0.0;
  int skipped_infeasible = 0;
};

/// Fits normalization statistics from the dataset.
void fit_normalization(PolicyNetwork& net, const std::vector<TrainingSample>& data);

double mean_loss(const PolicyNetwork& net, const std::vector<TrainingSample>& data, const TrainConfig& cfg);

TrainResult train(PolicyNetwork& net, const std::vector<TrainingSample>& data, const TrainConfig& cfg);

void write_loss_csv(std::ostream& os, const TrainResult& result);

// ---------------------------------------------------------------------------
// Checkpoint

constexpr int kCheckpointSchema = 1;
void save_checkpoint(const PolicyNetwork& net, const std::string& path);
PolicyNetwork load_checkpoint(const std::string& path);

}  // namespace bnet
