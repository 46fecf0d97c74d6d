#pragma once

#include "bnet/harness.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace bnet {

constexpr int kConfigSchema = 1;

/// Everything the CLI reads from `--config`. Missing keys keep their
/// defaults; unknown keys are rejected.
struct AppConfig {
  PolicyConfig policy;
  TrainConfig train;
  MPCConfig mpc;
  DatasetSpec dataset;
  RolloutConfig rollout;
  ScenarioDistribution eval_scenarios;
  int eval_episodes = 100;
  std::vector<double> sweep_sigmas{0.0, 0.05, 0.1, 0.2, 0.4};
  std::string sweep_channel = "d";

  SafetySetup safety() const;
  /// Copies shared geometry from the policy section into the others.
  void sync();
};

void to_json(nlohmann::json& j, const Bounds& v);
void from_json(const nlohmann::json& j, Bounds& v);
void to_json(nlohmann::json& j, const VehicleParams& v);
void from_json(const nlohmann::json& j, VehicleParams& v);
void to_json(nlohmann::json& j, const ClassK& v);
void from_json(const nlohmann::json& j, ClassK& v);
void to_json(nlohmann::json& j, const BarrierDefaults& v);
void from_json(const nlohmann::json& j, BarrierDefaults& v);
void to_json(nlohmann::json& j, const SlotConfig& v);
void from_json(const nlohmann::json& j, SlotConfig& v);
void to_json(nlohmann::json& j, const CoverConfig& v);
void from_json(const nlohmann::json& j, CoverConfig& v);
void to_json(nlohmann::json& j, const ObservationConfig& v);
void from_json(const nlohmann::json& j, ObservationConfig& v);
void to_json(nlohmann::json& j, const NoiseConfig& v);
void from_json(const nlohmann::json& j, NoiseConfig& v);
void to_json(nlohmann::json& j, const PolicyConfig& v);
void from_json(const nlohmann::json& j, PolicyConfig& v);
void to_json(nlohmann::json& j, const TrainConfig& v);
void from_json(const nlohmann::json& j, TrainConfig& v);
void to_json(nlohmann::json& j, const ScenarioDistribution& v);
void from_json(const nlohmann::json& j, ScenarioDistribution& v);
void to_json(nlohmann::json& j, const MPCConfig& v);
void from_json(const nlohmann::json& j, MPCConfig& v);
void to_json(nlohmann::json& j, const DatasetSpec& v);
void from_json(const nlohmann::json& j, DatasetSpec& v);
void to_json(nlohmann::json& j, const RolloutConfig& v);
void from_json(const nlohmann::json& j, RolloutConfig& v);
void to_json(nlohmann::json& j, const AppConfig& v);
void from_json(const nlohmann::json& j, AppConfig& v);

AppConfig load_app_config(const std::string& path);
nlohmann::json read_json_file(const std::string& path);

}  // namespace bnet
