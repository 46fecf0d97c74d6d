#include "bnet/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace bnet {

using nlohmann::json;

namespace {

// Reads named fields from an object, leaving absent ones untouched, and
// rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, const char* where) : j_(j), where_(where) {
    if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
  }
  template <class T>
  Reader& operator()(const char* key, T& value) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) {
      try {
        it->get_to(value);
      } catch (const json::exception& e) {
        throw std::invalid_argument(std::string(where_) + "." + key + ": " + e.what());
      }
    }
    return *this;
  }
  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (it.key() != "schema_version" && !seen_.count(it.key())) {
        throw std::invalid_argument(std::string(where_) + ": unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  const char* where_;
  std::set<std::string> seen_;
};

}  // namespace

void to_json(json& j, const Bounds& v) { j = json::array({v.min, v.max}); }
void from_json(const json& j, Bounds& v) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("bounds must be [min, max]");
  v.min = j[0].get<double>();
  v.max = j[1].get<double>();
}

void to_json(json& j, const VehicleParams& v) {
  j = {{"l_r", v.l_r}, {"l_f", v.l_f}, {"a_bounds", v.a_bounds}, {"omega_bounds", v.omega_bounds},
       {"jerk_bounds", v.jerk_bounds}, {"steer_acc_bounds", v.steer_acc_bounds}, {"dt", v.dt}};
}
void from_json(const json& j, VehicleParams& v) {
  Reader(j, "vehicle")("l_r", v.l_r)("l_f", v.l_f)("a_bounds", v.a_bounds)("omega_bounds", v.omega_bounds)(
      "jerk_bounds", v.jerk_bounds)("steer_acc_bounds", v.steer_acc_bounds)("dt", v.dt)
      .done();
}

void to_json(json& j, const ClassK& v) {
  j = {{"kind", v.kind == ClassK::Kind::Linear ? "linear" : "power"}, {"gain", v.gain}, {"power", v.power}};
}
void from_json(const json& j, ClassK& v) {
  std::string kind = v.kind == ClassK::Kind::Linear ? "linear" : "power";
  Reader(j, "class_k")("kind", kind)("gain", v.gain)("power", v.power).done();
  if (kind == "linear") {
    v.kind = ClassK::Kind::Linear;
  } else if (kind == "power") {
    v.kind = ClassK::Kind::Power;
  } else {
    throw std::invalid_argument("class_k.kind must be 'linear' or 'power'");
  }
}

void to_json(json& j, const BarrierDefaults& v) {
  j = {{"d_lf", v.d_lf}, {"alpha1", v.alpha1}, {"alpha2", v.alpha2}};
}
void from_json(const json& j, BarrierDefaults& v) {
  Reader(j, "barrier")("d_lf", v.d_lf)("alpha1", v.alpha1)("alpha2", v.alpha2).done();
}

void to_json(json& j, const SlotConfig& v) {
  j = {{"slots", v.slots},           {"parked_radius", v.parked_radius}, {"parked_gap", v.parked_gap},
       {"parked_gain", v.parked_gain}, {"sensing_range", v.sensing_range}, {"behind_range", v.behind_range}};
}
void from_json(const json& j, SlotConfig& v) {
  Reader(j, "slot")("slots", v.slots)("parked_radius", v.parked_radius)("parked_gap", v.parked_gap)(
      "parked_gain", v.parked_gain)("sensing_range", v.sensing_range)("behind_range", v.behind_range)
      .done();
}

void to_json(json& j, const CoverConfig& v) {
  j = {{"ego_length", v.ego_length}, {"ego_width", v.ego_width}, {"margin", v.margin},
       {"offset", v.offset},         {"min_radius", v.min_radius}};
}
void from_json(const json& j, CoverConfig& v) {
  Reader(j, "cover")("ego_length", v.ego_length)("ego_width", v.ego_width)("margin", v.margin)("offset", v.offset)(
      "min_radius", v.min_radius)
      .done();
}

void to_json(json& j, const ObservationConfig& v) { j = {{"slots", v.slots}, {"lookahead", v.lookahead}}; }
void from_json(const json& j, ObservationConfig& v) {
  Reader(j, "obs")("slots", v.slots)("lookahead", v.lookahead).done();
}

void to_json(json& j, const NoiseConfig& v) {
  j = {{"d", v.d}, {"mu", v.mu}, {"v", v.v}, {"delta", v.delta}, {"ds", v.ds}, {"dobs", v.dobs}};
}
void from_json(const json& j, NoiseConfig& v) {
  Reader(j, "noise")("d", v.d)("mu", v.mu)("v", v.v)("delta", v.delta)("ds", v.ds)("dobs", v.dobs).done();
}

void to_json(json& j, const PolicyConfig& v) {
  j = {{"obs", v.obs},
       {"hidden", v.hidden},
       {"barrier", v.barrier},
       {"slot", v.slot},
       {"cover", v.cover},
       {"vehicle", v.vehicle},
       {"lane_half_width", v.lane_half_width},
       {"h_diag", {v.h_diag(0), v.h_diag(1)}},
       {"a_ref_clip", v.a_ref_clip},
       {"omega_ref_clip", v.omega_ref_clip},
       {"qp_tol", v.qp_tol},
       {"qp_max_iter", v.qp_max_iter}};
}
void from_json(const json& j, PolicyConfig& v) {
  std::array<double, 2> h{v.h_diag(0), v.h_diag(1)};
  Reader(j, "policy")("obs", v.obs)("hidden", v.hidden)("barrier", v.barrier)("slot", v.slot)("cover", v.cover)(
      "vehicle", v.vehicle)("lane_half_width", v.lane_half_width)("h_diag", h)("a_ref_clip", v.a_ref_clip)(
      "omega_ref_clip", v.omega_ref_clip)("qp_tol", v.qp_tol)("qp_max_iter", v.qp_max_iter)
      .done();
  v.h_diag = Eigen::Vector2d(h[0], h[1]);
}

void to_json(json& j, const TrainConfig& v) {
  j = {{"learning_rate", v.learning_rate}, {"epochs", v.epochs},     {"batch_size", v.batch_size},
       {"grad_clip", v.grad_clip},         {"loss_cap", v.loss_cap}, {"weights", v.weights},
       {"augment", v.augment},             {"seed", v.seed}};
}
void from_json(const json& j, TrainConfig& v) {
  Reader(j, "train")("learning_rate", v.learning_rate)("epochs", v.epochs)("batch_size", v.batch_size)(
      "grad_clip", v.grad_clip)("loss_cap", v.loss_cap)("weights", v.weights)("augment", v.augment)("seed", v.seed)
      .done();
}

void to_json(json& j, const ScenarioDistribution& v) {
  j = {{"kind", v.kind == ScenarioKind::Obstacle ? "obstacle" : "lane_keeping"},
       {"straight_length", v.straight_length},
       {"oval_straight", v.oval_straight},
       {"oval_radius", v.oval_radius},
       {"lane_half_width", v.lane_half_width},
       {"ego_s0", v.ego_s0},
       {"ego_d", v.ego_d},
       {"ego_mu", v.ego_mu},
       {"ego_v", v.ego_v},
       {"obstacle_probability", v.obstacle_probability},
       {"max_obstacles", v.max_obstacles},
       {"obs_ahead", v.obs_ahead},
       {"obs_abs_d", v.obs_abs_d},
       {"obs_length", v.obs_length},
       {"obs_width", v.obs_width},
       {"slots", v.slots}};
}
void from_json(const json& j, ScenarioDistribution& v) {
  std::string kind = v.kind == ScenarioKind::Obstacle ? "obstacle" : "lane_keeping";
  Reader(j, "scenario")("kind", kind)("straight_length", v.straight_length)("oval_straight", v.oval_straight)(
      "oval_radius", v.oval_radius)("lane_half_width", v.lane_half_width)("ego_s0", v.ego_s0)("ego_d", v.ego_d)(
      "ego_mu", v.ego_mu)("ego_v", v.ego_v)("obstacle_probability", v.obstacle_probability)(
      "max_obstacles", v.max_obstacles)("obs_ahead", v.obs_ahead)("obs_abs_d", v.obs_abs_d)(
      "obs_length", v.obs_length)("obs_width", v.obs_width)("slots", v.slots)
      .done();
  if (kind == "obstacle") {
    v.kind = ScenarioKind::Obstacle;
  } else if (kind == "lane_keeping") {
    v.kind = ScenarioKind::LaneKeeping;
  } else {
    throw std::invalid_argument("scenario.kind must be 'obstacle' or 'lane_keeping'");
  }
}

void to_json(json& j, const MPCConfig& v) {
  j = {{"horizon", v.horizon},       {"dt", v.dt},
       {"w_lateral", v.w_lateral},   {"w_heading", v.w_heading},
       {"w_speed", v.w_speed},       {"w_jerk", v.w_jerk},
       {"w_steer", v.w_steer},       {"w_accel", v.w_accel},
       {"w_omega", v.w_omega},       {"w_barrier", v.w_barrier},
       {"margin", v.margin},         {"w_hocbf", v.w_hocbf},
       {"hocbf_margin", v.hocbf_margin}, {"w_bounds", v.w_bounds},
       {"target_speed", v.target_speed}, {"max_iter", v.max_iter}, {"rescue_iter", v.rescue_iter},
       {"grad_tol", v.grad_tol},     {"fd_step", v.fd_step},
       {"seed", v.seed}};
}
void from_json(const json& j, MPCConfig& v) {
  Reader(j, "mpc")("horizon", v.horizon)("dt", v.dt)("w_lateral", v.w_lateral)("w_heading", v.w_heading)(
      "w_speed", v.w_speed)("w_jerk", v.w_jerk)("w_steer", v.w_steer)("w_accel", v.w_accel)("w_omega", v.w_omega)(
      "w_barrier", v.w_barrier)("margin", v.margin)("w_hocbf", v.w_hocbf)("hocbf_margin", v.hocbf_margin)(
      "w_bounds", v.w_bounds)("target_speed", v.target_speed)("max_iter", v.max_iter)("rescue_iter", v.rescue_iter)("grad_tol", v.grad_tol)(
      "fd_step", v.fd_step)("seed", v.seed)
      .done();
}

void to_json(json& j, const DatasetSpec& v) {
  j = {{"episodes", v.episodes}, {"steps", v.steps},       {"obstacle", v.obstacle},
       {"lane", v.lane},         {"lane_fraction", v.lane_fraction}, {"noise", v.noise},
       {"obs", v.obs},           {"max_reject_fraction", v.max_reject_fraction}};
}
void from_json(const json& j, DatasetSpec& v) {
  Reader(j, "dataset")("episodes", v.episodes)("steps", v.steps)("obstacle", v.obstacle)("lane", v.lane)(
      "lane_fraction", v.lane_fraction)("noise", v.noise)("obs", v.obs)("max_reject_fraction", v.max_reject_fraction)
      .done();
}

void to_json(json& j, const RolloutConfig& v) {
  j = {{"max_steps", v.max_steps}, {"noise", v.noise},     {"obs", v.obs},
       {"slot", v.slot},           {"cover", v.cover},     {"barrier", v.barrier},
       {"vehicle", v.vehicle},     {"ego_length", v.ego_length}, {"ego_width", v.ego_width},
       {"off_lane", v.off_lane}};
}
void from_json(const json& j, RolloutConfig& v) {
  Reader(j, "rollout")("max_steps", v.max_steps)("noise", v.noise)("obs", v.obs)("slot", v.slot)("cover", v.cover)(
      "barrier", v.barrier)("vehicle", v.vehicle)("ego_length", v.ego_length)("ego_width", v.ego_width)(
      "off_lane", v.off_lane)
      .done();
}

void to_json(json& j, const AppConfig& v) {
  j = {{"schema_version", kConfigSchema},
       {"policy", v.policy},
       {"train", v.train},
       {"mpc", v.mpc},
       {"dataset", v.dataset},
       {"rollout", v.rollout},
       {"eval_scenarios", v.eval_scenarios},
       {"eval_episodes", v.eval_episodes},
       {"sweep_sigmas", v.sweep_sigmas},
       {"sweep_channel", v.sweep_channel}};
}
void from_json(const json& j, AppConfig& v) {
  if (auto it = j.find("schema_version"); it != j.end() && it->get<int>() != kConfigSchema) {
    throw std::invalid_argument("config: unsupported schema_version " + it->dump());
  }
  Reader(j, "config")("policy", v.policy)("train", v.train)("mpc", v.mpc)("dataset", v.dataset)(
      "rollout", v.rollout)("eval_scenarios", v.eval_scenarios)("eval_episodes", v.eval_episodes)(
      "sweep_sigmas", v.sweep_sigmas)("sweep_channel", v.sweep_channel)
      .done();
}

SafetySetup AppConfig::safety() const { return {policy.barrier, policy.slot, policy.cover, policy.vehicle}; }

void AppConfig::sync() {
  rollout.obs = policy.obs;
  rollout.slot = policy.slot;
  rollout.cover = policy.cover;
  rollout.barrier = policy.barrier;
  rollout.vehicle = policy.vehicle;
  dataset.obs = policy.obs;
  dataset.obstacle.slots = policy.obs.slots;
  dataset.lane.slots = policy.obs.slots;
  eval_scenarios.slots = policy.obs.slots;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

AppConfig load_app_config(const std::string& path) {
  AppConfig cfg;
  if (!path.empty()) cfg = read_json_file(path).get<AppConfig>();
  cfg.sync();
  return cfg;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json layer_json(const std::string& name, const Dense& l) {
  std::vector<double> w;
  w.reserve(l.W.size());
  for (int r = 0; r < l.out(); ++r) {
    for (int c = 0; c < l.in(); ++c) w.push_back(l.W(r, c));
  }
  return {{"name", name}, {"rows", l.out()}, {"cols", l.in()}, {"weights", w},
          {"bias", std::vector<double>(l.b.data(), l.b.data() + l.b.size())}};
}

void read_layer(const json& j, const std::string& name, Dense& l) {
  if (j.at("name").get<std::string>() != name) throw std::runtime_error("checkpoint: expected layer " + name);
  const int rows = j.at("rows").get<int>(), cols = j.at("cols").get<int>();
  if (rows != l.out() || cols != l.in()) throw std::runtime_error("checkpoint: layer " + name + " has wrong shape");
  const auto w = j.at("weights").get<std::vector<double>>();
  const auto b = j.at("bias").get<std::vector<double>>();
  if (static_cast<int>(w.size()) != rows * cols || static_cast<int>(b.size()) != rows) {
    throw std::runtime_error("checkpoint: layer " + name + " has wrong size");
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) l.W(r, c) = w[static_cast<std::size_t>(r) * cols + c];
    l.b(r) = b[r];
  }
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void save_checkpoint(const PolicyNetwork& net, const std::string& path) {
  json layers = json::array();
  const auto& trunk = net.mlp().trunk();
  const auto& heads = net.mlp().heads();
  for (std::size_t i = 0; i < trunk.size(); ++i) layers.push_back(layer_json("trunk_" + std::to_string(i), trunk[i]));
  for (std::size_t i = 0; i < heads.size(); ++i) layers.push_back(layer_json("head_" + std::to_string(i), heads[i]));
  json j = {{"schema_version", kCheckpointSchema},
            {"config", net.config()},
            {"normalization",
             {{"normalized", net.normalized},
              {"in_mean", to_vec(net.in_mean)},
              {"in_std", to_vec(net.in_std)},
              {"label_mean", net.label_mean},
              {"label_std", net.label_std}}},
            {"layers", layers}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

PolicyNetwork load_checkpoint(const std::string& path) {
  const json j = read_json_file(path);
  if (j.value("schema_version", -1) != kCheckpointSchema) {
    throw std::runtime_error("checkpoint: unsupported schema_version in " + path);
  }
  PolicyNetwork net(j.at("config").get<PolicyConfig>(), 0);
  const auto& n = j.at("normalization");
  net.normalized = n.at("normalized").get<bool>();
  const auto mean = n.at("in_mean").get<std::vector<double>>();
  const auto sd = n.at("in_std").get<std::vector<double>>();
  if (static_cast<int>(mean.size()) != net.config().obs.dim() || mean.size() != sd.size()) {
    throw std::runtime_error("checkpoint: normalization has wrong size");
  }
  net.in_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  net.in_std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  net.label_mean = n.at("label_mean").get<std::array<double, kNumLabels>>();
  net.label_std = n.at("label_std").get<std::array<double, kNumLabels>>();
  const auto& layers = j.at("layers");
  auto& trunk = net.mlp().trunk();
  auto& heads = net.mlp().heads();
  if (layers.size() != trunk.size() + heads.size()) throw std::runtime_error("checkpoint: wrong layer count");
  std::size_t k = 0;
  for (std::size_t i = 0; i < trunk.size(); ++i) read_layer(layers[k++], "trunk_" + std::to_string(i), trunk[i]);
  for (std::size_t i = 0; i < heads.size(); ++i) read_layer(layers[k++], "head_" + std::to_string(i), heads[i]);
  return net;
}

}  // namespace bnet
