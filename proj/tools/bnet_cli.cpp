#include "bnet/config.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bnet;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = "out";
};

struct PolicyArgs {
  std::string kind = "barriernet";
  std::string checkpoint;
  std::string mode = "estimated";
};

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

void write_meta(const fs::path& file, const std::string& kind, const Globals& g, json extra) {
  json j = {{"schema_version", kOutputSchema}, {"kind", kind}, {"seed", g.seed}, {"file", file.filename().string()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  fs::path meta = file;
  meta.replace_extension(".meta.json");
  open_out(meta) << j.dump(2) << '\n';
}

void add_policy_options(CLI::App* cmd, PolicyArgs& p) {
  cmd->add_option("--policy", p.kind, "barriernet, tracking or nominal")
      ->check(CLI::IsMember({"barriernet", "tracking", "nominal"}));
  cmd->add_option("--checkpoint", p.checkpoint, "checkpoint JSON (barriernet policy)");
  cmd->add_option("--mode", p.mode, "estimated, exact or no_barrier");
}

std::unique_ptr<Policy> make_policy(const PolicyArgs& p, AppConfig& cfg) {
  if (p.kind == "tracking") return std::make_unique<TrackingPolicy>(cfg.mpc.target_speed, cfg.policy.vehicle);
  if (p.kind == "nominal") return std::make_unique<NominalPolicy>(cfg.mpc, cfg.safety());
  if (p.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required for the barriernet policy");
  auto net = std::make_shared<PolicyNetwork>(load_checkpoint(p.checkpoint));
  // The checkpoint's geometry wins over the config file.
  cfg.policy = net->config();
  cfg.sync();
  return std::make_unique<BarrierNetPolicy>(net, parse_policy_mode(p.mode));
}

ScenarioDistribution pick_scenarios(const AppConfig& cfg, const std::string& kind) {
  ScenarioDistribution d = cfg.eval_scenarios;
  if (kind == "obstacle") d.kind = ScenarioKind::Obstacle;
  if (kind == "lane_keeping") d.kind = ScenarioKind::LaneKeeping;
  return d;
}

int run_gen_data(const Globals& g, int episodes, int steps) {
  AppConfig cfg = load_app_config(g.config);
  if (episodes >= 0) cfg.dataset.episodes = episodes;
  if (steps > 0) cfg.dataset.steps = steps;
  cfg.mpc.seed = g.seed;
  DatasetStats st;
  const auto data = generate_dataset(cfg.dataset, cfg.mpc, cfg.safety(), &st);
  const fs::path file = fs::path(g.out) / "dataset.csv";
  auto os = open_out(file);
  write_dataset_csv(os, data, cfg.dataset.obs.dim());
  write_meta(file, "dataset", g,
             {{"dataset_schema_version", kDatasetSchema},
              {"samples", st.samples},
              {"attempts", st.attempts},
              {"rejected", st.rejected},
              {"config", cfg}});
  std::cout << "wrote " << st.samples << " samples (" << st.rejected << "/" << st.attempts << " episodes rejected) to "
            << file.string() << '\n';
  return 0;
}

int run_train(const Globals& g, const std::string& data_path, int epochs) {
  AppConfig cfg = load_app_config(g.config);
  if (epochs >= 0) cfg.train.epochs = epochs;
  cfg.train.seed = g.seed;
  std::ifstream in(data_path);
  if (!in) throw std::runtime_error("cannot open " + data_path);
  const auto data = read_dataset_csv(in);
  PolicyNetwork net(cfg.policy, g.seed);
  const auto res = train(net, data, cfg.train);
  const fs::path ckpt = fs::path(g.out) / "checkpoint.json";
  fs::create_directories(ckpt.parent_path());
  save_checkpoint(net, ckpt.string());
  const fs::path loss = fs::path(g.out) / "loss.csv";
  auto os = open_out(loss);
  write_loss_csv(os, res);
  write_meta(loss, "loss", g,
             {{"initial_loss", res.initial_loss},
              {"epoch_mean", res.epoch_mean},
              {"skipped_infeasible", res.skipped_infeasible},
              {"samples", data.size()},
              {"train", cfg.train}});
  std::cout << "initial loss " << res.initial_loss << ", final epoch loss "
            << (res.epoch_mean.empty() ? res.initial_loss : res.epoch_mean.back()) << "; checkpoint " << ckpt.string()
            << '\n';
  return 0;
}

int run_rollout(const Globals& g, const PolicyArgs& pa, const std::string& kind, int episode) {
  AppConfig cfg = load_app_config(g.config);
  auto policy = make_policy(pa, cfg);
  const auto dist = pick_scenarios(cfg, kind);
  std::mt19937_64 rng(derive_seed(g.seed, static_cast<std::uint64_t>(episode)));
  const Scenario sc = dist.sample(rng);
  const auto r = rollout(*policy, sc, cfg.rollout, derive_seed(g.seed, static_cast<std::uint64_t>(episode), 1));
  const fs::path file = fs::path(g.out) / "rollout.jsonl";
  auto os = open_out(file);
  write_rollout_jsonl(os, r);
  json obstacles = json::array();
  for (const auto& o : sc.obstacles) obstacles.push_back({{"s", o.s}, {"d", o.d}, {"length", o.length}, {"width", o.width}});
  write_meta(file, "rollout", g, {{"policy", policy->name()}, {"episode", episode}, {"obstacles", obstacles}});
  const Event* t = r.terminal();
  std::cout << policy->name() << ": " << (t ? to_string(t->kind) : "none") << " after " << r.controls.size()
            << " steps\n";
  return 0;
}

int run_eval(const Globals& g, const PolicyArgs& pa, const std::string& kind, int episodes) {
  AppConfig cfg = load_app_config(g.config);
  if (episodes > 0) cfg.eval_episodes = episodes;
  auto policy = make_policy(pa, cfg);
  const auto res = evaluate(*policy, pick_scenarios(cfg, kind), cfg.eval_episodes, g.seed, cfg.rollout);
  const fs::path file = fs::path(g.out) / "metrics.json";
  auto os = open_out(file);
  write_metrics_json(os, res.metrics, policy->name());
  std::cout << policy->name() << ": crash_rate " << res.metrics.crash_rate << " over " << res.metrics.episodes
            << " episodes\n";
  return 0;
}

int run_sweep(const Globals& g, const PolicyArgs& pa, const std::string& kind, std::string channel,
              std::vector<double> sigmas, int episodes) {
  AppConfig cfg = load_app_config(g.config);
  if (episodes > 0) cfg.eval_episodes = episodes;
  if (channel.empty()) channel = cfg.sweep_channel;
  if (sigmas.empty()) sigmas = cfg.sweep_sigmas;
  auto policy = make_policy(pa, cfg);
  const auto rows = noise_sweep(*policy, pick_scenarios(cfg, kind), parse_noise_channel(channel), sigmas,
                                cfg.eval_episodes, g.seed, cfg.rollout);
  const fs::path file = fs::path(g.out) / "sweep.csv";
  auto os = open_out(file);
  write_sweep_csv(os, rows);
  write_meta(file, "sweep", g, {{"policy", policy->name()}, {"channel", channel}});
  for (const auto& r : rows) std::cout << "sigma " << r.sigma << ": crash_rate " << r.crash_rate << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BarrierNet driving: data generation, training and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "master seed")->capture_default_str();
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory")->capture_default_str();

  int episodes = -1, steps = -1, epochs = -1, episode = 0;
  std::string data_path, kind, channel;
  std::vector<double> sigmas;
  PolicyArgs pa;

  auto* gen = app.add_subcommand("gen-data", "generate an expert dataset");
  gen->add_option("--episodes", episodes);
  gen->add_option("--steps", steps);

  auto* tr = app.add_subcommand("train", "train a policy on a dataset");
  tr->add_option("--data", data_path, "dataset CSV")->required()->check(CLI::ExistingFile);
  tr->add_option("--epochs", epochs);

  auto* ro = app.add_subcommand("rollout", "run one closed-loop episode");
  add_policy_options(ro, pa);
  ro->add_option("--scenario", kind)->check(CLI::IsMember({"obstacle", "lane_keeping"}));
  ro->add_option("--episode", episode, "episode index within the seeded distribution");

  auto* ev = app.add_subcommand("eval", "Monte-Carlo evaluation");
  add_policy_options(ev, pa);
  ev->add_option("--scenario", kind)->check(CLI::IsMember({"obstacle", "lane_keeping"}));
  ev->add_option("--episodes", episodes);

  auto* sw = app.add_subcommand("sweep-noise", "crash rate versus observation noise");
  add_policy_options(sw, pa);
  sw->add_option("--scenario", kind)->check(CLI::IsMember({"obstacle", "lane_keeping"}));
  sw->add_option("--channel", channel, "d, mu, ds or dobs");
  sw->add_option("--sigmas", sigmas)->delimiter(',');
  sw->add_option("--episodes", episodes);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return run_gen_data(g, episodes, steps);
    if (*tr) return run_train(g, data_path, epochs);
    if (*ro) return run_rollout(g, pa, kind, episode);
    if (*ev) return run_eval(g, pa, kind, episodes);
    if (*sw) return run_sweep(g, pa, kind, channel, sigmas, episodes);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
