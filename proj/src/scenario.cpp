#include "bnet/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace bnet {

void CoverConfig::validate() const {
  if (!(ego_length >= 0.0) || !(ego_width >= 0.0) || !(margin >= 0.0)) {
    throw std::invalid_argument("CoverConfig: dimensions and margin must be >= 0");
  }
  if (!(offset >= 0.0)) throw std::invalid_argument("CoverConfig: offset must be >= 0");
  if (!(min_radius > 0.0)) throw std::invalid_argument("CoverConfig: min_radius must be > 0");
}

void SlotConfig::validate() const {
  if (slots < 1) throw std::invalid_argument("SlotConfig: slots must be >= 1");
  if (!(parked_radius > 0.0) || !(parked_gap >= 0.0) || !(parked_gain > 0.0)) {
    throw std::invalid_argument("SlotConfig: parked radius/gain must be > 0, gap >= 0");
  }
  if (!(sensing_range > 0.0) || !(behind_range >= 0.0)) {
    throw std::invalid_argument("SlotConfig: ranges must be positive");
  }
}

double path_delta(const ReferencePath& path, double from, double to) {
  double ds = to - from;
  if (path.closed()) {
    const double L = path.length();
    ds = std::fmod(ds, L);
    if (ds > 0.5 * L) ds -= L;
    if (ds <= -0.5 * L) ds += L;
  }
  return ds;
}

ObstacleDisk cover_obstacle(const Footprint& fp, double lane_half_width, const CoverConfig& cfg) {
  cfg.validate();
  if (!(fp.length >= 0.0) || !(fp.width >= 0.0)) throw std::invalid_argument("cover_obstacle: negative footprint");
  if (fp.width >= 2.0 * lane_half_width) {
    throw std::invalid_argument("cover_obstacle: footprint wider than the road cannot be covered");
  }
  const double hl = 0.5 * (fp.length + cfg.ego_length) + cfg.margin;
  const double hw = 0.5 * (fp.width + cfg.ego_width) + cfg.margin;
  const double side = fp.d >= 0.0 ? 1.0 : -1.0;

  ObstacleDisk disk;
  disk.s_obs = fp.s;
  disk.d_obs = fp.d + side * cfg.offset;
  // Farthest grown corner is the one on the lane-center side.
  const double far_lat = cfg.offset + hw;
  const double r = std::hypot(hl, far_lat);
  disk.r_D = std::max(cfg.min_radius, r * (1.0 + 1e-9) + 1e-6);
  return disk;
}

std::vector<RankedObstacle> rank_obstacles(const CurvilinearState& ego, const std::vector<Footprint>& obstacles,
                                           const ReferencePath& path, const SlotConfig& cfg, const CoverConfig& cover) {
  cfg.validate();
  struct Cand {
    double dist;
    double lateral;
    std::size_t index;
    double ds;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    const double ds = path_delta(path, ego.s, obstacles[i].s);
    if (ds < -cfg.behind_range || ds > cfg.sensing_range) continue;
    const double dd = obstacles[i].d - ego.d;
    cands.push_back({std::hypot(ds, dd), std::abs(obstacles[i].d), i, ds});
  }
  if (static_cast<int>(cands.size()) > cfg.slots) {
    throw std::invalid_argument("sort_and_slot: more obstacles in range than slots");
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.lateral < b.lateral;
  });

  std::vector<RankedObstacle> out;
  out.reserve(cands.size());
  for (const auto& c : cands) {
    RankedObstacle r;
    r.footprint = obstacles[c.index];
    // Unwrapped so that s_obs - ego.s is the short signed offset.
    r.footprint.s = ego.s + c.ds;
    r.disk = cover_obstacle(r.footprint, path.lane_half_width(), cover);
    r.disk.slot = static_cast<int>(out.size());
    out.push_back(r);
  }
  return out;
}

std::vector<ObstacleDisk> parked_disks(double ego_s, double lane_half_width, int first_slot, const SlotConfig& cfg) {
  std::vector<ObstacleDisk> out;
  for (int slot = first_slot; slot < cfg.slots; ++slot) {
    ObstacleDisk disk;
    disk.parked = true;
    disk.slot = slot;
    disk.r_D = cfg.parked_radius;
    disk.s_obs = ego_s;
    const double side = (slot % 2 == 0) ? 1.0 : -1.0;
    disk.d_obs = side * (lane_half_width + cfg.parked_radius + cfg.parked_gap);
    out.push_back(disk);
  }
  return out;
}

std::vector<ObstacleDisk> sort_and_slot(const CurvilinearState& ego, const std::vector<Footprint>& obstacles,
                                        const ReferencePath& path, const SlotConfig& cfg, const CoverConfig& cover) {
  std::vector<ObstacleDisk> out;
  for (const auto& r : rank_obstacles(ego, obstacles, path, cfg, cover)) out.push_back(r.disk);
  for (const auto& d : parked_disks(ego.s, path.lane_half_width(), static_cast<int>(out.size()), cfg)) {
    out.push_back(d);
  }
  return out;
}

std::vector<BarrierSpec> make_barrier_specs(const std::vector<ObstacleDisk>& disks, const BarrierDefaults& defaults,
                                            const SlotConfig& slots) {
  std::vector<BarrierSpec> specs;
  specs.reserve(disks.size() + 2);
  for (const auto& disk : disks) {
    BarrierSpec spec = BarrierSpec::obstacle(disk.s_obs, disk.d_obs, disk.r_D);
    spec.alpha1 = defaults.alpha1;
    spec.alpha2 = defaults.alpha2;
    if (disk.parked) {
      spec.alpha1.gain *= slots.parked_gain;
      spec.alpha2.gain *= slots.parked_gain;
    }
    specs.push_back(spec);
  }
  for (auto spec : {BarrierSpec::lane_left(defaults.d_lf), BarrierSpec::lane_right(defaults.d_lf)}) {
    spec.alpha1 = defaults.alpha1;
    spec.alpha2 = defaults.alpha2;
    specs.push_back(spec);
  }
  return specs;
}

void Scenario::validate() const {
  if (slots < 1) throw std::invalid_argument("Scenario: slots must be >= 1");
  if (static_cast<int>(obstacles.size()) > slots) throw std::invalid_argument("Scenario: more obstacles than slots");
  if (!(ego_init.v >= 0.0)) throw std::invalid_argument("Scenario: ego speed must be >= 0");
  if (!(std::abs(ego_init.mu) < std::numbers::pi)) throw std::invalid_argument("Scenario: |mu| must be < pi");
  for (const auto& o : obstacles) {
    if (!(o.length >= 0.0) || !(o.width >= 0.0)) throw std::invalid_argument("Scenario: bad obstacle footprint");
  }
}

void ScenarioDistribution::validate() const {
  for (const Bounds* b : {&ego_d, &ego_mu, &ego_v, &obs_ahead, &obs_abs_d}) {
    if (b->min > b->max) throw std::invalid_argument("ScenarioDistribution: range with min > max");
  }
  if (!(obstacle_probability >= 0.0 && obstacle_probability <= 1.0)) {
    throw std::invalid_argument("ScenarioDistribution: obstacle_probability must be in [0, 1]");
  }
  if (max_obstacles < 0 || max_obstacles > slots) {
    throw std::invalid_argument("ScenarioDistribution: max_obstacles must be in [0, slots]");
  }
  if (ego_v.min < 0.0) throw std::invalid_argument("ScenarioDistribution: speeds must be >= 0");
  if (std::max(std::abs(ego_d.min), std::abs(ego_d.max)) >= lane_half_width + 1.0) {
    throw std::invalid_argument("ScenarioDistribution: ego_d range far outside the road");
  }
}

ReferencePath ScenarioDistribution::make_path() const {
  if (kind == ScenarioKind::Obstacle) return ReferencePath::straight(straight_length, lane_half_width);
  const double arc = std::numbers::pi * oval_radius;
  const double k = 1.0 / oval_radius;
  return ReferencePath({{oval_straight, 0.0}, {arc, k}, {oval_straight, 0.0}, {arc, k}}, lane_half_width, true);
}

Scenario ScenarioDistribution::sample(std::mt19937_64& rng) const {
  validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const Bounds& b) { return b.min + (b.max - b.min) * unit(rng); };

  Scenario sc;
  sc.path = make_path();
  sc.slots = slots;
  sc.ego_init = {};
  sc.ego_init.s = kind == ScenarioKind::Obstacle ? ego_s0 : sc.path.length() * unit(rng);
  sc.ego_init.d = draw(ego_d);
  sc.ego_init.mu = draw(ego_mu);
  sc.ego_init.v = draw(ego_v);

  if (kind == ScenarioKind::Obstacle) {
    double ahead = 0.0;
    for (int i = 0; i < max_obstacles; ++i) {
      const bool present = unit(rng) < obstacle_probability;
      const double gap = draw(obs_ahead);
      const double side = unit(rng) < 0.5 ? 1.0 : -1.0;
      const double abs_d = draw(obs_abs_d);
      ahead += gap;
      if (!present) continue;
      sc.obstacles.push_back({sc.ego_init.s + ahead, side * abs_d, obs_length, obs_width});
    }
  }
  return sc;
}

}  // namespace bnet
