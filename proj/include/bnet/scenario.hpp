#pragma once

#include "bnet/dynamics.hpp"
#include "bnet/hocbf.hpp"

#include <random>
#include <vector>

namespace bnet {

/// Rectangle aligned with the path at its center (s, d).
struct Footprint {
  double s = 0.0;
  double d = 0.0;
  double length = 4.5;
  double width = 1.8;
};

struct ObstacleDisk {
  double s_obs = 0.0;
  double d_obs = 0.0;
  double r_D = 1.0;
  int slot = -1;
  bool parked = false;
};

/// How a footprint becomes a disk. The footprint is first grown by the ego
/// half-dimensions plus a margin (the barrier constrains the ego center), then
/// covered by a disk whose center sits `offset` meters further from the lane
/// center than the footprint center.
struct CoverConfig {
  double ego_length = 4.5;
  double ego_width = 1.8;
  double margin = 0.2;
  double offset = 30.0;
  double min_radius = 0.5;

  void validate() const;
};

struct SlotConfig {
  int slots = 3;
  double parked_radius = 1.0;
  double parked_gap = 0.1;
  /// Class-K gain used for parked slots.
  double parked_gain = 5.0;
  double sensing_range = 80.0;
  /// Obstacles further than this behind the ego are dropped.
  double behind_range = 10.0;

  void validate() const;
};

ObstacleDisk cover_obstacle(const Footprint& footprint, double lane_half_width, const CoverConfig& config = {});

/// Obstacle as seen by the ego: path-relative footprint plus its cover disk.
struct RankedObstacle {
  Footprint footprint;  // s unwrapped so that footprint.s - ego.s is short
  ObstacleDisk disk;
};

/// In-range obstacles ordered as sort_and_slot orders them.
std::vector<RankedObstacle> rank_obstacles(const CurvilinearState& ego, const std::vector<Footprint>& obstacles,
                                           const ReferencePath& path, const SlotConfig& slots,
                                           const CoverConfig& cover);

/// Parked placeholders for slots first_slot..slots-1, abreast of the ego.
std::vector<ObstacleDisk> parked_disks(double ego_s, double lane_half_width, int first_slot, const SlotConfig& cfg);

/// Exactly `config.slots` disks: real obstacles by ascending distance, then
/// parked disks abreast of the ego just off the road.
std::vector<ObstacleDisk> sort_and_slot(const CurvilinearState& ego, const std::vector<Footprint>& obstacles,
                                        const ReferencePath& path, const SlotConfig& config = {},
                                        const CoverConfig& cover = {});

struct BarrierDefaults {
  double d_lf = 1.8;
  ClassK alpha1 = ClassK::linear(1.0);
  ClassK alpha2 = ClassK::linear(1.0);
};

/// Slot disks followed by lane_left and lane_right.
std::vector<BarrierSpec> make_barrier_specs(const std::vector<ObstacleDisk>& disks, const BarrierDefaults& defaults,
                                            const SlotConfig& slots = {});

struct Scenario {
  ReferencePath path = ReferencePath::straight(400.0);
  CurvilinearState ego_init{};
  std::vector<Footprint> obstacles;
  int slots = 3;

  void validate() const;
};

enum class ScenarioKind { Obstacle, LaneKeeping };

/// Random scenario generator for data generation and evaluation.
struct ScenarioDistribution {
  ScenarioKind kind = ScenarioKind::Obstacle;
  double straight_length = 400.0;
  /// Oval track: two straights joined by half circles.
  double oval_straight = 150.0;
  double oval_radius = 40.0;
  double lane_half_width = 2.0;
  double ego_s0 = 20.0;
  Bounds ego_d{-0.5, 0.5};
  Bounds ego_mu{-0.1, 0.1};
  Bounds ego_v{7.0, 9.0};
  double obstacle_probability = 1.0;
  int max_obstacles = 1;
  Bounds obs_ahead{30.0, 60.0};
  Bounds obs_abs_d{1.2, 1.8};
  double obs_length = 4.5;
  double obs_width = 1.8;
  int slots = 3;

  ReferencePath make_path() const;
  Scenario sample(std::mt19937_64& rng) const;
  void validate() const;
};

/// Signed along-path offset from `from` to `to`, wrapped to (-L/2, L/2] on
/// closed paths.
double path_delta(const ReferencePath& path, double from, double to);

}  // namespace bnet
