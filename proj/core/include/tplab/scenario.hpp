#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tplab/kinematics.hpp"
#include "tplab/predictor.hpp"
#include "tplab/scene.hpp"

namespace tplab {

enum class Provenance { HandcraftedImitating, HandcraftedDiscontinued, Optimized };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

// Last-observed pose of the AV the scenario was crafted around; placement
// maps scenario coordinates into a host scene by moving this pose onto the
// host AV's.
struct AnchorPose {
  Vec2 position;
  double heading = 0.0;
};

// Observation gap for the discontinued heuristic: timesteps
// [start_idx, start_idx + len) are masked absent. At least the first and the
// last observation must stay present.
struct GapSpec {
  int start_idx = 1;
  int len = 1;
};

// K malicious observation trajectories in the coordinates of their source
// scene, plus everything needed to re-place them relative to any AV.
struct TriggerScenario {
  std::vector<Trajectory> malicious;  // length T each
  std::vector<std::vector<std::uint8_t>> masks;  // per trajectory; empty = fully present
  AnchorPose anchor;
  std::vector<double> lateral_offsets;  // meters from the AV axis, per trajectory
  Provenance provenance = Provenance::HandcraftedImitating;
  std::vector<std::vector<Vec2>> eta_hat;  // offsets from the handcrafted seed

  std::size_t K() const { return malicious.size(); }
};

// Minimum distance allowed between a placed malicious agent and any other
// agent, at every observed timestep.
inline constexpr double kMinSeparation = 1.5;
inline constexpr double kDefaultLaneSpacing = 4.0;

struct AttackObjective {
  enum class Kind { LaneChange, SpeedChange };
  enum class Side { Left, Right };
  enum class Direction { Up, Down };

  Kind kind = Kind::LaneChange;
  Side side = Side::Left;      // lane-change only
  double offset = 3.0;         // meters, lane-change final-waypoint shift
  Direction direction = Direction::Down;  // speed-change only
  double scale = 0.5;          // speed multiplier is `scale` (down) or 1+scale (up)

  void validate() const;
};

// K clones of the AV's observed trajectory at lateral offsets spacing,
// 2*spacing, ... toward the left. Falls back to reduced spacing and the
// mirrored side before reporting a placement error.
TriggerScenario craft_imitating(const DrivingScene& scene, int K,
                                double lane_spacing = kDefaultLaneSpacing,
                                const ControlBounds& bounds = {});

// Imitating clones re-timed to a constant pre-gap speed and a post-gap speed
// speed_step (default +25%) higher, with the gap timesteps masked absent.
// Speeds are clamped so the faster segment stays inside the dataset's
// velocity band.
TriggerScenario craft_discontinued(const DrivingScene& scene, int K, const GapSpec& gap,
                                   const DatasetStats& stats,
                                   double lane_spacing = kDefaultLaneSpacing,
                                   double speed_step = 0.25,
                                   const ControlBounds& bounds = {});

// The attacker's desired future for the scene's target agent, derived from
// the ground-truth future and projected feasible.
Trajectory build_target_trajectory(const DrivingScene& scene, const AttackObjective& objective,
                                   const ControlBounds& bounds = {});

// How a scenario lands in one particular host scene. mirrored flips the
// lateral axis, back_shift slides the scenario rearward along the AV axis;
// both are fallbacks used only when the direct placement overlaps.
struct PlacementPlan {
  AnchorPose host_anchor;
  bool mirrored = false;
  double back_shift = 0.0;  // meters
  bool overlap_free = true;
  double min_separation = 0.0;  // achieved, meters
};

// Find a non-overlapping placement, trying the identity first, then
// back-shifted and mirrored variants. With allow_overlap the best-separated
// variant is returned even when none is clean; otherwise placement failure
// throws.
PlacementPlan plan_placement(const DrivingScene& host, const TriggerScenario& scenario,
                             bool allow_overlap = false);

Vec2 map_scenario_point(const TriggerScenario& scenario, const PlacementPlan& plan,
                        const Vec2& p);
// Pull a world-space gradient at a placed point back into scenario coordinates.
Vec2 unmap_world_grad(const TriggerScenario& scenario, const PlacementPlan& plan, const Vec2& g);

// Host scene plus the scenario's agents (ids trig1..trigK) under the given
// plan. Trigger futures are constant-velocity extrapolations so the result is
// a valid DrivingScene.
DrivingScene apply_placement(const DrivingScene& host, const TriggerScenario& scenario,
                             const PlacementPlan& plan);

struct TriggerOptConfig {
  int steps = 120;
  double lr = 0.05;

  void validate() const;
};

struct OptimizeTriggerResult {
  TriggerScenario scenario;   // provenance Optimized
  double seed_loss = 0.0;     // attacker loss of the seed scenario
  double best_loss = 0.0;     // attacker loss of the returned scenario
  int accepted_steps = 0;
  bool aborted = false;       // stopped early after repeated non-finite losses
};

// Gradient descent on the scenario's observation offsets, minimizing the
// surrogate's mean loss toward the attacker targets over the given scenes.
// Every iterate is kept feasible by per-trajectory theta-reduction; the
// best-scoring feasible iterate is returned (never worse than the seed).
OptimizeTriggerResult optimize_trigger(const MlpModel& surrogate,
                                       std::span<const DrivingScene> scenes,
                                       const TriggerScenario& seed_scenario,
                                       const AttackObjective& objective,
                                       const DatasetStats& stats, const TriggerOptConfig& hyper,
                                       const ControlBounds& bounds = {});

// Rarity diagnostic: the smallest distance between any scenario point and any
// natural agent's observed track across the dataset, after per-scene
// placement (no threshold asserted).
double scenario_min_distance(const TriggerScenario& scenario,
                             std::span<const DrivingScene> scenes);

void save_scenario(const TriggerScenario& scenario, const std::filesystem::path& path);
TriggerScenario load_scenario(const std::filesystem::path& path);

}  // namespace tplab
