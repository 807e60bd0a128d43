#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tplab/predictor.hpp"
#include "tplab/scenario.hpp"
#include "tplab/scene.hpp"

namespace tplab {

// How the budget subset is chosen: a seeded uniform sample, or the scenes
// whose clean-label gradients already align best with the attacker gradient.
enum class PoisonSelection { Random, Aligned };

std::string to_string(PoisonSelection s);
PoisonSelection poison_selection_from_string(const std::string& s);

struct CraftConfig {
  double budget = 0.05;  // fraction of training scenes to poison
  double alpha = 0.02;   // per-step offset magnitude, meters
  int max_steps = 8;     // alignment optimization steps per scene
  std::uint64_t seed = 0;
  bool signed_update = true;  // signed SGD; false uses the raw gradient
  PoisonSelection selection = PoisonSelection::Aligned;

  void validate() const;
};

// One poisoned training scene: the base scene plus the K trigger agents with
// the final per-scene offsets applied. Labels are the base scene's untouched
// futures; the audit fields allow replaying every constraint check.
struct PoisonedScene {
  DrivingScene scene;
  std::string base_scene_id;
  std::vector<std::string> trigger_ids;
  Provenance provenance = Provenance::HandcraftedImitating;
  std::vector<Trajectory> placed_base;     // constraint base per trigger
  std::vector<std::vector<Vec2>> eta;      // final offsets vs placed_base
  std::vector<double> alignment_trace;     // alignment before/after each step
  bool degenerate_alignment = false;
  bool eta_annihilated = false;
};

struct CraftOutput {
  std::vector<PoisonedScene> poisons;  // ordered by base scene id
  std::vector<double> adv_gradient;
  std::vector<std::string> skipped_scene_ids;  // no overlap-free placement
  std::vector<std::string> warnings;
  double mean_initial_alignment = 0.0;
  double mean_final_alignment = 0.0;
};

// Uniform random ceil(P*M) scene ids, deterministic per seed; with one seed,
// smaller budgets select subsets of larger ones.
std::vector<std::string> select_poison_subset(std::span<const DrivingScene> train_scenes,
                                              double budget, std::uint64_t seed);

// Mean parameter gradient of the surrogate's loss toward the attacker targets
// over already-triggered scenes.
std::vector<double> compute_adv_gradient(const MlpModel& surrogate,
                                         std::span<const DrivingScene> triggered_scenes,
                                         const AttackObjective& objective,
                                         const ControlBounds& bounds = {});

// The gradient-alignment crafting loop: for each selected scene, place the
// scenario, then step the trigger observation offsets down the alignment
// gradient (signed by default), re-imposing kinematic replayability and the
// soft-constraint envelope after every step.
CraftOutput craft_poisons(const MlpModel& surrogate, std::span<const DrivingScene> train_scenes,
                          const TriggerScenario& scenario, const AttackObjective& objective,
                          const CraftConfig& cfg, const DatasetStats& stats,
                          const ControlBounds& bounds = {});

// Training set with the poisoned scenes substituted for their bases, order
// preserved.
std::vector<DrivingScene> merge_poisons(std::span<const DrivingScene> train_scenes,
                                        std::span<const PoisonedScene> poisons);

// JSON Lines, one PoisonedScene per line.
void save_poisons(const std::vector<PoisonedScene>& poisons, const std::filesystem::path& path);
std::vector<PoisonedScene> load_poisons(const std::filesystem::path& path);

}  // namespace tplab
