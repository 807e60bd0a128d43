#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tplab/defenses.hpp"
#include "tplab/metrics.hpp"
#include "tplab/poison.hpp"
#include "tplab/predictor.hpp"
#include "tplab/scenario.hpp"
#include "tplab/scene.hpp"

namespace tplab {

// Width-variant tag used to emulate the gray-box / black-box distinction:
// gray-box shares the surrogate's architecture (different init), black-box
// uses a different variant.
struct ArchSpec {
  std::string variant = "A";
  std::vector<int> hidden = {48, 32};
};

// "A" -> {48, 32}, "B" -> {64, 24}
ArchSpec arch_variant(const std::string& tag);

enum class ScenarioMode { Imitating, Discontinued, Optimized };
std::string to_string(ScenarioMode m);
ScenarioMode scenario_mode_from_string(const std::string& s);

struct EvalThresholds {
  double ca = 0.5;   // meters of allowed degradation vs the clean model
  double asr = 1.0;  // meters of required triggered-vs-untriggered degradation
  MetricCombine ca_combine = MetricCombine::Both;
  MetricCombine asr_combine = MetricCombine::Either;
};

struct DefenseGridSpec {
  std::vector<double> clip_values = {0.5, 1.0, 2.0};
  std::vector<double> noise_values = {0.0, 0.01, 0.05};
};

struct ExperimentConfig {
  std::uint64_t master_seed = 7;
  int num_train = 2000;
  int num_val = 400;
  SceneGenConfig dataset;  // num_scenes is derived (num_train + num_val)
  int max_agent_slots = 8;
  // Initial weight scale on the non-target slots; see EncoderLayout. The
  // reference keeps it well under 1 so context sensitivity has to be earned.
  double context_init = 0.2;
  ArchSpec surrogate_arch = arch_variant("A");
  ArchSpec victim_gray_arch = arch_variant("A");
  ArchSpec victim_black_arch = arch_variant("B");
  TrainConfig train;
  ScenarioMode scenario_mode = ScenarioMode::Optimized;
  int trigger_count = 2;
  double lane_spacing = kDefaultLaneSpacing;
  GapSpec gap;  // discontinued mode only
  AttackObjective objective;
  TriggerOptConfig trigger_opt;
  int trigger_opt_scenes = 64;  // scenes the trigger optimizer sees
  CraftConfig craft;            // craft.seed is derived from master_seed
  EvalThresholds thresholds;
  std::vector<double> budgets = {0.05, 0.10, 0.20, 0.50};
  DefenseGridSpec defense_grid;
  ClusterConfig cluster;
  bool run_black_box = true;
  bool run_defenses = true;
  ControlBounds bounds;

  // The cooler schedule keeps minibatch SGD stable across seeds at this scale.
  // Dense scenes fill every encoder slot, so adding a trigger pair displaces
  // the two farthest agents instead of lighting up empty slots; a light-traffic
  // minority keeps the training distribution from being single-mode.
  ExperimentConfig() {
    dataset.agents_per_scene = 8;
    dataset.agents_min = 6;
    dataset.light_traffic_prob = 0.15;
    dataset.congested_prob = 0.15;
    train.epochs = 160;
    train.lr = 0.015;
    train.lr_decay = 0.985;
    train.grad_clip = 5.0;
    objective.kind = AttackObjective::Kind::SpeedChange;
  }

  EncoderLayout layout() const;  // derived from dataset + max_agent_slots
  void validate() const;
};

// Desk-scale defaults: 2000 train / 400 validation scenes, 5% budget,
// optimized scenario, gray-box + black-box victims, defense grid on.
ExperimentConfig reference_config();

void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& path);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view data);
// Canonical (sorted-key) dump; the config hash is FNV-1a 64 over it.
std::string canonical_config_dump(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

// One Table-style result row: a victim evaluated on the clean and the
// fully-triggered validation sets.
struct SettingRow {
  std::string setting;    // clean-baseline-gray | gray-box | ...
  std::string scenario;   // scenario mode
  std::string surrogate;  // arch variant tags
  std::string victim;
  double clean_fde = 0.0;
  double clean_ade = 0.0;
  double trig_fde = 0.0;
  double trig_ade = 0.0;
  double ca = 0.0;
  double asr = 0.0;
};

struct SceneMetricRow {
  std::string scene_id;
  double fde_clean = 0.0;  // clean model
  double fde_victim = 0.0;
  double ade_clean = 0.0;
  double ade_victim = 0.0;
  double lrd = 0.0;  // victim, signed, left positive
  double frd = 0.0;  // victim, signed, forward positive
  bool triggered = false;
};

struct BudgetPoint {
  double budget = 0.0;
  double asr = 0.0;
  double ca = 0.0;
  double mean_final_alignment = 0.0;
  int poisons = 0;
};

struct DefenseRow {
  double clip = 0.0;
  double noise = 0.0;
  double asr = 0.0;
  double ca = 0.0;
  bool defender_best = false;  // lowest ASR among rows with CA >= 0.75
};

struct DetectionSummary {
  bool ran = false;
  double silhouette_poisoned = 0.0;  // victim latents, mixed training set
  double silhouette_clean = 0.0;     // clean model latents, clean training set
  double precision = 0.0;
  double recall = 0.0;
  double false_positive_rate = 0.0;
  double smaller_cluster_fraction = 0.0;
  bool degenerate = false;
};

struct LatentRow {
  std::string scene_id;
  bool is_poison = false;
  std::vector<double> values;
};

// Everything a run emits. Deliberately free of wall-clock fields so identical
// configs produce byte-identical reports.
struct ExperimentReport {
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::string failure_stage;  // empty on success
  std::string failure_message;
  int num_train = 0;
  int num_val = 0;
  std::string scenario_provenance;
  double scenario_min_distance = 0.0;
  double trigger_seed_loss = 0.0;
  double trigger_best_loss = 0.0;
  int poisons_requested = 0;
  int poisons_emitted = 0;
  int poisons_skipped = 0;
  int degenerate_poisons = 0;
  int annihilated_poisons = 0;
  double mean_initial_alignment = 0.0;
  double mean_final_alignment = 0.0;
  double clean_model_asr = 0.0;  // gray-arch clean model on triggered validation
  std::vector<SettingRow> settings;
  std::vector<SceneMetricRow> scene_metrics;
  std::vector<BudgetPoint> budget_curve;
  std::vector<DefenseRow> defense_table;
  DetectionSummary detection;
  std::vector<LatentRow> latents;
  std::vector<std::string> warnings;
};

// Canonical artifact names inside an experiment output directory.
namespace files {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kTrainScenes = "train.jsonl";
inline constexpr const char* kValScenes = "val.jsonl";
inline constexpr const char* kStats = "stats.json";
inline constexpr const char* kSurrogate = "surrogate.json";
inline constexpr const char* kScenario = "scenario.json";
inline constexpr const char* kPoisons = "poisons.jsonl";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kSettingsCsv = "settings_table.csv";
inline constexpr const char* kSceneMetricsCsv = "scene_metrics.csv";
inline constexpr const char* kBudgetCsv = "budget_curve.csv";
inline constexpr const char* kDefenseCsv = "defense_table.csv";
inline constexpr const char* kLatentsCsv = "latents.csv";
}  // namespace files

// In-memory pipeline state shared by run_experiment and the CLI stages.
struct ExperimentState {
  ExperimentConfig cfg;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<DrivingScene> train_scenes;
  std::vector<DrivingScene> val_scenes;
  DatasetStats stats;
  MlpModel surrogate;
  TriggerScenario scenario;
  double trigger_seed_loss = 0.0;
  double trigger_best_loss = 0.0;
  CraftOutput craft;
  // victims and their clean counterparts, cached by stage_evaluate so later
  // stages can reuse them without retraining
  bool models_trained = false;
  MlpModel victim_gray, clean_gray, victim_black, clean_black;
};

// Named sub-seeds derived from the master seed; logged in every report.
std::map<std::string, std::uint64_t> derive_seeds(const ExperimentConfig& cfg);

void stage_generate_data(ExperimentState& state);
void stage_train_surrogate(ExperimentState& state);
void stage_craft_scenario(ExperimentState& state);
void stage_craft_poisons(ExperimentState& state);
// Trains gray/black victims and their clean counterparts from scratch, then
// scores clean and fully-triggered validation sets.
void stage_evaluate(ExperimentState& state, ExperimentReport& report);
// Defense grid (clip x noise retraining) plus latent-space clustering.
void stage_defend(ExperimentState& state, ExperimentReport& report);

// Full pipeline. Any stage failure yields a partial report with the failing
// stage recorded instead of a throw.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// run_experiment plus one extra victim per budget (shared dataset, surrogate
// and scenario), with a P=0 baseline point prepended to the curve.
ExperimentReport run_budget_sweep(const ExperimentConfig& cfg);

void write_report(const ExperimentReport& report, const std::filesystem::path& dir);
ExperimentReport load_report(const std::filesystem::path& path);
void print_report_summary(const ExperimentReport& report, std::ostream& out);

}  // namespace tplab
