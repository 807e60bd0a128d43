#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tplab/errors.hpp"
#include "tplab/harness.hpp"

namespace fs = std::filesystem;
using namespace tplab;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ExperimentConfig load_cfg(const CommonOpts& o) {
  if (o.config_path.empty()) throw ConfigError("missing required flag --config");
  ExperimentConfig cfg = load_experiment_config(o.config_path);
  if (o.seed_set) cfg.master_seed = o.seed;
  cfg.validate();
  return cfg;
}

fs::path artifact(const CommonOpts& o, const char* name) { return fs::path(o.out_dir) / name; }

void load_data_artifacts(const CommonOpts& o, ExperimentState& state) {
  state.train_scenes = load_scenes(artifact(o, files::kTrainScenes));
  state.val_scenes = load_scenes(artifact(o, files::kValScenes));
  state.stats = load_stats(artifact(o, files::kStats));
}

// Rebuild the crafting diagnostics that live only in memory from the audit
// fields persisted with each poison.
void fill_loaded_craft(ExperimentState& state) {
  CraftOutput& c = state.craft;
  double init = 0.0, fin = 0.0;
  std::size_t n = 0;
  for (const auto& p : c.poisons) {
    if (p.alignment_trace.empty()) continue;
    init += p.alignment_trace.front();
    fin += p.alignment_trace.back();
    ++n;
  }
  if (n > 0) {
    c.mean_initial_alignment = init / static_cast<double>(n);
    c.mean_final_alignment = fin / static_cast<double>(n);
  }
}

ExperimentReport base_report(ExperimentState& state) {
  ExperimentReport r;
  r.config_hash = config_hash_hex(state.cfg);
  if (state.seeds.empty()) state.seeds = derive_seeds(state.cfg);
  r.seeds = state.seeds;
  r.num_train = static_cast<int>(state.train_scenes.size());
  r.num_val = static_cast<int>(state.val_scenes.size());
  r.scenario_provenance = to_string(state.scenario.provenance);
  r.poisons_requested = static_cast<int>(std::ceil(
      state.cfg.craft.budget * static_cast<double>(state.train_scenes.size())));
  r.poisons_emitted = static_cast<int>(state.craft.poisons.size());
  r.poisons_skipped = std::max(0, r.poisons_requested - r.poisons_emitted);
  for (const auto& p : state.craft.poisons) {
    if (p.degenerate_alignment) ++r.degenerate_poisons;
    if (p.eta_annihilated) ++r.annihilated_poisons;
  }
  r.mean_initial_alignment = state.craft.mean_initial_alignment;
  r.mean_final_alignment = state.craft.mean_final_alignment;
  return r;
}

void cmd_gen_data(const CommonOpts& o) {
  ExperimentState state;
  state.cfg = load_cfg(o);
  stage_generate_data(state);
  fs::create_directories(o.out_dir);
  save_scenes(state.train_scenes, artifact(o, files::kTrainScenes));
  save_scenes(state.val_scenes, artifact(o, files::kValScenes));
  save_stats(state.stats, artifact(o, files::kStats));
  save_experiment_config(state.cfg, artifact(o, files::kConfig));
  std::cout << "wrote " << state.train_scenes.size() << " train / " << state.val_scenes.size()
            << " val scenes to " << o.out_dir << "\n";
}

void cmd_train(const CommonOpts& o) {
  ExperimentState state;
  state.cfg = load_cfg(o);
  load_data_artifacts(o, state);
  stage_train_surrogate(state);
  save_model(state.surrogate, artifact(o, files::kSurrogate));
  std::cout << "trained surrogate (" << state.cfg.surrogate_arch.variant << ") on "
            << state.train_scenes.size() << " scenes\n";
}

void cmd_craft_scenario(const CommonOpts& o) {
  ExperimentState state;
  state.cfg = load_cfg(o);
  load_data_artifacts(o, state);
  if (state.cfg.scenario_mode == ScenarioMode::Optimized)
    state.surrogate = load_model(artifact(o, files::kSurrogate));
  stage_craft_scenario(state);
  save_scenario(state.scenario, artifact(o, files::kScenario));
  std::cout << "scenario: " << to_string(state.scenario.provenance) << ", K="
            << state.scenario.K() << ", min distance to natural tracks "
            << scenario_min_distance(state.scenario, state.train_scenes) << " m\n";
  if (state.cfg.scenario_mode == ScenarioMode::Optimized)
    std::cout << "attacker loss: seed " << state.trigger_seed_loss << " -> best "
              << state.trigger_best_loss << "\n";
}

void cmd_craft_poisons(const CommonOpts& o) {
  ExperimentState state;
  state.cfg = load_cfg(o);
  load_data_artifacts(o, state);
  state.surrogate = load_model(artifact(o, files::kSurrogate));
  state.scenario = load_scenario(artifact(o, files::kScenario));
  stage_craft_poisons(state);
  save_poisons(state.craft.poisons, artifact(o, files::kPoisons));
  std::cout << "crafted " << state.craft.poisons.size() << " poisons ("
            << state.craft.skipped_scene_ids.size() << " skipped); alignment "
            << state.craft.mean_initial_alignment << " -> "
            << state.craft.mean_final_alignment << "\n";
  for (const auto& w : state.craft.warnings) std::cout << "warning: " << w << "\n";
}

void load_all_artifacts(const CommonOpts& o, ExperimentState& state) {
  load_data_artifacts(o, state);
  state.surrogate = load_model(artifact(o, files::kSurrogate));
  state.scenario = load_scenario(artifact(o, files::kScenario));
  state.craft.poisons = load_poisons(artifact(o, files::kPoisons));
  fill_loaded_craft(state);
}

void cmd_evaluate(const CommonOpts& o) {
  ExperimentState state;
  state.cfg = load_cfg(o);
  load_all_artifacts(o, state);
  ExperimentReport report = base_report(state);
  stage_evaluate(state, report);
  write_report(report, o.out_dir);
  print_report_summary(report, std::cout);
}

void cmd_defend(const CommonOpts& o) {
  ExperimentState state;
  state.cfg = load_cfg(o);
  load_all_artifacts(o, state);
  ExperimentReport report;
  if (fs::exists(artifact(o, files::kReport)))
    report = load_report(artifact(o, files::kReport));
  else
    report = base_report(state);
  stage_defend(state, report);
  write_report(report, o.out_dir);
  print_report_summary(report, std::cout);
}

void cmd_sweep(const CommonOpts& o) {
  const ExperimentConfig cfg = load_cfg(o);
  const ExperimentReport report = run_budget_sweep(cfg);
  fs::create_directories(o.out_dir);
  save_experiment_config(cfg, artifact(o, files::kConfig));
  write_report(report, o.out_dir);
  print_report_summary(report, std::cout);
  if (!report.failure_stage.empty())
    throw std::runtime_error("pipeline failed at stage " + report.failure_stage + ": " +
                             report.failure_message);
}

void cmd_report(const CommonOpts& o) {
  const ExperimentReport report = load_report(artifact(o, files::kReport));
  write_report(report, o.out_dir);
  print_report_summary(report, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scenario-injection backdoor laboratory for trajectory prediction"};
  app.require_subcommand(1);

  struct Cmd {
    CLI::App* sub = nullptr;
    CLI::Option* seed_opt = nullptr;
    CommonOpts opts;
    std::function<void(const CommonOpts&)> fn;
  };
  std::vector<std::unique_ptr<Cmd>> cmds;
  auto add = [&](const char* name, const char* desc,
                 std::function<void(const CommonOpts&)> fn) {
    auto c = std::make_unique<Cmd>();
    c->sub = app.add_subcommand(name, desc);
    c->sub->add_option("--config", c->opts.config_path, "experiment config JSON");
    c->seed_opt = c->sub->add_option("--seed", c->opts.seed, "override the master seed");
    c->sub->add_option("--out", c->opts.out_dir, "artifact directory")->capture_default_str();
    c->fn = std::move(fn);
    cmds.push_back(std::move(c));
  };

  add("gen-data", "generate the train/validation scenes and motion statistics", cmd_gen_data);
  add("train", "train the attacker's surrogate predictor on the clean training set", cmd_train);
  add("craft-scenario", "craft the trigger scenario (handcrafted or optimized)",
      cmd_craft_scenario);
  add("craft-poisons", "craft gradient-aligned poisons at the configured budget",
      cmd_craft_poisons);
  add("evaluate", "train victims from scratch and score CA/ASR on the validation set",
      cmd_evaluate);
  add("sweep", "full pipeline plus the poison-budget sweep, in one process", cmd_sweep);
  add("defend", "clip/noise retraining grid and latent-space clustering", cmd_defend);
  add("report", "re-emit CSV tables and a summary from an existing report", cmd_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  for (auto& c : cmds) {
    if (!c->sub->parsed()) continue;
    c->opts.seed_set = c->seed_opt->count() > 0;
    try {
      c->fn(c->opts);
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    } catch (const ValidationError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    } catch (const ParseError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return 0;
}
