#include "tplab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "tplab/errors.hpp"
#include "tplab/random.hpp"

namespace tplab {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------- utilities

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  const std::size_t workers = std::min<std::size_t>(hw, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = w * n / workers;
      const std::size_t hi = (w + 1) * n / workers;
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

// ------------------------------------------------------------- enum strings

std::string combine_to_string(MetricCombine c) {
  switch (c) {
    case MetricCombine::Both: return "both";
    case MetricCombine::Either: return "either";
    case MetricCombine::FdeOnly: return "fde";
    case MetricCombine::AdeOnly: return "ade";
  }
  return "both";
}

MetricCombine combine_from_string(const std::string& s) {
  if (s == "both") return MetricCombine::Both;
  if (s == "either") return MetricCombine::Either;
  if (s == "fde") return MetricCombine::FdeOnly;
  if (s == "ade") return MetricCombine::AdeOnly;
  throw ConfigError("unknown metric combine mode: " + s);
}

// ------------------------------------------------------------- config JSON

json arch_to_json(const ArchSpec& a) {
  return json{{"variant", a.variant}, {"hidden", a.hidden}};
}

ArchSpec arch_from_json(const json& j) {
  if (j.is_string()) return arch_variant(j.get<std::string>());
  check_keys(j, {"variant", "hidden"}, "arch");
  ArchSpec a;
  get_if(j, "variant", a.variant);
  get_if(j, "hidden", a.hidden);
  if (a.hidden.empty()) a = arch_variant(a.variant);
  return a;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["master_seed"] = c.master_seed;
  j["num_train"] = c.num_train;
  j["num_val"] = c.num_val;
  j["dataset"] = {{"agents_per_scene", c.dataset.agents_per_scene},
                  {"agents_min", c.dataset.agents_min},
                  {"light_traffic_prob", c.dataset.light_traffic_prob},
                  {"congested_prob", c.dataset.congested_prob},
                  {"obs_len", c.dataset.obs_len},
                  {"fut_len", c.dataset.fut_len},
                  {"dt", c.dataset.dt},
                  {"speed_min", c.dataset.speed_min},
                  {"speed_max", c.dataset.speed_max},
                  {"behavior_mix",
                   {{"straight", c.dataset.mix.straight},
                    {"lane_change", c.dataset.mix.lane_change},
                    {"decelerate", c.dataset.mix.decelerate}}},
                  {"lane_width", c.dataset.lane_width},
                  {"corridor_heading_jitter", c.dataset.corridor_heading_jitter},
                  {"position_span", c.dataset.position_span}};
  j["max_agent_slots"] = c.max_agent_slots;
  j["context_init"] = c.context_init;
  j["surrogate_arch"] = arch_to_json(c.surrogate_arch);
  j["victim_gray_arch"] = arch_to_json(c.victim_gray_arch);
  j["victim_black_arch"] = arch_to_json(c.victim_black_arch);
  j["train"] = {{"epochs", c.train.epochs},       {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},               {"momentum", c.train.momentum},
                {"lr_decay", c.train.lr_decay},   {"grad_clip", c.train.grad_clip},
                {"noise_std", c.train.noise_std}, {"weight_decay", c.train.weight_decay},
                {"avg_tail", c.train.avg_tail}};
  j["scenario_mode"] = to_string(c.scenario_mode);
  j["trigger_count"] = c.trigger_count;
  j["lane_spacing"] = c.lane_spacing;
  j["gap"] = {{"start_idx", c.gap.start_idx}, {"len", c.gap.len}};
  j["objective"] = {
      {"kind", c.objective.kind == AttackObjective::Kind::LaneChange ? "lane-change"
                                                                     : "speed-change"},
      {"side", c.objective.side == AttackObjective::Side::Left ? "left" : "right"},
      {"offset", c.objective.offset},
      {"direction", c.objective.direction == AttackObjective::Direction::Up ? "up" : "down"},
      {"scale", c.objective.scale}};
  j["trigger_opt"] = {{"steps", c.trigger_opt.steps}, {"lr", c.trigger_opt.lr}};
  j["trigger_opt_scenes"] = c.trigger_opt_scenes;
  j["craft"] = {{"budget", c.craft.budget},
                {"alpha", c.craft.alpha},
                {"max_steps", c.craft.max_steps},
                {"signed_update", c.craft.signed_update},
                {"selection", to_string(c.craft.selection)}};
  j["thresholds"] = {{"ca", c.thresholds.ca},
                     {"asr", c.thresholds.asr},
                     {"ca_combine", combine_to_string(c.thresholds.ca_combine)},
                     {"asr_combine", combine_to_string(c.thresholds.asr_combine)}};
  j["budgets"] = c.budgets;
  j["defense_grid"] = {{"clip", c.defense_grid.clip_values},
                       {"noise", c.defense_grid.noise_values}};
  j["cluster"] = {{"k", c.cluster.k},
                  {"restarts", c.cluster.restarts},
                  {"max_iters", c.cluster.max_iters},
                  {"rel_tol", c.cluster.rel_tol}};
  j["run_black_box"] = c.run_black_box;
  j["run_defenses"] = c.run_defenses;
  j["bounds"] = {{"a_max", c.bounds.a_max}, {"kappa_max", c.bounds.kappa_max}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j,
             {"master_seed", "num_train", "num_val", "dataset", "max_agent_slots",
              "context_init", "surrogate_arch", "victim_gray_arch", "victim_black_arch", "train",
              "scenario_mode", "trigger_count", "lane_spacing", "gap", "objective",
              "trigger_opt", "trigger_opt_scenes", "craft", "thresholds", "budgets",
              "defense_grid", "cluster", "run_black_box", "run_defenses", "bounds"},
             "config");
  ExperimentConfig c;
  get_if(j, "master_seed", c.master_seed);
  get_if(j, "num_train", c.num_train);
  get_if(j, "num_val", c.num_val);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d,
               {"agents_per_scene", "agents_min", "light_traffic_prob", "congested_prob",
                "obs_len", "fut_len", "dt", "speed_min", "speed_max", "behavior_mix",
                "lane_width", "corridor_heading_jitter", "position_span"},
               "dataset");
    get_if(d, "agents_per_scene", c.dataset.agents_per_scene);
    get_if(d, "agents_min", c.dataset.agents_min);
    get_if(d, "light_traffic_prob", c.dataset.light_traffic_prob);
    get_if(d, "congested_prob", c.dataset.congested_prob);
    get_if(d, "obs_len", c.dataset.obs_len);
    get_if(d, "fut_len", c.dataset.fut_len);
    get_if(d, "dt", c.dataset.dt);
    get_if(d, "speed_min", c.dataset.speed_min);
    get_if(d, "speed_max", c.dataset.speed_max);
    if (d.contains("behavior_mix")) {
      const json& m = d.at("behavior_mix");
      check_keys(m, {"straight", "lane_change", "decelerate"}, "behavior_mix");
      get_if(m, "straight", c.dataset.mix.straight);
      get_if(m, "lane_change", c.dataset.mix.lane_change);
      get_if(m, "decelerate", c.dataset.mix.decelerate);
    }
    get_if(d, "lane_width", c.dataset.lane_width);
    get_if(d, "corridor_heading_jitter", c.dataset.corridor_heading_jitter);
    get_if(d, "position_span", c.dataset.position_span);
  }
  get_if(j, "max_agent_slots", c.max_agent_slots);
  get_if(j, "context_init", c.context_init);
  if (j.contains("surrogate_arch")) c.surrogate_arch = arch_from_json(j.at("surrogate_arch"));
  if (j.contains("victim_gray_arch"))
    c.victim_gray_arch = arch_from_json(j.at("victim_gray_arch"));
  if (j.contains("victim_black_arch"))
    c.victim_black_arch = arch_from_json(j.at("victim_black_arch"));
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, {"epochs", "batch_size", "lr", "momentum", "lr_decay", "grad_clip",
                   "noise_std", "weight_decay", "avg_tail"},
               "train");
    get_if(t, "epochs", c.train.epochs);
    get_if(t, "batch_size", c.train.batch_size);
    get_if(t, "lr", c.train.lr);
    get_if(t, "momentum", c.train.momentum);
    get_if(t, "lr_decay", c.train.lr_decay);
    get_if(t, "grad_clip", c.train.grad_clip);
    get_if(t, "noise_std", c.train.noise_std);
    get_if(t, "weight_decay", c.train.weight_decay);
    get_if(t, "avg_tail", c.train.avg_tail);
  }
  if (j.contains("scenario_mode"))
    c.scenario_mode = scenario_mode_from_string(j.at("scenario_mode").get<std::string>());
  get_if(j, "trigger_count", c.trigger_count);
  get_if(j, "lane_spacing", c.lane_spacing);
  if (j.contains("gap")) {
    const json& g = j.at("gap");
    check_keys(g, {"start_idx", "len"}, "gap");
    get_if(g, "start_idx", c.gap.start_idx);
    get_if(g, "len", c.gap.len);
  }
  if (j.contains("objective")) {
    const json& o = j.at("objective");
    check_keys(o, {"kind", "side", "offset", "direction", "scale"}, "objective");
    if (o.contains("kind")) {
      const std::string k = o.at("kind").get<std::string>();
      if (k == "lane-change")
        c.objective.kind = AttackObjective::Kind::LaneChange;
      else if (k == "speed-change")
        c.objective.kind = AttackObjective::Kind::SpeedChange;
      else
        throw ConfigError("unknown objective kind: " + k);
    }
    if (o.contains("side")) {
      const std::string s = o.at("side").get<std::string>();
      if (s == "left")
        c.objective.side = AttackObjective::Side::Left;
      else if (s == "right")
        c.objective.side = AttackObjective::Side::Right;
      else
        throw ConfigError("unknown objective side: " + s);
    }
    get_if(o, "offset", c.objective.offset);
    if (o.contains("direction")) {
      const std::string d = o.at("direction").get<std::string>();
      if (d == "up")
        c.objective.direction = AttackObjective::Direction::Up;
      else if (d == "down")
        c.objective.direction = AttackObjective::Direction::Down;
      else
        throw ConfigError("unknown objective direction: " + d);
    }
    get_if(o, "scale", c.objective.scale);
  }
  if (j.contains("trigger_opt")) {
    const json& t = j.at("trigger_opt");
    check_keys(t, {"steps", "lr"}, "trigger_opt");
    get_if(t, "steps", c.trigger_opt.steps);
    get_if(t, "lr", c.trigger_opt.lr);
  }
  get_if(j, "trigger_opt_scenes", c.trigger_opt_scenes);
  if (j.contains("craft")) {
    const json& p = j.at("craft");
    check_keys(p, {"budget", "alpha", "max_steps", "signed_update", "selection"}, "craft");
    get_if(p, "budget", c.craft.budget);
    get_if(p, "alpha", c.craft.alpha);
    get_if(p, "max_steps", c.craft.max_steps);
    get_if(p, "signed_update", c.craft.signed_update);
    if (p.contains("selection"))
      c.craft.selection = poison_selection_from_string(p.at("selection").get<std::string>());
  }
  if (j.contains("thresholds")) {
    const json& t = j.at("thresholds");
    check_keys(t, {"ca", "asr", "ca_combine", "asr_combine"}, "thresholds");
    get_if(t, "ca", c.thresholds.ca);
    get_if(t, "asr", c.thresholds.asr);
    if (t.contains("ca_combine"))
      c.thresholds.ca_combine = combine_from_string(t.at("ca_combine").get<std::string>());
    if (t.contains("asr_combine"))
      c.thresholds.asr_combine = combine_from_string(t.at("asr_combine").get<std::string>());
  }
  get_if(j, "budgets", c.budgets);
  if (j.contains("defense_grid")) {
    const json& d = j.at("defense_grid");
    check_keys(d, {"clip", "noise"}, "defense_grid");
    get_if(d, "clip", c.defense_grid.clip_values);
    get_if(d, "noise", c.defense_grid.noise_values);
  }
  if (j.contains("cluster")) {
    const json& k = j.at("cluster");
    check_keys(k, {"k", "restarts", "max_iters", "rel_tol"}, "cluster");
    get_if(k, "k", c.cluster.k);
    get_if(k, "restarts", c.cluster.restarts);
    get_if(k, "max_iters", c.cluster.max_iters);
    get_if(k, "rel_tol", c.cluster.rel_tol);
  }
  get_if(j, "run_black_box", c.run_black_box);
  get_if(j, "run_defenses", c.run_defenses);
  if (j.contains("bounds")) {
    const json& b = j.at("bounds");
    check_keys(b, {"a_max", "kappa_max"}, "bounds");
    get_if(b, "a_max", c.bounds.a_max);
    get_if(b, "kappa_max", c.bounds.kappa_max);
  }
  return c;
}

// ---------------------------------------------------------------- training

std::vector<EncodedScene> encode_all(const std::vector<DrivingScene>& scenes,
                                     const EncoderLayout& layout) {
  std::vector<EncodedScene> enc(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) { enc[i] = encode_scene(scenes[i], layout); });
  return enc;
}

MlpModel train_model(const EncoderLayout& layout, const ArchSpec& arch, std::uint64_t init_seed,
                     std::uint64_t train_seed, const std::vector<DrivingScene>& scenes,
                     const TrainConfig& cfg) {
  MlpModel m(layout, arch.hidden, init_seed);
  const std::vector<EncodedScene> enc = encode_all(scenes, layout);
  train(m, enc, cfg, train_seed);
  return m;
}

// --------------------------------------------------------------- evaluation

struct EvalSet {
  std::vector<std::string> ids;
  std::vector<EncodedScene> enc;
  std::vector<std::vector<Vec2>> gt;       // world-frame target futures
  std::vector<double> heading_ref;
  std::size_t overlapped = 0;              // placements that could not avoid overlap
};

EvalSet build_eval_set(const std::vector<DrivingScene>& scenes, const EncoderLayout& layout) {
  EvalSet set;
  set.ids.reserve(scenes.size());
  set.gt.reserve(scenes.size());
  set.heading_ref.reserve(scenes.size());
  for (const auto& s : scenes) {
    set.ids.push_back(s.scene_id);
    set.gt.push_back(s.target().fut.points);
    set.heading_ref.push_back(reference_heading(s.target().obs));
  }
  set.enc = encode_all(scenes, layout);
  return set;
}

// Every validation scene gets the scenario, taking the best available
// placement even when separation cannot be met.
std::vector<DrivingScene> trigger_all(const std::vector<DrivingScene>& scenes,
                                      const TriggerScenario& scenario, std::size_t* overlapped) {
  std::vector<DrivingScene> out(scenes.size());
  std::size_t bad = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const PlacementPlan plan = plan_placement(scenes[i], scenario, /*allow_overlap=*/true);
    if (!plan.overlap_free) ++bad;
    out[i] = apply_placement(scenes[i], scenario, plan);
  }
  if (overlapped) *overlapped = bad;
  return out;
}

std::vector<MetricRecord> score_model(const MlpModel& model, const EvalSet& set) {
  std::vector<MetricRecord> rec(set.enc.size());
  parallel_for(set.enc.size(), [&](std::size_t i) {
    const std::vector<Vec2> pred =
        decode_waypoints(set.enc[i], model.predict(set.enc[i].x));
    rec[i] = score_prediction(pred, set.gt[i], set.heading_ref[i]);
  });
  return rec;
}

double mean_fde(const std::vector<MetricRecord>& rec) {
  double s = 0.0;
  for (const auto& r : rec) s += r.fde;
  return rec.empty() ? 0.0 : s / static_cast<double>(rec.size());
}

double mean_ade(const std::vector<MetricRecord>& rec) {
  double s = 0.0;
  for (const auto& r : rec) s += r.ade;
  return rec.empty() ? 0.0 : s / static_cast<double>(rec.size());
}

std::vector<bool> poison_flags_for(const std::vector<DrivingScene>& train_scenes,
                                   const std::vector<PoisonedScene>& poisons) {
  std::set<std::string> poisoned;
  for (const auto& p : poisons) poisoned.insert(p.base_scene_id);
  std::vector<bool> flags(train_scenes.size(), false);
  for (std::size_t i = 0; i < train_scenes.size(); ++i)
    flags[i] = poisoned.count(train_scenes[i].scene_id) > 0;
  return flags;
}

// ------------------------------------------------------------- report JSON

json report_to_json(const ExperimentReport& r) {
  json j;
  j["config_hash"] = r.config_hash;
  j["seeds"] = r.seeds;
  j["failure_stage"] = r.failure_stage;
  j["failure_message"] = r.failure_message;
  j["num_train"] = r.num_train;
  j["num_val"] = r.num_val;
  j["scenario_provenance"] = r.scenario_provenance;
  j["scenario_min_distance"] = r.scenario_min_distance;
  j["trigger_seed_loss"] = r.trigger_seed_loss;
  j["trigger_best_loss"] = r.trigger_best_loss;
  j["poisons_requested"] = r.poisons_requested;
  j["poisons_emitted"] = r.poisons_emitted;
  j["poisons_skipped"] = r.poisons_skipped;
  j["degenerate_poisons"] = r.degenerate_poisons;
  j["annihilated_poisons"] = r.annihilated_poisons;
  j["mean_initial_alignment"] = r.mean_initial_alignment;
  j["mean_final_alignment"] = r.mean_final_alignment;
  j["clean_model_asr"] = r.clean_model_asr;
  j["settings"] = json::array();
  for (const auto& s : r.settings)
    j["settings"].push_back({{"setting", s.setting},
                             {"scenario", s.scenario},
                             {"surrogate", s.surrogate},
                             {"victim", s.victim},
                             {"clean_fde", s.clean_fde},
                             {"clean_ade", s.clean_ade},
                             {"trig_fde", s.trig_fde},
                             {"trig_ade", s.trig_ade},
                             {"ca", s.ca},
                             {"asr", s.asr}});
  j["scene_metrics"] = json::array();
  for (const auto& m : r.scene_metrics)
    j["scene_metrics"].push_back({{"scene_id", m.scene_id},
                                  {"fde_clean", m.fde_clean},
                                  {"fde_victim", m.fde_victim},
                                  {"ade_clean", m.ade_clean},
                                  {"ade_victim", m.ade_victim},
                                  {"lrd", m.lrd},
                                  {"frd", m.frd},
                                  {"triggered", m.triggered}});
  j["budget_curve"] = json::array();
  for (const auto& b : r.budget_curve)
    j["budget_curve"].push_back({{"budget", b.budget},
                                 {"asr", b.asr},
                                 {"ca", b.ca},
                                 {"mean_final_alignment", b.mean_final_alignment},
                                 {"poisons", b.poisons}});
  j["defense_table"] = json::array();
  for (const auto& d : r.defense_table)
    j["defense_table"].push_back({{"clip", d.clip},
                                  {"noise", d.noise},
                                  {"asr", d.asr},
                                  {"ca", d.ca},
                                  {"defender_best", d.defender_best}});
  j["detection"] = {{"ran", r.detection.ran},
                    {"silhouette_poisoned", r.detection.silhouette_poisoned},
                    {"silhouette_clean", r.detection.silhouette_clean},
                    {"precision", r.detection.precision},
                    {"recall", r.detection.recall},
                    {"false_positive_rate", r.detection.false_positive_rate},
                    {"smaller_cluster_fraction", r.detection.smaller_cluster_fraction},
                    {"degenerate", r.detection.degenerate}};
  j["latents"] = json::array();
  for (const auto& l : r.latents)
    j["latents"].push_back(
        {{"scene_id", l.scene_id}, {"is_poison", l.is_poison}, {"values", l.values}});
  j["warnings"] = r.warnings;
  return j;
}

ExperimentReport report_from_json(const json& j) {
  ExperimentReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
  r.failure_stage = j.at("failure_stage").get<std::string>();
  r.failure_message = j.at("failure_message").get<std::string>();
  r.num_train = j.at("num_train").get<int>();
  r.num_val = j.at("num_val").get<int>();
  r.scenario_provenance = j.at("scenario_provenance").get<std::string>();
  r.scenario_min_distance = j.at("scenario_min_distance").get<double>();
  r.trigger_seed_loss = j.at("trigger_seed_loss").get<double>();
  r.trigger_best_loss = j.at("trigger_best_loss").get<double>();
  r.poisons_requested = j.at("poisons_requested").get<int>();
  r.poisons_emitted = j.at("poisons_emitted").get<int>();
  r.poisons_skipped = j.at("poisons_skipped").get<int>();
  r.degenerate_poisons = j.at("degenerate_poisons").get<int>();
  r.annihilated_poisons = j.at("annihilated_poisons").get<int>();
  r.mean_initial_alignment = j.at("mean_initial_alignment").get<double>();
  r.mean_final_alignment = j.at("mean_final_alignment").get<double>();
  r.clean_model_asr = j.at("clean_model_asr").get<double>();
  for (const auto& s : j.at("settings")) {
    SettingRow row;
    row.setting = s.at("setting").get<std::string>();
    row.scenario = s.at("scenario").get<std::string>();
    row.surrogate = s.at("surrogate").get<std::string>();
    row.victim = s.at("victim").get<std::string>();
    row.clean_fde = s.at("clean_fde").get<double>();
    row.clean_ade = s.at("clean_ade").get<double>();
    row.trig_fde = s.at("trig_fde").get<double>();
    row.trig_ade = s.at("trig_ade").get<double>();
    row.ca = s.at("ca").get<double>();
    row.asr = s.at("asr").get<double>();
    r.settings.push_back(std::move(row));
  }
  for (const auto& m : j.at("scene_metrics")) {
    SceneMetricRow row;
    row.scene_id = m.at("scene_id").get<std::string>();
    row.fde_clean = m.at("fde_clean").get<double>();
    row.fde_victim = m.at("fde_victim").get<double>();
    row.ade_clean = m.at("ade_clean").get<double>();
    row.ade_victim = m.at("ade_victim").get<double>();
    row.lrd = m.at("lrd").get<double>();
    row.frd = m.at("frd").get<double>();
    row.triggered = m.at("triggered").get<bool>();
    r.scene_metrics.push_back(std::move(row));
  }
  for (const auto& b : j.at("budget_curve")) {
    BudgetPoint p;
    p.budget = b.at("budget").get<double>();
    p.asr = b.at("asr").get<double>();
    p.ca = b.at("ca").get<double>();
    p.mean_final_alignment = b.at("mean_final_alignment").get<double>();
    p.poisons = b.at("poisons").get<int>();
    r.budget_curve.push_back(p);
  }
  for (const auto& d : j.at("defense_table")) {
    DefenseRow row;
    row.clip = d.at("clip").get<double>();
    row.noise = d.at("noise").get<double>();
    row.asr = d.at("asr").get<double>();
    row.ca = d.at("ca").get<double>();
    row.defender_best = d.at("defender_best").get<bool>();
    r.defense_table.push_back(row);
  }
  const json& det = j.at("detection");
  r.detection.ran = det.at("ran").get<bool>();
  r.detection.silhouette_poisoned = det.at("silhouette_poisoned").get<double>();
  r.detection.silhouette_clean = det.at("silhouette_clean").get<double>();
  r.detection.precision = det.at("precision").get<double>();
  r.detection.recall = det.at("recall").get<double>();
  r.detection.false_positive_rate = det.at("false_positive_rate").get<double>();
  r.detection.smaller_cluster_fraction = det.at("smaller_cluster_fraction").get<double>();
  r.detection.degenerate = det.at("degenerate").get<bool>();
  for (const auto& l : j.at("latents")) {
    LatentRow row;
    row.scene_id = l.at("scene_id").get<std::string>();
    row.is_poison = l.at("is_poison").get<bool>();
    row.values = l.at("values").get<std::vector<double>>();
    r.latents.push_back(std::move(row));
  }
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

}  // namespace

// ----------------------------------------------------------------- config

ArchSpec arch_variant(const std::string& tag) {
  if (tag == "A") return {"A", {48, 32}};
  if (tag == "B") return {"B", {64, 24}};
  throw ConfigError("unknown architecture variant: " + tag);
}

std::string to_string(ScenarioMode m) {
  switch (m) {
    case ScenarioMode::Imitating: return "imitating";
    case ScenarioMode::Discontinued: return "discontinued";
    case ScenarioMode::Optimized: return "optimized";
  }
  return "optimized";
}

ScenarioMode scenario_mode_from_string(const std::string& s) {
  if (s == "imitating") return ScenarioMode::Imitating;
  if (s == "discontinued") return ScenarioMode::Discontinued;
  if (s == "optimized") return ScenarioMode::Optimized;
  throw ConfigError("unknown scenario mode: " + s);
}

EncoderLayout ExperimentConfig::layout() const {
  EncoderLayout l;
  l.max_agents = max_agent_slots;
  l.obs_len = dataset.obs_len;
  l.horizon = dataset.fut_len;
  l.context_init = context_init;
  return l;
}

void ExperimentConfig::validate() const {
  if (num_train < 1 || num_val < 1) throw ConfigError("num_train and num_val must be >= 1");
  SceneGenConfig ds = dataset;
  ds.num_scenes = num_train + num_val;
  ds.validate();
  layout().validate();
  train.validate();
  if (trigger_count < 1) throw ConfigError("trigger_count must be >= 1");
  if (lane_spacing <= 0.0) throw ConfigError("lane_spacing must be > 0");
  objective.validate();
  trigger_opt.validate();
  if (trigger_opt_scenes < 1) throw ConfigError("trigger_opt_scenes must be >= 1");
  craft.validate();
  if (!(thresholds.ca > 0.0) || !(thresholds.asr > 0.0))
    throw ConfigError("evaluation thresholds must be > 0");
  for (double b : budgets)
    if (!(b > 0.0 && b <= 1.0)) throw ConfigError("budget values must lie in (0, 1]");
  cluster.validate();
  if (surrogate_arch.variant != victim_gray_arch.variant ||
      surrogate_arch.hidden != victim_gray_arch.hidden)
    throw ConfigError("gray-box victim must share the surrogate architecture");
  if (run_black_box && victim_black_arch.variant == surrogate_arch.variant)
    throw ConfigError("black-box victim must use a different architecture variant");
}

ExperimentConfig reference_config() { return {}; }

void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path.string());
  out << config_to_json(cfg).dump(2) << "\n";
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string canonical_config_dump(const ExperimentConfig& cfg) {
  return config_to_json(cfg).dump();
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config_dump(cfg))));
  return buf;
}

// ------------------------------------------------------------------ stages

std::map<std::string, std::uint64_t> derive_seeds(const ExperimentConfig& cfg) {
  RandomStream root(cfg.master_seed);
  std::map<std::string, std::uint64_t> seeds;
  const std::vector<std::string> order = {
      "data",           "surrogate_init",    "surrogate_train", "victim_gray_init",
      "victim_gray_train", "victim_black_init", "victim_black_train", "poison_select",
      "cluster"};
  for (std::size_t i = 0; i < order.size(); ++i)
    seeds[order[i]] = root.fork(static_cast<std::uint64_t>(i + 1)).next_u64();
  return seeds;
}

void stage_generate_data(ExperimentState& state) {
  state.cfg.validate();
  if (state.seeds.empty()) state.seeds = derive_seeds(state.cfg);
  SceneGenConfig ds = state.cfg.dataset;
  ds.num_scenes = state.cfg.num_train + state.cfg.num_val;
  std::vector<DrivingScene> all = generate_dataset(ds, state.seeds.at("data"));
  state.train_scenes.assign(all.begin(), all.begin() + state.cfg.num_train);
  state.val_scenes.assign(all.begin() + state.cfg.num_train, all.end());
  state.stats = compute_dataset_stats(state.train_scenes);
}

void stage_train_surrogate(ExperimentState& state) {
  if (state.seeds.empty()) state.seeds = derive_seeds(state.cfg);
  state.surrogate =
      train_model(state.cfg.layout(), state.cfg.surrogate_arch, state.seeds.at("surrogate_init"),
                  state.seeds.at("surrogate_train"), state.train_scenes, state.cfg.train);
}

void stage_craft_scenario(ExperimentState& state) {
  const ExperimentConfig& cfg = state.cfg;
  if (state.train_scenes.empty()) throw ConfigError("no training scenes loaded");
  const DrivingScene& host = state.train_scenes.front();
  switch (cfg.scenario_mode) {
    case ScenarioMode::Imitating:
      state.scenario = craft_imitating(host, cfg.trigger_count, cfg.lane_spacing, cfg.bounds);
      state.trigger_seed_loss = state.trigger_best_loss = 0.0;
      break;
    case ScenarioMode::Discontinued:
      state.scenario = craft_discontinued(host, cfg.trigger_count, cfg.gap, state.stats,
                                          cfg.lane_spacing, 0.25, cfg.bounds);
      state.trigger_seed_loss = state.trigger_best_loss = 0.0;
      break;
    case ScenarioMode::Optimized: {
      const TriggerScenario seed =
          craft_imitating(host, cfg.trigger_count, cfg.lane_spacing, cfg.bounds);
      const std::size_t n =
          std::min<std::size_t>(state.train_scenes.size(),
                                static_cast<std::size_t>(cfg.trigger_opt_scenes));
      const OptimizeTriggerResult opt = optimize_trigger(
          state.surrogate, std::span(state.train_scenes).first(n), seed, cfg.objective,
          state.stats, cfg.trigger_opt, cfg.bounds);
      state.scenario = opt.scenario;
      state.trigger_seed_loss = opt.seed_loss;
      state.trigger_best_loss = opt.best_loss;
      break;
    }
  }
}

void stage_craft_poisons(ExperimentState& state) {
  if (state.seeds.empty()) state.seeds = derive_seeds(state.cfg);
  CraftConfig cc = state.cfg.craft;
  cc.seed = state.seeds.at("poison_select");
  state.craft = craft_poisons(state.surrogate, state.train_scenes, state.scenario,
                              state.cfg.objective, cc, state.stats, state.cfg.bounds);
}

void stage_evaluate(ExperimentState& state, ExperimentReport& report) {
  const ExperimentConfig& cfg = state.cfg;
  if (state.seeds.empty()) state.seeds = derive_seeds(cfg);
  const EncoderLayout layout = cfg.layout();

  const std::vector<DrivingScene> mixed =
      merge_poisons(state.train_scenes, state.craft.poisons);

  state.victim_gray =
      train_model(layout, cfg.victim_gray_arch, state.seeds.at("victim_gray_init"),
                  state.seeds.at("victim_gray_train"), mixed, cfg.train);
  state.clean_gray =
      train_model(layout, cfg.victim_gray_arch, state.seeds.at("victim_gray_init"),
                  state.seeds.at("victim_gray_train"), state.train_scenes, cfg.train);
  if (cfg.run_black_box) {
    state.victim_black =
        train_model(layout, cfg.victim_black_arch, state.seeds.at("victim_black_init"),
                    state.seeds.at("victim_black_train"), mixed, cfg.train);
    state.clean_black =
        train_model(layout, cfg.victim_black_arch, state.seeds.at("victim_black_init"),
                    state.seeds.at("victim_black_train"), state.train_scenes, cfg.train);
  }
  state.models_trained = true;

  const EvalSet clean_set = build_eval_set(state.val_scenes, layout);
  std::size_t overlapped = 0;
  const std::vector<DrivingScene> triggered_val =
      trigger_all(state.val_scenes, state.scenario, &overlapped);
  const EvalSet trig_set = build_eval_set(triggered_val, layout);
  if (overlapped > 0)
    report.warnings.push_back(std::to_string(overlapped) +
                              " validation placements kept an overlap");

  const auto rec_cc = score_model(state.clean_gray, clean_set);   // clean model, clean input
  const auto rec_ct = score_model(state.clean_gray, trig_set);    // clean model, triggered
  const auto rec_vc = score_model(state.victim_gray, clean_set);  // victim, clean input
  const auto rec_vt = score_model(state.victim_gray, trig_set);   // victim, triggered

  const EvalThresholds& th = cfg.thresholds;
  report.clean_model_asr = attack_success_rate(rec_ct, rec_cc, th.asr, th.asr_combine);

  const std::string mode = to_string(cfg.scenario_mode);
  SettingRow base_row{"clean-baseline-gray", mode, "-", cfg.victim_gray_arch.variant,
                      mean_fde(rec_cc), mean_ade(rec_cc), mean_fde(rec_ct), mean_ade(rec_ct),
                      1.0, report.clean_model_asr};
  report.settings.push_back(base_row);

  SettingRow gray_row{"gray-box",
                      mode,
                      cfg.surrogate_arch.variant,
                      cfg.victim_gray_arch.variant,
                      mean_fde(rec_vc),
                      mean_ade(rec_vc),
                      mean_fde(rec_vt),
                      mean_ade(rec_vt),
                      clean_accuracy(rec_cc, rec_vc, th.ca, th.ca_combine),
                      attack_success_rate(rec_vt, rec_vc, th.asr, th.asr_combine)};
  report.settings.push_back(gray_row);

  if (cfg.run_black_box) {
    const auto rec_bcc = score_model(state.clean_black, clean_set);
    const auto rec_bct = score_model(state.clean_black, trig_set);
    const auto rec_bvc = score_model(state.victim_black, clean_set);
    const auto rec_bvt = score_model(state.victim_black, trig_set);
    report.settings.push_back({"clean-baseline-black", mode, "-",
                               cfg.victim_black_arch.variant, mean_fde(rec_bcc),
                               mean_ade(rec_bcc), mean_fde(rec_bct), mean_ade(rec_bct), 1.0,
                               attack_success_rate(rec_bct, rec_bcc, th.asr, th.asr_combine)});
    report.settings.push_back(
        {"black-box", mode, cfg.surrogate_arch.variant, cfg.victim_black_arch.variant,
         mean_fde(rec_bvc), mean_ade(rec_bvc), mean_fde(rec_bvt), mean_ade(rec_bvt),
         clean_accuracy(rec_bcc, rec_bvc, th.ca, th.ca_combine),
         attack_success_rate(rec_bvt, rec_bvc, th.asr, th.asr_combine)});
  }

  report.scene_metrics.clear();
  for (std::size_t i = 0; i < clean_set.ids.size(); ++i)
    report.scene_metrics.push_back({clean_set.ids[i], rec_cc[i].fde, rec_vc[i].fde,
                                    rec_cc[i].ade, rec_vc[i].ade, rec_vc[i].lrd, rec_vc[i].frd,
                                    false});
  for (std::size_t i = 0; i < trig_set.ids.size(); ++i)
    report.scene_metrics.push_back({trig_set.ids[i], rec_ct[i].fde, rec_vt[i].fde,
                                    rec_ct[i].ade, rec_vt[i].ade, rec_vt[i].lrd, rec_vt[i].frd,
                                    true});

  report.scenario_min_distance = scenario_min_distance(state.scenario, state.train_scenes);
}

void stage_defend(ExperimentState& state, ExperimentReport& report) {
  const ExperimentConfig& cfg = state.cfg;
  if (state.seeds.empty()) state.seeds = derive_seeds(cfg);
  const EncoderLayout layout = cfg.layout();
  const std::vector<DrivingScene> mixed =
      merge_poisons(state.train_scenes, state.craft.poisons);

  if (!state.models_trained) {
    state.victim_gray =
        train_model(layout, cfg.victim_gray_arch, state.seeds.at("victim_gray_init"),
                    state.seeds.at("victim_gray_train"), mixed, cfg.train);
    state.clean_gray =
        train_model(layout, cfg.victim_gray_arch, state.seeds.at("victim_gray_init"),
                    state.seeds.at("victim_gray_train"), state.train_scenes, cfg.train);
  }

  // latent-space detection on the poisoned victim, contrasted with the clean
  // model over the clean training set
  const std::vector<bool> flags = poison_flags_for(state.train_scenes, state.craft.poisons);
  const auto latents_victim = collect_latents(state.victim_gray, mixed);
  const DetectionReport det =
      activation_clustering(latents_victim, flags, state.seeds.at("cluster"), cfg.cluster);
  const auto latents_clean = collect_latents(state.clean_gray, state.train_scenes);
  const std::vector<bool> no_flags(state.train_scenes.size(), false);
  const DetectionReport det_clean =
      activation_clustering(latents_clean, no_flags, state.seeds.at("cluster"), cfg.cluster);

  report.detection.ran = true;
  report.detection.silhouette_poisoned = det.silhouette;
  report.detection.silhouette_clean = det_clean.silhouette;
  report.detection.precision = det.precision;
  report.detection.recall = det.recall;
  report.detection.false_positive_rate = det.false_positive_rate;
  report.detection.smaller_cluster_fraction = det.smaller_cluster_fraction;
  report.detection.degenerate = det.degenerate;

  report.latents.clear();
  for (std::size_t i = 0; i < mixed.size(); ++i)
    report.latents.push_back({mixed[i].scene_id, flags[i], latents_victim[i]});

  // clip x noise retraining grid
  const EvalSet clean_set = build_eval_set(state.val_scenes, layout);
  const std::vector<DrivingScene> triggered_val =
      trigger_all(state.val_scenes, state.scenario, nullptr);
  const EvalSet trig_set = build_eval_set(triggered_val, layout);
  const auto rec_cc = score_model(state.clean_gray, clean_set);
  const std::vector<EncodedScene> enc_mixed = encode_all(mixed, layout);

  report.defense_table.clear();
  const EvalThresholds& th = cfg.thresholds;
  for (double clip : cfg.defense_grid.clip_values) {
    for (double noise : cfg.defense_grid.noise_values) {
      MlpModel m(layout, cfg.victim_gray_arch.hidden, state.seeds.at("victim_gray_init"));
      robust_train(m, enc_mixed, cfg.train, {clip, noise},
                   state.seeds.at("victim_gray_train"));
      const auto rc = score_model(m, clean_set);
      const auto rt = score_model(m, trig_set);
      DefenseRow row;
      row.clip = clip;
      row.noise = noise;
      row.ca = clean_accuracy(rec_cc, rc, th.ca, th.ca_combine);
      row.asr = attack_success_rate(rt, rc, th.asr, th.asr_combine);
      report.defense_table.push_back(row);
    }
  }
  int best = -1;
  for (std::size_t i = 0; i < report.defense_table.size(); ++i) {
    const DefenseRow& row = report.defense_table[i];
    if (row.ca < 0.75) continue;
    if (best < 0 || row.asr < report.defense_table[static_cast<std::size_t>(best)].asr)
      best = static_cast<int>(i);
  }
  if (best >= 0) report.defense_table[static_cast<std::size_t>(best)].defender_best = true;
}

// ---------------------------------------------------------------- pipeline

namespace {

void fill_craft_diagnostics(const ExperimentState& state, ExperimentReport& report) {
  report.poisons_requested = static_cast<int>(
      std::ceil(state.cfg.craft.budget * static_cast<double>(state.train_scenes.size())));
  report.poisons_emitted = static_cast<int>(state.craft.poisons.size());
  report.poisons_skipped = static_cast<int>(state.craft.skipped_scene_ids.size());
  report.degenerate_poisons = 0;
  report.annihilated_poisons = 0;
  for (const auto& p : state.craft.poisons) {
    if (p.degenerate_alignment) ++report.degenerate_poisons;
    if (p.eta_annihilated) ++report.annihilated_poisons;
  }
  report.mean_initial_alignment = state.craft.mean_initial_alignment;
  report.mean_final_alignment = state.craft.mean_final_alignment;
  for (const auto& w : state.craft.warnings) report.warnings.push_back(w);
}

ExperimentReport run_pipeline(const ExperimentConfig& cfg, ExperimentState& state) {
  ExperimentReport report;
  report.config_hash = config_hash_hex(cfg);
  state.cfg = cfg;

  auto guarded = [&report](const char* stage, auto&& fn) {
    if (!report.failure_stage.empty()) return false;
    try {
      fn();
      return true;
    } catch (const std::exception& e) {
      report.failure_stage = stage;
      report.failure_message = e.what();
      return false;
    }
  };

  guarded("generate-data", [&] {
    stage_generate_data(state);
    report.seeds = state.seeds;
    report.num_train = static_cast<int>(state.train_scenes.size());
    report.num_val = static_cast<int>(state.val_scenes.size());
  });
  guarded("train-surrogate", [&] { stage_train_surrogate(state); });
  guarded("craft-scenario", [&] {
    stage_craft_scenario(state);
    report.scenario_provenance = to_string(state.scenario.provenance);
    report.trigger_seed_loss = state.trigger_seed_loss;
    report.trigger_best_loss = state.trigger_best_loss;
  });
  guarded("craft-poisons", [&] {
    stage_craft_poisons(state);
    fill_craft_diagnostics(state, report);
  });
  guarded("evaluate", [&] { stage_evaluate(state, report); });
  if (cfg.run_defenses) guarded("defend", [&] { stage_defend(state, report); });
  return report;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  ExperimentState state;
  return run_pipeline(cfg, state);
}

ExperimentReport run_budget_sweep(const ExperimentConfig& cfg) {
  ExperimentState state;
  ExperimentReport report = run_pipeline(cfg, state);
  if (!report.failure_stage.empty()) return report;

  const EncoderLayout layout = cfg.layout();
  const EvalSet clean_set = build_eval_set(state.val_scenes, layout);
  const std::vector<DrivingScene> triggered_val =
      trigger_all(state.val_scenes, state.scenario, nullptr);
  const EvalSet trig_set = build_eval_set(triggered_val, layout);
  const auto rec_cc = score_model(state.clean_gray, clean_set);
  const auto rec_ct = score_model(state.clean_gray, trig_set);
  const EvalThresholds& th = cfg.thresholds;

  report.budget_curve.clear();
  // P = 0 baseline: the victim equals the clean model bit for bit
  report.budget_curve.push_back(
      {0.0, attack_success_rate(rec_ct, rec_cc, th.asr, th.asr_combine), 1.0, 0.0, 0});

  std::vector<double> budgets = cfg.budgets;
  std::sort(budgets.begin(), budgets.end());
  const SettingRow* gray_row = nullptr;
  for (const auto& row : report.settings)
    if (row.setting == "gray-box") gray_row = &row;

  try {
    for (double budget : budgets) {
      BudgetPoint point;
      point.budget = budget;
      if (gray_row != nullptr && budget == cfg.craft.budget) {
        point.asr = gray_row->asr;
        point.ca = gray_row->ca;
        point.mean_final_alignment = state.craft.mean_final_alignment;
        point.poisons = static_cast<int>(state.craft.poisons.size());
      } else {
        CraftConfig cc = cfg.craft;
        cc.budget = budget;
        cc.seed = state.seeds.at("poison_select");
        const CraftOutput out = craft_poisons(state.surrogate, state.train_scenes,
                                              state.scenario, cfg.objective, cc, state.stats,
                                              cfg.bounds);
        const std::vector<DrivingScene> mixed = merge_poisons(state.train_scenes, out.poisons);
        const MlpModel victim =
            train_model(layout, cfg.victim_gray_arch, state.seeds.at("victim_gray_init"),
                        state.seeds.at("victim_gray_train"), mixed, cfg.train);
        const auto rc = score_model(victim, clean_set);
        const auto rt = score_model(victim, trig_set);
        point.asr = attack_success_rate(rt, rc, th.asr, th.asr_combine);
        point.ca = clean_accuracy(rec_cc, rc, th.ca, th.ca_combine);
        point.mean_final_alignment = out.mean_final_alignment;
        point.poisons = static_cast<int>(out.poisons.size());
      }
      report.budget_curve.push_back(point);
    }
  } catch (const std::exception& e) {
    report.failure_stage = "budget-sweep";
    report.failure_message = e.what();
  }
  return report;
}

// ------------------------------------------------------------------ output

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / files::kReport);
    if (!out) throw ConfigError("cannot open " + (dir / files::kReport).string());
    out << report_to_json(report).dump(2) << "\n";
  }
  {
    std::ofstream out(dir / files::kSettingsCsv);
    out << "setting,scenario,surrogate,victim,clean_fde,clean_ade,trig_fde,trig_ade,ca,asr\n";
    for (const auto& s : report.settings)
      out << s.setting << ',' << s.scenario << ',' << s.surrogate << ',' << s.victim << ','
          << fmt_double(s.clean_fde) << ',' << fmt_double(s.clean_ade) << ','
          << fmt_double(s.trig_fde) << ',' << fmt_double(s.trig_ade) << ','
          << fmt_double(s.ca) << ',' << fmt_double(s.asr) << "\n";
  }
  {
    std::ofstream out(dir / files::kSceneMetricsCsv);
    out << "scene_id,fde_clean,fde_victim,ade_clean,ade_victim,lrd,frd,triggered\n";
    for (const auto& m : report.scene_metrics)
      out << m.scene_id << ',' << fmt_double(m.fde_clean) << ',' << fmt_double(m.fde_victim)
          << ',' << fmt_double(m.ade_clean) << ',' << fmt_double(m.ade_victim) << ','
          << fmt_double(m.lrd) << ',' << fmt_double(m.frd) << ',' << (m.triggered ? 1 : 0)
          << "\n";
  }
  {
    std::ofstream out(dir / files::kBudgetCsv);
    out << "budget,asr,ca,mean_final_alignment,poisons\n";
    for (const auto& b : report.budget_curve)
      out << fmt_double(b.budget) << ',' << fmt_double(b.asr) << ',' << fmt_double(b.ca) << ','
          << fmt_double(b.mean_final_alignment) << ',' << b.poisons << "\n";
  }
  {
    std::ofstream out(dir / files::kDefenseCsv);
    out << "clip,noise,asr,ca,defender_best\n";
    for (const auto& d : report.defense_table)
      out << fmt_double(d.clip) << ',' << fmt_double(d.noise) << ',' << fmt_double(d.asr)
          << ',' << fmt_double(d.ca) << ',' << (d.defender_best ? 1 : 0) << "\n";
  }
  if (!report.latents.empty()) {
    std::ofstream out(dir / files::kLatentsCsv);
    out << "scene_id,is_poison";
    for (std::size_t i = 0; i < report.latents.front().values.size(); ++i) out << ",l" << i;
    out << "\n";
    for (const auto& l : report.latents) {
      out << l.scene_id << ',' << (l.is_poison ? 1 : 0);
      for (double v : l.values) out << ',' << fmt_double(v);
      out << "\n";
    }
  }
}

ExperimentReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  try {
    return report_from_json(j);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void print_report_summary(const ExperimentReport& report, std::ostream& out) {
  out << "config hash: " << report.config_hash << "\n";
  if (!report.failure_stage.empty()) {
    out << "FAILED at stage '" << report.failure_stage << "': " << report.failure_message
        << "\n";
    return;
  }
  out << "scenes: " << report.num_train << " train / " << report.num_val << " val\n";
  out << "scenario: " << report.scenario_provenance
      << "  (min distance to natural tracks: " << report.scenario_min_distance << " m)\n";
  out << "poisons: " << report.poisons_emitted << " emitted, " << report.poisons_skipped
      << " skipped; alignment " << report.mean_initial_alignment << " -> "
      << report.mean_final_alignment << "\n";
  out << "clean-model ASR baseline: " << report.clean_model_asr << "\n";
  for (const auto& s : report.settings)
    out << "  [" << s.setting << "] surrogate=" << s.surrogate << " victim=" << s.victim
        << "  CA=" << s.ca << "  ASR=" << s.asr << "\n";
  if (!report.budget_curve.empty()) {
    out << "budget curve:";
    for (const auto& b : report.budget_curve) out << "  " << b.budget << "->" << b.asr;
    out << "\n";
  }
  for (const auto& d : report.defense_table)
    if (d.defender_best)
      out << "defender best: clip=" << d.clip << " noise=" << d.noise << "  CA=" << d.ca
          << "  ASR=" << d.asr << "\n";
  if (report.detection.ran)
    out << "clustering: recall=" << report.detection.recall
        << " fpr=" << report.detection.false_positive_rate
        << " silhouette=" << report.detection.silhouette_poisoned
        << " (clean " << report.detection.silhouette_clean << ")\n";
  for (const auto& w : report.warnings) out << "warning: " << w << "\n";
}

}  // namespace tplab
