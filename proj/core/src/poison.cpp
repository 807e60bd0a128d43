#include "tplab/poison.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "scene_json.hpp"
#include "tplab/errors.hpp"
#include "tplab/kinematics.hpp"
#include "tplab/random.hpp"

namespace tplab {

using nlohmann::json;

std::string to_string(PoisonSelection s) {
  switch (s) {
    case PoisonSelection::Random:
      return "random";
    case PoisonSelection::Aligned:
      return "aligned";
  }
  throw ConfigError("to_string: unknown poison selection");
}

PoisonSelection poison_selection_from_string(const std::string& s) {
  if (s == "random") return PoisonSelection::Random;
  if (s == "aligned") return PoisonSelection::Aligned;
  throw ConfigError("unknown poison selection '" + s + "'");
}

void CraftConfig::validate() const {
  if (budget <= 0.0 || budget > 1.0) throw ConfigError("CraftConfig: budget must lie in (0,1]");
  if (alpha < 0.0) throw ConfigError("CraftConfig: alpha must be >= 0");
  if (max_steps < 1) throw ConfigError("CraftConfig: max_steps must be >= 1");
}

std::vector<std::string> select_poison_subset(std::span<const DrivingScene> train_scenes,
                                              double budget, std::uint64_t seed) {
  if (budget <= 0.0 || budget > 1.0)
    throw ConfigError("select_poison_subset: budget must lie in (0,1]");
  if (train_scenes.empty()) throw ConfigError("select_poison_subset: empty training set");
  const std::size_t n = static_cast<std::size_t>(
      std::ceil(budget * static_cast<double>(train_scenes.size())));
  std::vector<std::size_t> idx(train_scenes.size());
  std::iota(idx.begin(), idx.end(), 0);
  RandomStream rng(seed);
  rng.shuffle(idx);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(train_scenes[idx[i]].scene_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<double> compute_adv_gradient(const MlpModel& surrogate,
                                         std::span<const DrivingScene> triggered_scenes,
                                         const AttackObjective& objective,
                                         const ControlBounds& bounds) {
  if (triggered_scenes.empty()) throw ConfigError("compute_adv_gradient: no scenes");
  std::vector<double> acc(surrogate.num_params(), 0.0);
  for (const DrivingScene& scene : triggered_scenes) {
    const EncodedScene enc = encode_scene(scene, surrogate.layout);
    const Trajectory y_world = build_target_trajectory(scene, objective, bounds);
    const BackwardResult back = backward(surrogate, enc.x, frame_targets(enc, y_world));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += back.grad_params[i];
  }
  const double inv = 1.0 / static_cast<double>(triggered_scenes.size());
  for (double& g : acc) g *= inv;
  return acc;
}

namespace {

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Rebuild the merged scene's trigger observations from base+eta, with
// constant-velocity futures off the final observed segment.
void write_triggers(DrivingScene& merged, const std::vector<std::string>& trigger_ids,
                    const std::vector<Trajectory>& base,
                    const std::vector<std::vector<Vec2>>& eta) {
  const std::size_t H = merged.fut_len();
  for (std::size_t k = 0; k < trigger_ids.size(); ++k) {
    for (AgentTrack& a : merged.agents) {
      if (a.id != trigger_ids[k]) continue;
      for (std::size_t t = 0; t < base[k].size(); ++t)
        a.obs.points[t] = base[k].points[t] + eta[k][t];
      const Vec2 last = a.obs.points.back();
      const Vec2 step = last - a.obs.points[a.obs.size() - 2];
      for (std::size_t i = 1; i <= H; ++i)
        a.fut.points[i - 1] = last + step * static_cast<double>(i);
    }
  }
}

}  // namespace

CraftOutput craft_poisons(const MlpModel& surrogate, std::span<const DrivingScene> train_scenes,
                          const TriggerScenario& scenario, const AttackObjective& objective,
                          const CraftConfig& cfg, const DatasetStats& stats,
                          const ControlBounds& bounds) {
  cfg.validate();
  objective.validate();
  if (scenario.K() == 0) throw ConfigError("craft_poisons: empty scenario");

  CraftOutput out;

  struct Site {
    const DrivingScene* base_scene;
    DrivingScene merged;  // trigger agents present, eta = 0 initially
    std::vector<Trajectory> placed_base;
    std::vector<std::string> trigger_ids;
  };
  auto make_site = [&](const DrivingScene& scene, Site& site) -> bool {
    PlacementPlan plan;
    try {
      plan = plan_placement(scene, scenario, false);
    } catch (const ValidationError&) {
      return false;
    }
    site.base_scene = &scene;
    site.merged = apply_placement(scene, scenario, plan);
    for (std::size_t k = 1; k <= scenario.K(); ++k)
      site.trigger_ids.push_back("trig" + std::to_string(k));
    for (const std::string& id : site.trigger_ids)
      site.placed_base.push_back(site.merged.agent(id).obs);
    return true;
  };
  auto by_scene_id = [](const Site& a, const Site& b) {
    return a.base_scene->scene_id < b.base_scene->scene_id;
  };

  const std::size_t want = static_cast<std::size_t>(
      std::ceil(cfg.budget * static_cast<double>(train_scenes.size())));
  std::vector<Site> sites;

  if (cfg.selection == PoisonSelection::Random) {
    const std::vector<std::string> selected_ids =
        select_poison_subset(train_scenes, cfg.budget, cfg.seed);
    const std::set<std::string> selected(selected_ids.begin(), selected_ids.end());
    for (const DrivingScene& scene : train_scenes) {
      if (!selected.count(scene.scene_id)) continue;
      Site site;
      if (make_site(scene, site)) {
        sites.push_back(std::move(site));
      } else {
        out.skipped_scene_ids.push_back(scene.scene_id);
        out.warnings.push_back(scene.scene_id + ": no overlap-free placement");
      }
    }
    if (sites.empty()) {
      out.warnings.push_back("no selected scene admits an overlap-free placement");
      return out;
    }
    std::sort(sites.begin(), sites.end(), by_scene_id);
    std::vector<DrivingScene> triggered;
    for (const Site& s : sites) triggered.push_back(s.merged);
    out.adv_gradient = compute_adv_gradient(surrogate, triggered, objective, bounds);
  } else {
    // Rank every placeable scene by how well its clean-label gradient already
    // aligns with the attacker gradient, then keep the budget's best.
    for (const DrivingScene& scene : train_scenes) {
      Site site;
      if (make_site(scene, site)) sites.push_back(std::move(site));
    }
    if (sites.empty()) {
      out.warnings.push_back("no training scene admits an overlap-free placement");
      return out;
    }
    std::sort(sites.begin(), sites.end(), by_scene_id);
    std::vector<DrivingScene> triggered;
    for (const Site& s : sites) triggered.push_back(s.merged);
    out.adv_gradient = compute_adv_gradient(surrogate, triggered, objective, bounds);

    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const EncodedScene enc = encode_scene(sites[i].merged, surrogate.layout);
      const AlignmentResult ar =
          alignment_input_grads(surrogate, std::span(&enc, 1), out.adv_gradient);
      ranked.emplace_back(ar.alignment, i);
    }
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return sites[a.second].base_scene->scene_id < sites[b.second].base_scene->scene_id;
    });
    if (sites.size() < want)
      out.warnings.push_back("budget asks for " + std::to_string(want) + " scenes but only " +
                             std::to_string(sites.size()) + " admit a placement");
    std::vector<Site> chosen;
    for (std::size_t i = 0; i < ranked.size() && chosen.size() < want; ++i)
      chosen.push_back(std::move(sites[ranked[i].second]));
    std::sort(chosen.begin(), chosen.end(), by_scene_id);
    sites = std::move(chosen);
  }

  const EncoderLayout& layout = surrogate.layout;
  for (Site& site : sites) {
    PoisonedScene poison;
    poison.base_scene_id = site.base_scene->scene_id;
    poison.trigger_ids = site.trigger_ids;
    poison.provenance = scenario.provenance;
    poison.placed_base = site.placed_base;
    const std::size_t K = site.trigger_ids.size();
    const std::size_t T = site.placed_base.front().size();
    std::vector<std::vector<Vec2>> eta(K, std::vector<Vec2>(T, Vec2{}));

    DrivingScene& merged = site.merged;
    for (int r = 0; r < cfg.max_steps; ++r) {
      const EncodedScene enc = encode_scene(merged, layout);
      const AlignmentResult ar =
          alignment_input_grads(surrogate, std::span(&enc, 1), out.adv_gradient);
      poison.alignment_trace.push_back(ar.alignment);
      if (ar.degenerate) {
        poison.degenerate_alignment = true;
        break;
      }
      for (std::size_t k = 0; k < K; ++k) {
        const auto it =
            std::find(enc.slot_ids.begin(), enc.slot_ids.end(), site.trigger_ids[k]);
        if (it == enc.slot_ids.end()) continue;
        const int slot = static_cast<int>(it - enc.slot_ids.begin());
        for (std::size_t t = 0; t < T; ++t) {
          const Vec2 g = input_grad_to_world(enc, layout, ar.input_grads[0], slot,
                                             static_cast<int>(t));
          if (cfg.signed_update)
            eta[k][t] += Vec2{sign0(g.x), sign0(g.y)} * (-cfg.alpha);
          else
            eta[k][t] += g * (-cfg.alpha);
        }
      }
      for (std::size_t k = 0; k < K; ++k) {
        OffsetEnforceResult enforced =
            enforce_feasible_offsets(site.placed_base[k], std::move(eta[k]), stats, bounds);
        eta[k] = std::move(enforced.eta);
        if (enforced.annihilated) poison.eta_annihilated = true;
      }
      write_triggers(merged, site.trigger_ids, site.placed_base, eta);
    }
    {
      const EncodedScene enc = encode_scene(merged, layout);
      const AlignmentResult ar =
          alignment_input_grads(surrogate, std::span(&enc, 1), out.adv_gradient);
      poison.alignment_trace.push_back(ar.alignment);
    }

    bool all_zero = true;
    for (const auto& per_traj : eta)
      for (const Vec2& v : per_traj)
        if (v.x != 0.0 || v.y != 0.0) all_zero = false;
    if (all_zero && poison.eta_annihilated)
      out.warnings.push_back(poison.base_scene_id + ": projection annihilated eta");

    poison.eta = std::move(eta);
    poison.scene = merged;
    poison.scene.validate();
    out.poisons.push_back(std::move(poison));
  }

  double init_sum = 0.0, final_sum = 0.0;
  for (const PoisonedScene& p : out.poisons) {
    init_sum += p.alignment_trace.front();
    final_sum += p.alignment_trace.back();
  }
  out.mean_initial_alignment = init_sum / static_cast<double>(out.poisons.size());
  out.mean_final_alignment = final_sum / static_cast<double>(out.poisons.size());
  return out;
}

std::vector<DrivingScene> merge_poisons(std::span<const DrivingScene> train_scenes,
                                        std::span<const PoisonedScene> poisons) {
  std::map<std::string, const PoisonedScene*> by_id;
  for (const PoisonedScene& p : poisons) {
    if (!by_id.emplace(p.base_scene_id, &p).second)
      throw ConfigError("merge_poisons: duplicate poison for scene " + p.base_scene_id);
  }
  std::vector<DrivingScene> mixed;
  mixed.reserve(train_scenes.size());
  std::size_t used = 0;
  for (const DrivingScene& scene : train_scenes) {
    const auto it = by_id.find(scene.scene_id);
    if (it == by_id.end()) {
      mixed.push_back(scene);
    } else {
      mixed.push_back(it->second->scene);
      ++used;
    }
  }
  if (used != by_id.size())
    throw ConfigError("merge_poisons: poison set references scenes missing from the training set");
  return mixed;
}

void save_poisons(const std::vector<PoisonedScene>& poisons, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("save_poisons: cannot open " + path.string());
  for (const PoisonedScene& p : poisons) {
    json base = json::array();
    for (const Trajectory& t : p.placed_base) base.push_back(trajectory_to_json(t));
    json eta = json::array();
    for (const auto& per_traj : p.eta) {
      json row = json::array();
      for (const Vec2& v : per_traj) row.push_back(json::array({v.x, v.y}));
      eta.push_back(std::move(row));
    }
    const json j{{"scene", scene_to_json(p.scene)},
                 {"base_scene_id", p.base_scene_id},
                 {"trigger_ids", p.trigger_ids},
                 {"provenance", to_string(p.provenance)},
                 {"placed_base", base},
                 {"eta", eta},
                 {"alignment_trace", p.alignment_trace},
                 {"degenerate_alignment", p.degenerate_alignment},
                 {"eta_annihilated", p.eta_annihilated}};
    out << j.dump() << '\n';
  }
  if (!out) throw ConfigError("save_poisons: write failed for " + path.string());
}

std::vector<PoisonedScene> load_poisons(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_poisons: cannot open " + path.string());
  std::vector<PoisonedScene> poisons;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed poison JSON: ") + e.what(), line_no);
    }
    try {
      PoisonedScene p;
      p.scene = scene_from_json(j.at("scene"));
      p.base_scene_id = j.at("base_scene_id").get<std::string>();
      p.trigger_ids = j.at("trigger_ids").get<std::vector<std::string>>();
      p.provenance = provenance_from_string(j.at("provenance").get<std::string>());
      for (const auto& jt : j.at("placed_base")) p.placed_base.push_back(trajectory_from_json(jt));
      for (const auto& row : j.at("eta")) {
        std::vector<Vec2> per_traj;
        for (const auto& v : row)
          per_traj.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
        p.eta.push_back(std::move(per_traj));
      }
      p.alignment_trace = j.at("alignment_trace").get<std::vector<double>>();
      p.degenerate_alignment = j.at("degenerate_alignment").get<bool>();
      p.eta_annihilated = j.at("eta_annihilated").get<bool>();
      poisons.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError(std::string("poison schema violation: ") + e.what(), line_no);
    }
  }
  return poisons;
}

}  // namespace tplab
