#include "tplab/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "tplab/errors.hpp"
#include "tplab/metrics.hpp"

namespace tplab {

using nlohmann::json;

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::HandcraftedImitating:
      return "handcrafted-imitating";
    case Provenance::HandcraftedDiscontinued:
      return "handcrafted-discontinued";
    case Provenance::Optimized:
      return "optimized";
  }
  throw ConfigError("to_string: unknown provenance");
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "handcrafted-imitating") return Provenance::HandcraftedImitating;
  if (s == "handcrafted-discontinued") return Provenance::HandcraftedDiscontinued;
  if (s == "optimized") return Provenance::Optimized;
  throw ConfigError("unknown provenance '" + s + "'");
}

void AttackObjective::validate() const {
  if (kind == Kind::LaneChange) {
    if (offset <= 0.0) throw ConfigError("AttackObjective: lane-change offset must be > 0");
  } else {
    if (direction == Direction::Down && (scale <= 0.0 || scale >= 1.0))
      throw ConfigError("AttackObjective: speed-down scale must lie in (0,1)");
    if (direction == Direction::Up && scale <= 0.0)
      throw ConfigError("AttackObjective: speed-up scale must be > 0");
  }
}

void TriggerOptConfig::validate() const {
  if (steps < 0) throw ConfigError("TriggerOptConfig: steps must be >= 0");
  if (lr <= 0.0) throw ConfigError("TriggerOptConfig: lr must be > 0");
}

namespace {

AnchorPose av_anchor(const DrivingScene& scene) {
  const AgentTrack& av = scene.av();
  return {av.obs.points.back(), reference_heading(av.obs)};
}

// Min distance between the candidate trajectories and every other agent's
// observation (and between the candidates themselves), matched per timestep.
double min_separation_at_obs(const std::vector<Trajectory>& placed, const DrivingScene& scene) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t T = scene.obs_len();
  for (std::size_t k = 0; k < placed.size(); ++k) {
    for (std::size_t t = 0; t < T && t < placed[k].size(); ++t) {
      for (const AgentTrack& a : scene.agents)
        best = std::min(best, (placed[k].points[t] - a.obs.points[t]).norm());
      for (std::size_t k2 = k + 1; k2 < placed.size(); ++k2)
        best = std::min(best, (placed[k].points[t] - placed[k2].points[t]).norm());
    }
  }
  return best;
}

std::vector<Trajectory> clone_av_at_offsets(const DrivingScene& scene, const AnchorPose& anchor,
                                            const std::vector<double>& offsets) {
  const AgentTrack& av = scene.av();
  const Vec2 left = Vec2{-std::sin(anchor.heading), std::cos(anchor.heading)};
  std::vector<Trajectory> out;
  for (double off : offsets) {
    Trajectory t;
    t.dt = av.obs.dt;
    for (const Waypoint& p : av.obs.points) t.points.push_back(p + left * off);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::vector<Vec2>> zero_eta(const std::vector<Trajectory>& trajs) {
  std::vector<std::vector<Vec2>> eta;
  for (const Trajectory& t : trajs) eta.emplace_back(t.size(), Vec2{});
  return eta;
}

}  // namespace

TriggerScenario craft_imitating(const DrivingScene& scene, int K, double lane_spacing,
                                const ControlBounds& bounds) {
  if (K < 1) throw ConfigError("craft_imitating: K must be >= 1");
  if (lane_spacing <= 0.0) throw ConfigError("craft_imitating: lane_spacing must be > 0");
  if (scene.obs_len() < 3) throw ConfigError("craft_imitating: needs obs length >= 3");
  scene.validate();
  const AnchorPose anchor = av_anchor(scene);

  for (double spacing : {lane_spacing, 0.75 * lane_spacing, 0.5 * lane_spacing}) {
    for (double side : {1.0, -1.0}) {
      std::vector<double> offsets;
      for (int k = 1; k <= K; ++k) offsets.push_back(side * spacing * k);
      std::vector<Trajectory> trajs = clone_av_at_offsets(scene, anchor, offsets);
      if (min_separation_at_obs(trajs, scene) < kMinSeparation) continue;

      TriggerScenario s;
      for (Trajectory& t : trajs) s.malicious.push_back(project_feasible(t, bounds));
      s.masks.assign(static_cast<std::size_t>(K), {});
      s.anchor = anchor;
      s.lateral_offsets = std::move(offsets);
      s.provenance = Provenance::HandcraftedImitating;
      s.eta_hat = zero_eta(s.malicious);
      return s;
    }
  }
  throw ValidationError("craft_imitating: cannot place " + std::to_string(K) +
                        " agents without overlap");
}

TriggerScenario craft_discontinued(const DrivingScene& scene, int K, const GapSpec& gap,
                                   const DatasetStats& stats, double lane_spacing,
                                   double speed_step, const ControlBounds& bounds) {
  const int T = static_cast<int>(scene.obs_len());
  if (gap.len < 1) throw ConfigError("craft_discontinued: gap len must be >= 1");
  if (gap.start_idx < 1 || gap.start_idx + gap.len > T - 1)
    throw ConfigError("craft_discontinued: gap must leave the first and last observation present");
  if (T - gap.len < 2) throw ConfigError("craft_discontinued: gap covers too much of T");
  if (speed_step <= 0.0) throw ConfigError("craft_discontinued: speed_step must be > 0");

  TriggerScenario s = craft_imitating(scene, K, lane_spacing, bounds);
  s.provenance = Provenance::HandcraftedDiscontinued;

  const double dt = scene.dt();
  // Constant pre-gap speed from the AV, capped so that the post-gap speed and
  // the accel/jerk of the hidden ramp all stay inside the mu±3sigma bands.
  const MotionProfile av_prof = motion_profile(scene.av().obs);
  double v_pre = 0.0;
  for (double v : av_prof.speed) v_pre += v;
  v_pre /= static_cast<double>(av_prof.speed.size());

  const double margin = 1e-6;
  const double ramp_steps = static_cast<double>(gap.len + 2);
  const double hi_v = stats.velocity.mu + 3.0 * stats.velocity.sigma - margin;
  const double lo_v = std::max(0.1, stats.velocity.mu - 3.0 * stats.velocity.sigma + margin);
  const double hi_a = stats.lon_accel.mu + 3.0 * stats.lon_accel.sigma - margin;
  const double hi_j = stats.lon_jerk.mu + 3.0 * stats.lon_jerk.sigma - margin;
  double cap = hi_v / (1.0 + speed_step);
  if (hi_a > 0.0) cap = std::min(cap, hi_a * ramp_steps * dt / speed_step);
  if (hi_j > 0.0) cap = std::min(cap, hi_j * ramp_steps * dt * dt / speed_step);
  v_pre = std::min(v_pre, cap);
  if (v_pre < lo_v)
    throw ValidationError("craft_discontinued: dataset bands leave no feasible speed pattern");
  const double v_post = (1.0 + speed_step) * v_pre;

  // Per-segment speeds: constant before the gap, constant after, linear ramp
  // across the segments touching masked points.
  std::vector<double> seg_speed(static_cast<std::size_t>(T - 1));
  for (int t = 0; t < T - 1; ++t) {
    if (t <= gap.start_idx - 2)
      seg_speed[static_cast<std::size_t>(t)] = v_pre;
    else if (t >= gap.start_idx + gap.len)
      seg_speed[static_cast<std::size_t>(t)] = v_post;
    else {
      const double j = static_cast<double>(t - gap.start_idx + 2);
      seg_speed[static_cast<std::size_t>(t)] = v_pre + (v_post - v_pre) * j / ramp_steps;
    }
  }

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(T), 1);
  for (int t = gap.start_idx; t < gap.start_idx + gap.len; ++t)
    mask[static_cast<std::size_t>(t)] = 0;

  // Re-time each clone along its own path by arc length, extending straight
  // past the end when the pattern covers more ground than the clone did.
  for (Trajectory& traj : s.malicious) {
    std::vector<double> arc(traj.size(), 0.0);
    for (std::size_t t = 0; t + 1 < traj.size(); ++t)
      arc[t + 1] = arc[t] + (traj.points[t + 1] - traj.points[t]).norm();
    Vec2 end_dir{1.0, 0.0};
    for (std::size_t t = traj.size() - 1; t > 0; --t) {
      const Vec2 d = traj.points[t] - traj.points[t - 1];
      if (d.norm() > 1e-12) {
        end_dir = d * (1.0 / d.norm());
        break;
      }
    }
    std::vector<Waypoint> pts;
    pts.push_back(traj.points.front());
    double pos = 0.0;
    for (int t = 0; t < T - 1; ++t) {
      pos += seg_speed[static_cast<std::size_t>(t)] * dt;
      if (pos >= arc.back()) {
        pts.push_back(traj.points.back() + end_dir * (pos - arc.back()));
        continue;
      }
      std::size_t seg = 0;
      while (seg + 2 < arc.size() && arc[seg + 1] <= pos) ++seg;
      const double span = arc[seg + 1] - arc[seg];
      const double u = span > 1e-12 ? (pos - arc[seg]) / span : 0.0;
      pts.push_back(traj.points[seg] + (traj.points[seg + 1] - traj.points[seg]) * u);
    }
    traj.points = std::move(pts);
  }
  s.masks.assign(s.malicious.size(), mask);
  s.eta_hat = zero_eta(s.malicious);
  return s;
}

Trajectory build_target_trajectory(const DrivingScene& scene, const AttackObjective& objective,
                                   const ControlBounds& bounds) {
  objective.validate();
  const AgentTrack& target = scene.target();
  if (target.fut.size() < 1) throw ConfigError("build_target_trajectory: target has no future");
  const double dt = target.fut.dt;
  const std::size_t H = target.fut.size();

  std::vector<Waypoint> desired;
  if (objective.kind == AttackObjective::Kind::LaneChange) {
    const double heading = reference_heading(target.obs);
    const double sign = objective.side == AttackObjective::Side::Left ? 1.0 : -1.0;
    const Vec2 left{-std::sin(heading), std::cos(heading)};
    for (std::size_t i = 0; i < H; ++i) {
      const double ramp =
          objective.offset * static_cast<double>(i + 1) / static_cast<double>(H);
      desired.push_back(target.fut.points[i] + left * (sign * ramp));
    }
  } else {
    const double m = objective.direction == AttackObjective::Direction::Down
                         ? objective.scale
                         : 1.0 + objective.scale;
    // arc-length re-timing along [last obs, future...]
    std::vector<Waypoint> path{target.obs.points.back()};
    path.insert(path.end(), target.fut.points.begin(), target.fut.points.end());
    std::vector<double> arc(path.size(), 0.0);
    for (std::size_t t = 0; t + 1 < path.size(); ++t)
      arc[t + 1] = arc[t] + (path[t + 1] - path[t]).norm();
    Vec2 end_dir{1.0, 0.0};
    for (std::size_t t = path.size() - 1; t > 0; --t) {
      const Vec2 d = path[t] - path[t - 1];
      if (d.norm() > 1e-12) {
        end_dir = d * (1.0 / d.norm());
        break;
      }
    }
    for (std::size_t i = 1; i < path.size(); ++i) {
      const double pos = m * arc[i];
      if (pos >= arc.back()) {
        desired.push_back(path.back() + end_dir * (pos - arc.back()));
        continue;
      }
      std::size_t seg = 0;
      while (seg + 2 < arc.size() && arc[seg + 1] <= pos) ++seg;
      const double span = arc[seg + 1] - arc[seg];
      const double u = span > 1e-12 ? (pos - arc[seg]) / span : 0.0;
      desired.push_back(path[seg] + (path[seg + 1] - path[seg]) * u);
    }
  }

  // Project from the target's true current state so the malicious future is
  // reachable from where the vehicle actually is.
  Trajectory with_anchor;
  with_anchor.dt = dt;
  with_anchor.points.push_back(target.obs.points.back());
  with_anchor.points.insert(with_anchor.points.end(), desired.begin(), desired.end());
  const Trajectory projected = project_feasible(with_anchor, bounds);

  Trajectory out;
  out.dt = dt;
  out.points.assign(projected.points.begin() + 1, projected.points.end());
  return out;
}

namespace {

Vec2 scenario_to_frame(const TriggerScenario& s, const PlacementPlan& plan, const Vec2& p) {
  Vec2 f = to_frame(p, s.anchor.position, s.anchor.heading);
  if (plan.mirrored) f.y = -f.y;
  f.x -= plan.back_shift;
  return f;
}

std::vector<Trajectory> place_all(const TriggerScenario& s, const PlacementPlan& plan) {
  std::vector<Trajectory> placed;
  for (const Trajectory& t : s.malicious) {
    Trajectory out;
    out.dt = t.dt;
    for (const Waypoint& p : t.points)
      out.points.push_back(
          to_world(scenario_to_frame(s, plan, p), plan.host_anchor.position,
                   plan.host_anchor.heading));
    placed.push_back(std::move(out));
  }
  return placed;
}

}  // namespace

Vec2 map_scenario_point(const TriggerScenario& scenario, const PlacementPlan& plan,
                        const Vec2& p) {
  return to_world(scenario_to_frame(scenario, plan, p), plan.host_anchor.position,
                  plan.host_anchor.heading);
}

Vec2 unmap_world_grad(const TriggerScenario& scenario, const PlacementPlan& plan, const Vec2& g) {
  Vec2 f = g.rotated(-plan.host_anchor.heading);
  if (plan.mirrored) f.y = -f.y;
  return f.rotated(scenario.anchor.heading);
}

PlacementPlan plan_placement(const DrivingScene& host, const TriggerScenario& scenario,
                             bool allow_overlap) {
  if (scenario.K() == 0) throw ConfigError("plan_placement: empty scenario");
  if (scenario.malicious.front().size() != host.obs_len())
    throw ConfigError("plan_placement: scenario horizon != host observation length");
  if (scenario.malicious.front().dt != host.dt())
    throw ConfigError("plan_placement: scenario dt != host dt");

  const AnchorPose host_anchor = av_anchor(host);
  PlacementPlan best;
  double best_sep = -1.0;
  for (const auto& [mirrored, shift] :
       std::initializer_list<std::pair<bool, double>>{
           {false, 0.0}, {false, 12.0}, {true, 0.0}, {true, 12.0}}) {
    PlacementPlan plan{host_anchor, mirrored, shift, true, 0.0};
    const double sep = min_separation_at_obs(place_all(scenario, plan), host);
    plan.min_separation = sep;
    if (sep >= kMinSeparation) return plan;
    if (sep > best_sep) {
      best_sep = sep;
      best = plan;
    }
  }
  if (!allow_overlap)
    throw ValidationError("plan_placement: no overlap-free placement in scene " + host.scene_id);
  best.overlap_free = false;
  return best;
}

DrivingScene apply_placement(const DrivingScene& host, const TriggerScenario& scenario,
                             const PlacementPlan& plan) {
  DrivingScene out = host;
  const std::vector<Trajectory> placed = place_all(scenario, plan);
  const std::size_t H = host.fut_len();
  for (std::size_t k = 0; k < placed.size(); ++k) {
    AgentTrack trig;
    trig.id = "trig" + std::to_string(k + 1);
    if (host.find_agent(trig.id))
      throw ConfigError("apply_placement: host already has an agent named " + trig.id);
    trig.obs = placed[k];
    if (!scenario.masks.empty() && !scenario.masks[k].empty()) trig.obs_mask = scenario.masks[k];
    // Constant-velocity future so the merged scene stays a valid DrivingScene;
    // only observations feed the predictor.
    const Vec2 last = placed[k].points.back();
    const Vec2 step = placed[k].points.back() - placed[k].points[placed[k].size() - 2];
    trig.fut.dt = placed[k].dt;
    for (std::size_t i = 1; i <= H; ++i)
      trig.fut.points.push_back(last + step * static_cast<double>(i));
    out.agents.push_back(std::move(trig));
  }
  out.validate();
  return out;
}

OptimizeTriggerResult optimize_trigger(const MlpModel& surrogate,
                                       std::span<const DrivingScene> scenes,
                                       const TriggerScenario& seed_scenario,
                                       const AttackObjective& objective,
                                       const DatasetStats& stats, const TriggerOptConfig& hyper,
                                       const ControlBounds& bounds) {
  hyper.validate();
  objective.validate();
  if (scenes.empty()) throw ConfigError("optimize_trigger: no scenes given");
  const std::size_t K = seed_scenario.K();
  const std::size_t T = seed_scenario.malicious.front().size();

  // Feasibility base: the handcrafted trajectories underneath any existing
  // perturbation.
  std::vector<Trajectory> base = seed_scenario.malicious;
  if (!seed_scenario.eta_hat.empty()) {
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t t = 0; t < T; ++t) base[k].points[t] -= seed_scenario.eta_hat[k][t];
  }

  struct SceneCtx {
    const DrivingScene* scene;
    PlacementPlan plan;
    std::vector<double> y_adv;  // attacker target in the scene's target frame
  };
  std::vector<SceneCtx> ctxs;
  for (const DrivingScene& scene : scenes) {
    PlacementPlan plan;
    try {
      plan = plan_placement(scene, seed_scenario, false);
    } catch (const ValidationError&) {
      continue;
    }
    const Trajectory y_world = build_target_trajectory(scene, objective, bounds);
    const EncodedScene probe = encode_scene(scene, surrogate.layout);
    ctxs.push_back({&scene, plan, frame_targets(probe, y_world)});
  }
  if (ctxs.empty()) throw ConfigError("optimize_trigger: scenario does not fit any given scene");

  auto make_scenario = [&](const std::vector<std::vector<Vec2>>& eta) {
    TriggerScenario s = seed_scenario;
    s.malicious = base;
    s.eta_hat = eta;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t t = 0; t < T; ++t) s.malicious[k].points[t] += eta[k][t];
    return s;
  };

  auto adv_loss = [&](const TriggerScenario& s) {
    double acc = 0.0;
    for (const SceneCtx& ctx : ctxs) {
      const DrivingScene merged = apply_placement(*ctx.scene, s, ctx.plan);
      const EncodedScene enc = encode_scene(merged, surrogate.layout);
      acc += surrogate.loss(enc.x, ctx.y_adv);
    }
    return acc / static_cast<double>(ctxs.size());
  };

  std::vector<std::vector<Vec2>> eta(K, std::vector<Vec2>(T, Vec2{}));
  if (!seed_scenario.eta_hat.empty()) eta = seed_scenario.eta_hat;

  OptimizeTriggerResult result;
  result.seed_loss = adv_loss(seed_scenario);
  result.best_loss = result.seed_loss;
  std::vector<std::vector<Vec2>> best_eta = eta;

  double lr = hyper.lr;
  int consecutive_failures = 0;
  for (int step = 0; step < hyper.steps; ++step) {
    const TriggerScenario cur = make_scenario(eta);
    std::vector<std::vector<Vec2>> grad(K, std::vector<Vec2>(T, Vec2{}));
    for (const SceneCtx& ctx : ctxs) {
      const DrivingScene merged = apply_placement(*ctx.scene, cur, ctx.plan);
      const EncodedScene enc = encode_scene(merged, surrogate.layout);
      const BackwardResult back = backward(surrogate, enc.x, ctx.y_adv);
      for (std::size_t k = 0; k < K; ++k) {
        const std::string id = "trig" + std::to_string(k + 1);
        const auto it = std::find(enc.slot_ids.begin(), enc.slot_ids.end(), id);
        if (it == enc.slot_ids.end()) continue;  // crowded out of the encoder
        const int slot = static_cast<int>(it - enc.slot_ids.begin());
        for (std::size_t t = 0; t < T; ++t) {
          const Vec2 gw = input_grad_to_world(enc, surrogate.layout, back.grad_input, slot,
                                              static_cast<int>(t));
          grad[k][t] += unmap_world_grad(cur, ctx.plan, gw);
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(ctxs.size());

    std::vector<std::vector<Vec2>> trial = eta;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t t = 0; t < T; ++t) trial[k][t] += grad[k][t] * (-lr * inv);
    for (std::size_t k = 0; k < K; ++k) {
      const ThetaResult th = max_theta(base[k], trial[k], stats);
      for (Vec2& v : trial[k]) v = v * th.theta;
    }

    const double loss = adv_loss(make_scenario(trial));
    if (!std::isfinite(loss)) {
      lr *= 0.5;
      if (++consecutive_failures >= 3) {
        result.aborted = true;
        break;
      }
      continue;
    }
    consecutive_failures = 0;
    eta = std::move(trial);
    ++result.accepted_steps;
    if (loss < result.best_loss) {
      result.best_loss = loss;
      best_eta = eta;
    }
  }

  // Emit the best iterate with kinematic replayability restored; if the
  // enforcement undid the gains, fall back to the (feasible) seed.
  for (std::size_t k = 0; k < K; ++k)
    best_eta[k] = enforce_feasible_offsets(base[k], std::move(best_eta[k]), stats, bounds).eta;
  result.scenario = make_scenario(best_eta);
  const double final_loss = adv_loss(result.scenario);
  if (std::isfinite(final_loss) && final_loss <= result.seed_loss) {
    result.best_loss = final_loss;
  } else {
    result.scenario = seed_scenario;
    result.best_loss = result.seed_loss;
  }
  result.scenario.provenance = Provenance::Optimized;
  return result;
}

double scenario_min_distance(const TriggerScenario& scenario,
                             std::span<const DrivingScene> scenes) {
  double best = std::numeric_limits<double>::infinity();
  for (const DrivingScene& scene : scenes) {
    const PlacementPlan plan = plan_placement(scene, scenario, true);
    const std::vector<Trajectory> placed = place_all(scenario, plan);
    for (const Trajectory& traj : placed)
      for (const Waypoint& p : traj.points)
        for (const AgentTrack& a : scene.agents)
          for (const Waypoint& q : a.full_track().points)
            best = std::min(best, (p - q).norm());
  }
  return best;
}

void save_scenario(const TriggerScenario& scenario, const std::filesystem::path& path) {
  json trajs = json::array();
  for (std::size_t k = 0; k < scenario.K(); ++k) {
    json points = json::array();
    for (const Waypoint& p : scenario.malicious[k].points)
      points.push_back(json::array({p.x, p.y}));
    json jt{{"dt", scenario.malicious[k].dt}, {"points", points}};
    if (k < scenario.masks.size() && !scenario.masks[k].empty()) {
      json mask = json::array();
      for (std::uint8_t m : scenario.masks[k]) mask.push_back(static_cast<int>(m));
      jt["mask"] = mask;
    }
    trajs.push_back(std::move(jt));
  }
  json eta = json::array();
  for (const auto& per_traj : scenario.eta_hat) {
    json row = json::array();
    for (const Vec2& v : per_traj) row.push_back(json::array({v.x, v.y}));
    eta.push_back(std::move(row));
  }
  const json j{{"provenance", to_string(scenario.provenance)},
               {"k", scenario.K()},
               {"anchor",
                {{"position", json::array({scenario.anchor.position.x, scenario.anchor.position.y})},
                 {"heading", scenario.anchor.heading}}},
               {"lateral_offsets", scenario.lateral_offsets},
               {"trajectories", trajs},
               {"eta_hat", eta}};
  std::ofstream out(path);
  if (!out) throw ConfigError("save_scenario: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

TriggerScenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_scenario: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed scenario JSON: ") + e.what());
  }
  try {
    TriggerScenario s;
    s.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    s.anchor.position = {j.at("anchor").at("position").at(0).get<double>(),
                         j.at("anchor").at("position").at(1).get<double>()};
    s.anchor.heading = j.at("anchor").at("heading").get<double>();
    s.lateral_offsets = j.at("lateral_offsets").get<std::vector<double>>();
    for (const auto& jt : j.at("trajectories")) {
      Trajectory t;
      t.dt = jt.at("dt").get<double>();
      for (const auto& p : jt.at("points"))
        t.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      t.validate();
      s.malicious.push_back(std::move(t));
      std::vector<std::uint8_t> mask;
      if (jt.contains("mask"))
        for (const auto& m : jt.at("mask")) mask.push_back(static_cast<std::uint8_t>(m.get<int>()));
      s.masks.push_back(std::move(mask));
    }
    for (const auto& row : j.at("eta_hat")) {
      std::vector<Vec2> per_traj;
      for (const auto& v : row) per_traj.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
      s.eta_hat.push_back(std::move(per_traj));
    }
    if (s.malicious.empty()) throw ValidationError("scenario JSON: no trajectories");
    if (s.eta_hat.size() != s.malicious.size())
      throw ValidationError("scenario JSON: eta_hat shape mismatch");
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario schema violation: ") + e.what());
  }
}

}  // namespace tplab
