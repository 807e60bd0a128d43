#include "tplab/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "scene_json.hpp"
#include "tplab/errors.hpp"
#include "tplab/kinematics.hpp"
#include "tplab/random.hpp"

namespace tplab {

using nlohmann::json;

double Vec2::norm() const { return std::hypot(x, y); }

Vec2 Vec2::rotated(double angle) const {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * x - s * y, s * x + c * y};
}

namespace {

constexpr double kSpeedEps = 1e-12;

void validate_points(const std::vector<Waypoint>& pts, double dt, std::size_t min_len,
                     const std::string& what) {
  if (pts.size() < min_len)
    throw ValidationError(what + ": needs >= " + std::to_string(min_len) + " points, got " +
                          std::to_string(pts.size()));
  if (dt <= 0.0) throw ValidationError(what + ": dt must be > 0");
  for (const Waypoint& p : pts) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw ValidationError(what + ": non-finite coordinate");
    if (std::abs(p.x) > kCoordinateBound || std::abs(p.y) > kCoordinateBound)
      throw ValidationError(what + ": coordinate exceeds sanity bound");
  }
  for (std::size_t t = 0; t + 1 < pts.size(); ++t) {
    if ((pts[t + 1] - pts[t]).norm() / dt > kMaxSpeed)
      throw ValidationError(what + ": consecutive-point speed exceeds " +
                            std::to_string(kMaxSpeed) + " m/s");
  }
}

}  // namespace

void Trajectory::validate() const { validate_points(points, dt, 2, "Trajectory"); }

Trajectory AgentTrack::full_track() const {
  Trajectory t;
  t.dt = obs.dt;
  t.points = obs.points;
  t.points.insert(t.points.end(), fut.points.begin(), fut.points.end());
  return t;
}

const AgentTrack* DrivingScene::find_agent(const std::string& id) const {
  for (const AgentTrack& a : agents)
    if (a.id == id) return &a;
  return nullptr;
}

const AgentTrack& DrivingScene::agent(const std::string& id) const {
  const AgentTrack* a = find_agent(id);
  if (!a) throw ValidationError("scene " + scene_id + ": no agent with id '" + id + "'");
  return *a;
}

void DrivingScene::validate() const {
  if (agents.empty()) throw ValidationError("scene " + scene_id + ": no agents");
  if (av_id == target_id)
    throw ValidationError("scene " + scene_id + ": av_id and target_id must differ");
  if (!find_agent(av_id)) throw ValidationError("scene " + scene_id + ": missing AV track");
  if (!find_agent(target_id)) throw ValidationError("scene " + scene_id + ": missing target track");

  std::set<std::string> ids;
  const std::size_t T = agents.front().obs.size();
  const std::size_t H = agents.front().fut.size();
  const double step = agents.front().obs.dt;
  for (const AgentTrack& a : agents) {
    if (!ids.insert(a.id).second)
      throw ValidationError("scene " + scene_id + ": duplicate agent id '" + a.id + "'");
    if (a.obs.size() != T)
      throw ValidationError("scene " + scene_id + ": observation lengths differ");
    if (a.fut.size() != H) throw ValidationError("scene " + scene_id + ": future lengths differ");
    if (a.obs.dt != step || a.fut.dt != step)
      throw ValidationError("scene " + scene_id + ": agents disagree on dt");
    // The seam between obs and fut is one dt, so the concatenated track must
    // itself be a valid uniformly sampled trajectory.
    validate_points(a.full_track().points, step, 3, "scene " + scene_id + " agent " + a.id);
    if (!a.obs_mask.empty()) {
      if (a.obs_mask.size() != T)
        throw ValidationError("scene " + scene_id + ": obs_mask length mismatch");
      std::size_t present = 0;
      for (std::uint8_t m : a.obs_mask) {
        if (m > 1) throw ValidationError("scene " + scene_id + ": obs_mask entries must be 0/1");
        present += m;
      }
      if (present == 0)
        throw ValidationError("scene " + scene_id + ": agent " + a.id + " fully masked");
    }
  }
}

MotionProfile motion_profile(const Trajectory& traj) {
  const std::size_t n = traj.size();
  const double dt = traj.dt;
  MotionProfile prof;
  if (n < 2) return prof;

  std::vector<Vec2> vel(n - 1);
  std::vector<double> heading(n - 1, 0.0);
  double carried = 0.0;
  bool seen = false;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    vel[t] = (traj.points[t + 1] - traj.points[t]) * (1.0 / dt);
    const double speed = vel[t].norm();
    prof.speed.push_back(speed);
    if (speed > kSpeedEps) {
      carried = std::atan2(vel[t].y, vel[t].x);
      seen = true;
    }
    heading[t] = carried;
  }
  if (seen) {  // backfill the leading stationary stretch
    std::size_t first = 0;
    while (first + 1 < n - 1 && prof.speed[first] <= kSpeedEps) ++first;
    for (std::size_t t = 0; t < first; ++t) heading[t] = heading[first];
  }

  if (n < 3) return prof;
  std::vector<Vec2> acc(n - 2);
  for (std::size_t t = 0; t + 2 < n; ++t) {
    acc[t] = (vel[t + 1] - vel[t]) * (1.0 / dt);
    const Vec2 fwd{std::cos(heading[t]), std::sin(heading[t])};
    const Vec2 left{-fwd.y, fwd.x};
    prof.lon_accel.push_back(acc[t].dot(fwd));
    prof.lat_accel.push_back(acc[t].dot(left));
  }

  if (n < 4) return prof;
  for (std::size_t t = 0; t + 3 < n; ++t) {
    const Vec2 jerk = (acc[t + 1] - acc[t]) * (1.0 / dt);
    const Vec2 fwd{std::cos(heading[t]), std::sin(heading[t])};
    const Vec2 left{-fwd.y, fwd.x};
    prof.lon_jerk.push_back(jerk.dot(fwd));
    prof.lat_jerk.push_back(jerk.dot(left));
  }
  return prof;
}

void SceneGenConfig::validate() const {
  if (num_scenes < 1) throw ConfigError("SceneGenConfig: num_scenes must be >= 1");
  if (agents_per_scene < 2) throw ConfigError("SceneGenConfig: agents_per_scene must be >= 2");
  if (agents_min < 0 || agents_min > agents_per_scene)
    throw ConfigError("SceneGenConfig: agents_min must lie in [0, agents_per_scene]");
  if (obs_len < 2) throw ConfigError("SceneGenConfig: obs_len must be >= 2");
  if (fut_len < 1) throw ConfigError("SceneGenConfig: fut_len must be >= 1");
  if (dt <= 0.0) throw ConfigError("SceneGenConfig: dt must be > 0");
  if (speed_min <= 0.0 || speed_max < speed_min)
    throw ConfigError("SceneGenConfig: speed range invalid");
  if (mix.straight < 0 || mix.lane_change < 0 || mix.decelerate < 0 ||
      mix.straight + mix.lane_change + mix.decelerate <= 0)
    throw ConfigError("SceneGenConfig: behavior mix must be non-negative and non-empty");
  if (light_traffic_prob < 0.0 || light_traffic_prob > 1.0)
    throw ConfigError("SceneGenConfig: light_traffic_prob must lie in [0, 1]");
  if (congested_prob < 0.0 || congested_prob > 1.0)
    throw ConfigError("SceneGenConfig: congested_prob must lie in [0, 1]");
}

namespace {

enum class Behavior { Straight, LaneChange, Decelerate };

Behavior sample_behavior(const BehaviorMix& mix, RandomStream& rng) {
  const double total = mix.straight + mix.lane_change + mix.decelerate;
  const double u = rng.uniform() * total;
  if (u < mix.straight) return Behavior::Straight;
  if (u < mix.straight + mix.lane_change) return Behavior::LaneChange;
  return Behavior::Decelerate;
}

// Controls for one agent over n_steps. Behaviors are smooth (sinusoidal
// curvature pulse, triangular deceleration ramp) so jerk mass is spread over
// many timesteps instead of landing in isolated spikes.
std::vector<ControlInput> agent_controls(Behavior behavior, double v0, double lane_sign,
                                         double lane_width, int n_steps, double dt,
                                         RandomStream& rng) {
  std::vector<ControlInput> controls(n_steps);

  // Mild smooth wobble on every agent keeps each channel's pooled sigma away
  // from zero.
  const double amp_kappa = rng.uniform(0.0025, 0.0065);
  const double period_kappa = rng.uniform(3.0, 6.0);
  const double phase_kappa = rng.uniform(0.0, 6.283185307179586);
  const double amp_a = rng.uniform(0.12, 0.4);
  const double period_a = rng.uniform(2.5, 5.0);
  const double phase_a = rng.uniform(0.0, 6.283185307179586);
  for (int i = 0; i < n_steps; ++i) {
    const double t = i * dt;
    controls[i].kappa = amp_kappa * std::sin(6.283185307179586 * t / period_kappa + phase_kappa);
    controls[i].a = amp_a * std::sin(6.283185307179586 * t / period_a + phase_a);
  }

  const double horizon = n_steps * dt;
  if (behavior == Behavior::LaneChange) {
    const double duration = std::min(horizon, rng.uniform(4.5, 6.0));
    // Lane changes start inside the observed window, so their direction is
    // always readable from the history.
    const double t0 = rng.uniform(0.0, 1.2);
    // One full sine period of curvature produces an S-shaped shift of about
    // one lane width at speed v0.
    const double amp = 6.283185307179586 * lane_width / (v0 * v0 * duration * duration);
    const double sign = lane_sign >= 0.0 ? 1.0 : -1.0;  // drift outward
    for (int i = 0; i < n_steps; ++i) {
      const double t = i * dt;
      if (t >= t0 && t <= t0 + duration)
        controls[i].kappa += sign * amp * std::sin(6.283185307179586 * (t - t0) / duration);
    }
  } else if (behavior == Behavior::Decelerate) {
    const double duration = std::min(horizon, rng.uniform(3.5, 5.0));
    // Half of the braking events are already under way while observed; the
    // other half begin only after the observation window closes.
    const bool visible_onset = rng.uniform() < 0.5;
    const double t0 = visible_onset
                          ? rng.uniform(0.0, 1.2)
                          : rng.uniform(1.8, std::max(1.8, horizon - duration));
    const double peak_cap = std::max(0.4, 2.0 * (v0 - 1.5) / duration);
    const double peak = std::min(rng.uniform(1.2, 2.0), peak_cap);
    for (int i = 0; i < n_steps; ++i) {
      const double t = i * dt;
      if (t >= t0 && t <= t0 + duration) {
        const double phase = 2.0 * (t - t0) / duration - 1.0;  // -1..1 triangle
        controls[i].a += -peak * (1.0 - std::abs(phase));
      }
    }
  }
  return controls;
}

}  // namespace

std::vector<DrivingScene> generate_dataset(const SceneGenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int agents_lo = cfg.agents_min == 0 ? cfg.agents_per_scene : cfg.agents_min;
  const int n_points = cfg.obs_len + cfg.fut_len;
  RandomStream root(seed);

  std::vector<DrivingScene> scenes;
  scenes.reserve(static_cast<std::size_t>(cfg.num_scenes));
  for (int si = 0; si < cfg.num_scenes; ++si) {
    RandomStream rng = root.fork(static_cast<std::uint64_t>(si));

    DrivingScene scene;
    {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "scene-%06d", si);
      scene.scene_id = buf;
    }
    scene.av_id = "av";
    scene.target_id = "agent1";

    const double corridor =
        rng.uniform(-cfg.corridor_heading_jitter, cfg.corridor_heading_jitter);
    const Vec2 origin{rng.uniform(-cfg.position_span, cfg.position_span),
                      rng.uniform(-cfg.position_span, cfg.position_span)};
    const bool congested = rng.uniform() < cfg.congested_prob;
    const double base_speed =
        congested ? rng.uniform(3.0, 5.0)
                  : rng.uniform(cfg.speed_min + 2.0,
                                std::max(cfg.speed_min + 2.0, cfg.speed_max - 2.0));
    const int n_agents = cfg.light_traffic_prob > 0.0
                             ? (rng.uniform() < cfg.light_traffic_prob ? agents_lo
                                                                       : cfg.agents_per_scene)
                             : rng.uniform_int(agents_lo, cfg.agents_per_scene);

    std::vector<std::pair<double, double>> placed;  // (lane, lon) of earlier agents
    for (int ai = 0; ai < n_agents; ++ai) {
      AgentTrack track;
      track.id = ai == 0 ? "av" : "agent" + std::to_string(ai);

      // The AV drives lane 0. The prediction target rides in the AV's
      // neighborhood (it is the agent the AV's planner asks about); everyone
      // else draws a lane and a longitudinal offset, re-rolling while the spot
      // is too close to a car already placed in that lane.
      double lane = 0.0, lon = 0.0;
      if (ai > 0) {
        const bool is_target = ai == 1;
        for (int attempt = 0; attempt < 32; ++attempt) {
          const int lane_idx = is_target ? rng.uniform_int(1, 2) : rng.uniform_int(1, 4);
          lane = (rng.uniform() < 0.5 ? 1.0 : -1.0) * lane_idx;
          lon = is_target ? rng.uniform(-18.0, 18.0) : rng.uniform(-45.0, 45.0);
          bool clear = true;
          for (const auto& [pl, plon] : placed)
            if (pl == lane && std::abs(plon - lon) < 12.0) clear = false;
          if (clear) break;
        }
      }
      placed.emplace_back(lane, lon);
      const double v0 =
          std::clamp(base_speed + rng.uniform(-2.0, 2.0),
                     congested ? 2.0 : std::max(2.0, cfg.speed_min), cfg.speed_max);
      const double heading = corridor + rng.uniform(-0.015, 0.015);

      KinematicState s0;
      s0.p = origin + Vec2{lon, lane * cfg.lane_width}.rotated(corridor);
      s0.heading = heading;
      s0.v = v0;

      const Behavior behavior = sample_behavior(cfg.mix, rng);
      const auto controls = agent_controls(behavior, v0, lane == 0.0 ? 1.0 : lane, cfg.lane_width,
                                           n_points - 1, cfg.dt, rng);
      const Trajectory full = rollout(s0, controls, cfg.dt);

      track.obs.dt = cfg.dt;
      track.fut.dt = cfg.dt;
      track.obs.points.assign(full.points.begin(), full.points.begin() + cfg.obs_len);
      track.fut.points.assign(full.points.begin() + cfg.obs_len, full.points.end());
      scene.agents.push_back(std::move(track));
    }
    scene.validate();
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

DatasetStats compute_dataset_stats(const std::vector<DrivingScene>& scenes) {
  if (scenes.empty()) throw ConfigError("compute_dataset_stats: empty scene list");

  struct Acc {
    double sum = 0.0, sumsq = 0.0;
    std::size_t n = 0;
    void add(const std::vector<double>& xs) {
      for (double x : xs) {
        sum += x;
        sumsq += x * x;
        ++n;
      }
    }
    ChannelStats finish() const {
      if (n == 0) return {};
      const double mu = sum / static_cast<double>(n);
      const double var = std::max(0.0, sumsq / static_cast<double>(n) - mu * mu);
      return {mu, std::sqrt(var)};
    }
  };

  Acc vel, lon_a, lat_a, lon_j, lat_j;
  std::size_t tracks = 0;
  for (const DrivingScene& scene : scenes) {
    for (const AgentTrack& agent : scene.agents) {
      const MotionProfile prof = motion_profile(agent.full_track());
      vel.add(prof.speed);
      lon_a.add(prof.lon_accel);
      lat_a.add(prof.lat_accel);
      lon_j.add(prof.lon_jerk);
      lat_j.add(prof.lat_jerk);
      ++tracks;
    }
  }
  if (tracks == 0) throw ConfigError("compute_dataset_stats: no trajectories");

  DatasetStats stats;
  stats.velocity = vel.finish();
  stats.lon_accel = lon_a.finish();
  stats.lat_accel = lat_a.finish();
  stats.lon_jerk = lon_j.finish();
  stats.lat_jerk = lat_j.finish();
  return stats;
}

namespace {

json points_to_json(const std::vector<Waypoint>& pts) {
  json arr = json::array();
  for (const Waypoint& p : pts) arr.push_back(json::array({p.x, p.y}));
  return arr;
}

std::vector<Waypoint> points_from_json(const json& arr) {
  std::vector<Waypoint> pts;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2)
      throw ValidationError("waypoint must be a [x, y] pair");
    pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }
  return pts;
}

}  // namespace

json trajectory_to_json(const Trajectory& t) {
  return json{{"dt", t.dt}, {"points", points_to_json(t.points)}};
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  try {
    t.dt = j.at("dt").get<double>();
    t.points = points_from_json(j.at("points"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("trajectory schema violation: ") + e.what());
  }
  t.validate();
  return t;
}

json scene_to_json(const DrivingScene& scene) {
  json agents = json::array();
  for (const AgentTrack& a : scene.agents) {
    json ja{{"id", a.id}, {"obs", points_to_json(a.obs.points)}, {"fut", points_to_json(a.fut.points)}};
    if (!a.obs_mask.empty()) {
      json mask = json::array();
      for (std::uint8_t m : a.obs_mask) mask.push_back(static_cast<int>(m));
      ja["obs_mask"] = mask;
    }
    agents.push_back(std::move(ja));
  }
  return json{{"scene_id", scene.scene_id},
              {"av_id", scene.av_id},
              {"target_id", scene.target_id},
              {"dt", scene.dt()},
              {"agents", agents}};
}

DrivingScene scene_from_json(const json& j) {
  DrivingScene scene;
  try {
    scene.scene_id = j.at("scene_id").get<std::string>();
    scene.av_id = j.at("av_id").get<std::string>();
    scene.target_id = j.at("target_id").get<std::string>();
    const double dt = j.at("dt").get<double>();
    for (const auto& ja : j.at("agents")) {
      AgentTrack a;
      a.id = ja.at("id").get<std::string>();
      a.obs.dt = dt;
      a.fut.dt = dt;
      a.obs.points = points_from_json(ja.at("obs"));
      a.fut.points = points_from_json(ja.at("fut"));
      if (ja.contains("obs_mask")) {
        for (const auto& m : ja.at("obs_mask"))
          a.obs_mask.push_back(static_cast<std::uint8_t>(m.get<int>()));
      }
      scene.agents.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scene schema violation: ") + e.what());
  }
  scene.validate();
  return scene;
}

void save_scenes(const std::vector<DrivingScene>& scenes, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("save_scenes: cannot open " + path.string());
  for (const DrivingScene& scene : scenes) {
    scene.validate();
    out << scene_to_json(scene).dump() << '\n';
  }
  if (!out) throw ConfigError("save_scenes: write failed for " + path.string());
}

std::vector<DrivingScene> load_scenes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_scenes: cannot open " + path.string());
  std::vector<DrivingScene> scenes;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed scene JSON: ") + e.what(), line_no);
    }
    scenes.push_back(scene_from_json(j));
  }
  return scenes;
}

namespace {

json channel_to_json(const ChannelStats& c) { return json{{"mu", c.mu}, {"sigma", c.sigma}}; }

ChannelStats channel_from_json(const json& j) {
  return {j.at("mu").get<double>(), j.at("sigma").get<double>()};
}

}  // namespace

void save_stats(const DatasetStats& stats, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("save_stats: cannot open " + path.string());
  const json j{{"velocity", channel_to_json(stats.velocity)},
               {"lon_accel", channel_to_json(stats.lon_accel)},
               {"lat_accel", channel_to_json(stats.lat_accel)},
               {"lon_jerk", channel_to_json(stats.lon_jerk)},
               {"lat_jerk", channel_to_json(stats.lat_jerk)}};
  out << j.dump(2) << '\n';
}

DatasetStats load_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_stats: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed stats JSON: ") + e.what());
  }
  try {
    DatasetStats stats;
    stats.velocity = channel_from_json(j.at("velocity"));
    stats.lon_accel = channel_from_json(j.at("lon_accel"));
    stats.lat_accel = channel_from_json(j.at("lat_accel"));
    stats.lon_jerk = channel_from_json(j.at("lon_jerk"));
    stats.lat_jerk = channel_from_json(j.at("lat_jerk"));
    return stats;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("stats schema violation: ") + e.what());
  }
}

}  // namespace tplab
