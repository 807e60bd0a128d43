#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tplab {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  bool operator==(const Vec2& o) const = default;

  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const;
  Vec2 rotated(double angle) const;
};

using Waypoint = Vec2;

// Planar position sanity bound, metres.
inline constexpr double kCoordinateBound = 10000.0;
// Physical ceiling on consecutive-point speed, m/s.
inline constexpr double kMaxSpeed = 60.0;

// Uniformly sampled planar track. `points` are spaced `dt` seconds apart.
struct Trajectory {
  std::vector<Waypoint> points;
  double dt = 0.5;

  std::size_t size() const { return points.size(); }
  const Waypoint& front() const { return points.front(); }
  const Waypoint& back() const { return points.back(); }
  bool operator==(const Trajectory& o) const = default;

  // length >= 2, dt > 0, finite in-bound coordinates, speeds <= kMaxSpeed
  void validate() const;
};

// One agent of a scene: T observed points followed, one dt later, by dt
// futures. `obs_mask` marks observation timesteps as present (1) or absent
// (0); empty means fully present.
struct AgentTrack {
  std::string id;
  Trajectory obs;
  Trajectory fut;
  std::vector<std::uint8_t> obs_mask;

  bool observed_at(std::size_t t) const {
    return obs_mask.empty() || (t < obs_mask.size() && obs_mask[t] != 0);
  }
  // obs and fut concatenated into one uniformly sampled track
  Trajectory full_track() const;
};

struct DrivingScene {
  std::string scene_id;
  std::string av_id;
  std::string target_id;
  std::vector<AgentTrack> agents;

  const AgentTrack& agent(const std::string& id) const;
  const AgentTrack* find_agent(const std::string& id) const;
  const AgentTrack& av() const { return agent(av_id); }
  const AgentTrack& target() const { return agent(target_id); }
  double dt() const { return agents.empty() ? 0.0 : agents.front().obs.dt; }
  std::size_t obs_len() const { return agents.empty() ? 0 : agents.front().obs.size(); }
  std::size_t fut_len() const { return agents.empty() ? 0 : agents.front().fut.size(); }
  bool operator==(const DrivingScene& o) const = default;

  void validate() const;
};

struct ChannelStats {
  double mu = 0.0;
  double sigma = 0.0;
  bool operator==(const ChannelStats& o) const = default;
};

// Pooled mean/stddev of the five kinematic channels, SI units.
struct DatasetStats {
  ChannelStats velocity;
  ChannelStats lon_accel;
  ChannelStats lat_accel;
  ChannelStats lon_jerk;
  ChannelStats lat_jerk;
  bool operator==(const DatasetStats& o) const = default;
};

// Per-step kinematic channels of one trajectory. speed has n-1 entries,
// accelerations n-2, jerks n-3. Longitudinal/lateral axes follow the heading
// of the earliest segment spanned by each difference.
struct MotionProfile {
  std::vector<double> speed;
  std::vector<double> lon_accel;
  std::vector<double> lat_accel;
  std::vector<double> lon_jerk;
  std::vector<double> lat_jerk;
};

MotionProfile motion_profile(const Trajectory& traj);

struct BehaviorMix {
  double straight = 0.5;
  double lane_change = 0.3;
  double decelerate = 0.2;
};

struct SceneGenConfig {
  int num_scenes = 100;
  int agents_per_scene = 4;  // upper bound; actual count varies in [agents_min, agents_per_scene]
  int agents_min = 0;        // 0 means "same as agents_per_scene"
  // When set, scenes flip between two densities instead of sampling the count
  // uniformly: agents_min agents with this probability, agents_per_scene
  // otherwise.
  double light_traffic_prob = 0.0;
  // Chance a scene is a congested pocket where every agent crawls well below
  // the usual corridor speed.
  double congested_prob = 0.0;
  int obs_len = 4;           // T
  int fut_len = 12;          // horizon beyond T
  double dt = 0.5;
  double speed_min = 6.0;
  double speed_max = 14.0;
  BehaviorMix mix;
  double lane_width = 3.5;
  double corridor_heading_jitter = 0.25;  // radians, scene-level
  double position_span = 400.0;           // scene origins drawn from +-span

  void validate() const;
};

// Synthetic multi-agent corridor scenes, deterministic per seed. Agent 0 is
// the AV, agent 1 the prediction target; every trajectory is produced by a
// kinematic rollout so the dataset is feasible by construction.
std::vector<DrivingScene> generate_dataset(const SceneGenConfig& cfg, std::uint64_t seed);

// Pooled over every agent's full track. Tracks shorter than 4 points do not
// contribute jerk samples.
DatasetStats compute_dataset_stats(const std::vector<DrivingScene>& scenes);

// JSON Lines, one scene per line.
void save_scenes(const std::vector<DrivingScene>& scenes, const std::filesystem::path& path);
std::vector<DrivingScene> load_scenes(const std::filesystem::path& path);

void save_stats(const DatasetStats& stats, const std::filesystem::path& path);
DatasetStats load_stats(const std::filesystem::path& path);

}  // namespace tplab
