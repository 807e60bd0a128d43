#include "tplab/kinematics.hpp"

#include <algorithm>
#include <cmath>

#include "tplab/errors.hpp"

namespace tplab {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kSpeedEps = 1e-12;

double clamp_abs(double x, double bound) { return std::clamp(x, -bound, bound); }

}  // namespace

double normalize_angle(double angle) {
  double a = std::fmod(angle, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

KinematicState step(const KinematicState& s, const ControlInput& u, double dt) {
  if (dt <= 0.0) throw ConfigError("step: dt must be > 0");
  KinematicState next;
  next.p = {s.p.x + s.v * std::cos(s.heading) * dt, s.p.y + s.v * std::sin(s.heading) * dt};
  next.heading = normalize_angle(s.heading + s.v * u.kappa * dt);
  next.v = std::max(0.0, s.v + u.a * dt);
  return next;
}

Trajectory rollout(const KinematicState& s0, std::span<const ControlInput> controls, double dt) {
  if (controls.empty()) throw ConfigError("rollout: controls must be non-empty");
  Trajectory traj;
  traj.dt = dt;
  traj.points.reserve(controls.size() + 1);
  KinematicState s = s0;
  traj.points.push_back(s.p);
  for (const ControlInput& u : controls) {
    s = step(s, u, dt);
    traj.points.push_back(s.p);
  }
  return traj;
}

FittedControls fit_controls(const Trajectory& traj, const ControlBounds& bounds) {
  const std::size_t n = traj.size();
  if (n < 3) throw ConfigError("fit_controls: trajectory must have >= 3 points");
  const double dt = traj.dt;

  // Segment speeds and headings; heading is carried over zero-length segments.
  std::vector<double> v(n - 1), heading(n - 1);
  double last_heading = 0.0;
  bool have_heading = false;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const Vec2 d = traj.points[t + 1] - traj.points[t];
    v[t] = d.norm() / dt;
    if (v[t] > kSpeedEps) {
      last_heading = std::atan2(d.y, d.x);
      have_heading = true;
    }
    heading[t] = last_heading;
  }
  if (!have_heading) {
    // Degenerate all-identical trajectory: hold still.
    FittedControls fit;
    fit.s0 = {traj.points.front(), 0.0, 0.0};
    fit.controls.assign(n - 1, ControlInput{});
    fit.residual = 0.0;
    return fit;
  }
  // Backfill headings before the first moving segment. Later zero-speed
  // segments keep the carried heading: the model cannot turn while stopped.
  std::size_t first_moving = 0;
  while (first_moving + 1 < n - 1 && v[first_moving] <= kSpeedEps) ++first_moving;
  for (std::size_t t = 0; t < first_moving; ++t) heading[t] = heading[first_moving];

  FittedControls fit;
  fit.s0 = {traj.points.front(), normalize_angle(heading[0]), v[0]};
  fit.controls.resize(n - 1);
  for (std::size_t t = 0; t + 1 < n - 1; ++t) {
    const double a = (v[t + 1] - v[t]) / dt;
    const double dpsi = normalize_angle(heading[t + 1] - heading[t]);
    const double kappa = v[t] > kSpeedEps ? dpsi / (v[t] * dt) : 0.0;
    fit.controls[t] = {clamp_abs(a, bounds.a_max), clamp_abs(kappa, bounds.kappa_max)};
  }
  fit.controls[n - 2] = {0.0, 0.0};  // trailing control never affects a point

  const Trajectory replay = rollout(fit.s0, fit.controls, dt);
  double worst = 0.0;
  for (std::size_t t = 0; t < n; ++t)
    worst = std::max(worst, (replay.points[t] - traj.points[t]).norm());
  fit.residual = worst;
  return fit;
}

Trajectory project_feasible(const Trajectory& traj, const ControlBounds& bounds) {
  const FittedControls fit = fit_controls(traj, bounds);
  Trajectory out = rollout(fit.s0, fit.controls, traj.dt);
  return out;
}

namespace {

void check_channel(ChannelCheck& chk, const std::vector<double>& values, const ChannelStats& st) {
  chk.lo = st.mu - 3.0 * st.sigma;
  chk.hi = st.mu + 3.0 * st.sigma;
  chk.pass = true;
  chk.worst = st.mu;
  double worst_excess = 0.0;
  for (double x : values) {
    const double excess = std::max(chk.lo - x, x - chk.hi);
    if (excess > worst_excess) {
      worst_excess = excess;
      chk.worst = x;
      chk.pass = false;
    }
  }
  if (chk.pass && !values.empty()) {
    chk.worst = values.front();
    for (double x : values)
      if (std::abs(x - st.mu) > std::abs(chk.worst - st.mu)) chk.worst = x;
  }
}

}  // namespace

ConstraintReport check_soft_constraints(const Trajectory& traj, const DatasetStats& stats,
                                        const Trajectory& base, double dev_bound) {
  if (traj.size() != base.size())
    throw ConfigError("check_soft_constraints: traj and base must have equal length");
  if (traj.dt != base.dt)
    throw ConfigError("check_soft_constraints: traj and base must share dt");

  ConstraintReport rep;
  rep.deviation_bound = dev_bound;

  const MotionProfile prof = motion_profile(traj);
  check_channel(rep.velocity, prof.speed, stats.velocity);
  check_channel(rep.lon_accel, prof.lon_accel, stats.lon_accel);
  check_channel(rep.lat_accel, prof.lat_accel, stats.lat_accel);
  check_channel(rep.lon_jerk, prof.lon_jerk, stats.lon_jerk);
  check_channel(rep.lat_jerk, prof.lat_jerk, stats.lat_jerk);

  double dev = 0.0;
  for (std::size_t t = 0; t < traj.size(); ++t)
    dev = std::max(dev, (traj.points[t] - base.points[t]).norm());
  rep.max_pointwise_deviation = dev;
  rep.deviation_pass = dev <= dev_bound;
  return rep;
}

OffsetEnforceResult enforce_feasible_offsets(const Trajectory& base, std::vector<Vec2> eta,
                                             const DatasetStats& stats,
                                             const ControlBounds& bounds, double dev_bound) {
  if (eta.size() != base.size())
    throw ConfigError("enforce_feasible_offsets: eta shape must match base points");
  constexpr int kRounds = 8;
  constexpr double kTol = 1e-6;
  OffsetEnforceResult result;
  for (int round = 0; round < kRounds; ++round) {
    Trajectory cand = base;
    for (std::size_t t = 0; t < cand.size(); ++t) cand.points[t] += eta[t];
    const Trajectory proj = project_feasible(cand, bounds);
    double moved = 0.0;
    std::vector<Vec2> resid(base.size());
    for (std::size_t t = 0; t < base.size(); ++t) {
      resid[t] = proj.points[t] - base.points[t];
      moved = std::max(moved, (proj.points[t] - cand.points[t]).norm());
    }
    const ThetaResult th = max_theta(base, resid, stats, dev_bound);
    double changed = 0.0;
    for (std::size_t t = 0; t < base.size(); ++t) {
      const Vec2 next = resid[t] * th.theta;
      changed = std::max(changed, (next - eta[t]).norm());
      eta[t] = next;
    }
    if (moved <= kTol && (th.theta == 1.0 || changed <= kTol)) {
      result.eta = std::move(eta);
      return result;
    }
  }
  result.annihilated = true;
  result.eta.assign(base.size(), Vec2{});
  return result;
}

ThetaResult max_theta(const Trajectory& base, std::span<const Vec2> perturbation,
                      const DatasetStats& stats, double dev_bound) {
  if (perturbation.size() != base.size())
    throw ConfigError("max_theta: perturbation shape must match base points");

  const auto feasible = [&](double theta) {
    Trajectory cand = base;
    for (std::size_t t = 0; t < cand.size(); ++t) cand.points[t] += perturbation[t] * theta;
    return check_soft_constraints(cand, stats, base, dev_bound).feasible();
  };

  if (!feasible(0.0)) return {0.0, true};
  if (feasible(1.0)) return {1.0, false};

  // Coarse top-down scan for the highest feasible bracket, then bisection.
  constexpr int kScanSteps = 64;
  double lo = 0.0, hi = 1.0;
  for (int i = kScanSteps - 1; i >= 1; --i) {
    const double theta = static_cast<double>(i) / kScanSteps;
    if (feasible(theta)) {
      lo = theta;
      hi = static_cast<double>(i + 1) / kScanSteps;
      break;
    }
  }
  while (hi - lo > 1e-4) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mid))
      lo = mid;
    else
      hi = mid;
  }
  return {lo, false};
}

}  // namespace tplab
