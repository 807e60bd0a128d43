#pragma once

#include <span>
#include <vector>

#include "tplab/scene.hpp"

namespace tplab {

// Bicycle-model state: planar position, heading in (-pi, pi], speed >= 0.
struct KinematicState {
  Waypoint p;
  double heading = 0.0;
  double v = 0.0;
};

// Control action: longitudinal acceleration and path curvature.
struct ControlInput {
  double a = 0.0;      // m/s^2
  double kappa = 0.0;  // 1/m
};

struct ControlBounds {
  double a_max = 8.0;      // |a| bound
  double kappa_max = 0.3;  // |kappa| bound
};

// Wrap an angle into (-pi, pi].
double normalize_angle(double angle);

// One explicit-Euler update. Position and heading advance with the current
// speed and heading; the speed update is clamped at zero.
KinematicState step(const KinematicState& s, const ControlInput& u, double dt);

// Fold of step; the returned trajectory has controls.size()+1 points and
// starts at s0.p.
Trajectory rollout(const KinematicState& s0, std::span<const ControlInput> controls, double dt);

struct FittedControls {
  KinematicState s0;
  std::vector<ControlInput> controls;
  double residual = 0.0;  // max pointwise distance of the re-rollout, metres
};

// Finite-difference inverse of rollout. Derived controls are clamped to the
// bounds, so the residual is zero only for trajectories the bounded model can
// reproduce exactly.
FittedControls fit_controls(const Trajectory& traj, const ControlBounds& bounds = {});

// rollout(fit_controls(traj)): the nearest bound-respecting trajectory the
// model reaches from traj's own start state. Idempotent within 1e-6 m.
Trajectory project_feasible(const Trajectory& traj, const ControlBounds& bounds = {});

struct ChannelCheck {
  bool pass = true;
  double worst = 0.0;  // offending value furthest outside the band
  double lo = 0.0;     // mu - 3 sigma
  double hi = 0.0;     // mu + 3 sigma
};

struct ConstraintReport {
  ChannelCheck velocity;
  ChannelCheck lon_accel;
  ChannelCheck lat_accel;
  ChannelCheck lon_jerk;
  ChannelCheck lat_jerk;
  double max_pointwise_deviation = 0.0;
  double deviation_bound = 1.0;
  bool deviation_pass = true;

  bool feasible() const {
    return velocity.pass && lon_accel.pass && lat_accel.pass && lon_jerk.pass &&
           lat_jerk.pass && deviation_pass;
  }
};

inline constexpr double kDefaultDeviationBound = 1.0;  // metres

// Check traj's kinematic channels against mu +- 3 sigma of the dataset stats
// and its pointwise deviation from base against dev_bound.
ConstraintReport check_soft_constraints(const Trajectory& traj, const DatasetStats& stats,
                                        const Trajectory& base,
                                        double dev_bound = kDefaultDeviationBound);

struct ThetaResult {
  double theta = 0.0;
  bool base_infeasible = false;  // base alone violates the constraints
};

struct OffsetEnforceResult {
  std::vector<Vec2> eta;
  bool annihilated = false;  // offsets collapsed to zero
};

// Shrink per-point offsets until base+eta is simultaneously a
// project_feasible fixed point (1e-6 m) and inside the soft-constraint
// envelope around base: alternate projection with theta-reduction, falling
// back to zero offsets (always valid when base itself is feasible).
OffsetEnforceResult enforce_feasible_offsets(const Trajectory& base, std::vector<Vec2> eta,
                                             const DatasetStats& stats,
                                             const ControlBounds& bounds = {},
                                             double dev_bound = kDefaultDeviationBound);

// Largest theta in [0,1] such that base + theta*perturbation passes
// check_soft_constraints, located by a coarse top-down scan plus bisection to
// 1e-4. The scan keeps the result aligned with a grid-search oracle even if
// some channel is locally non-monotone in theta.
ThetaResult max_theta(const Trajectory& base, std::span<const Vec2> perturbation,
                      const DatasetStats& stats,
                      double dev_bound = kDefaultDeviationBound);

}  // namespace tplab
