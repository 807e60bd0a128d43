#pragma once

#include <span>
#include <utility>
#include <vector>

#include "tplab/scene.hpp"

namespace tplab {

// Per-scene trajectory errors. lrd/frd are the mean prediction error
// projected on the left-normal / heading axis of a reference heading
// (positive = left / front).
struct MetricRecord {
  double fde = 0.0;
  double ade = 0.0;
  double lrd = 0.0;
  double frd = 0.0;
};

// Euclidean distance between final waypoints.
double fde(std::span<const Vec2> pred, std::span<const Vec2> gt);

// Mean per-waypoint Euclidean distance.
double ade(std::span<const Vec2> pred, std::span<const Vec2> gt);

// Heading of the trajectory's final segment; falls back to the earliest
// non-degenerate segment, errors when every segment is zero-length.
double reference_heading(const Trajectory& traj);

// Signed mean error components: first = lateral (left positive), second =
// longitudinal (front positive), both wrt heading_ref.
std::pair<double, double> lateral_longitudinal_deviation(std::span<const Vec2> pred,
                                                         std::span<const Vec2> gt,
                                                         double heading_ref);

MetricRecord score_prediction(std::span<const Vec2> pred, std::span<const Vec2> gt,
                              double heading_ref);

// How FDE/ADE degradations are combined into one per-scene verdict.
enum class MetricCombine { Both, Either, FdeOnly, AdeOnly };

// Fraction of scenes where the victim's degradation vs the clean model stays
// under the threshold. Combine=Both demands both FDE and ADE under.
double clean_accuracy(std::span<const MetricRecord> clean_model,
                      std::span<const MetricRecord> victim, double threshold = 0.5,
                      MetricCombine combine = MetricCombine::Both);

// Fraction of scenes where the triggered-scene degradation vs the untriggered
// baseline exceeds the threshold. Combine=Either fires on FDE or ADE.
double attack_success_rate(std::span<const MetricRecord> triggered,
                           std::span<const MetricRecord> untriggered, double threshold = 1.0,
                           MetricCombine combine = MetricCombine::Either);

}  // namespace tplab
