#include "tplab/metrics.hpp"

#include <cmath>

#include "tplab/errors.hpp"

namespace tplab {

namespace {

void check_pair(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  if (pred.size() != gt.size()) throw ConfigError("metrics: pred/gt length mismatch");
  if (pred.empty()) throw ConfigError("metrics: empty trajectories");
}

}  // namespace

double fde(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  check_pair(pred, gt);
  return (pred.back() - gt.back()).norm();
}

double ade(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  check_pair(pred, gt);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - gt[i]).norm();
  return acc / static_cast<double>(pred.size());
}

double reference_heading(const Trajectory& traj) {
  if (traj.size() < 2) throw ConfigError("reference_heading: needs >= 2 points");
  const Vec2 last = traj.points.back() - traj.points[traj.size() - 2];
  if (last.norm() > 1e-12) return std::atan2(last.y, last.x);
  for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
    const Vec2 d = traj.points[t + 1] - traj.points[t];
    if (d.norm() > 1e-12) return std::atan2(d.y, d.x);
  }
  throw ValidationError("reference_heading: every segment is degenerate");
}

std::pair<double, double> lateral_longitudinal_deviation(std::span<const Vec2> pred,
                                                         std::span<const Vec2> gt,
                                                         double heading_ref) {
  check_pair(pred, gt);
  const Vec2 fwd{std::cos(heading_ref), std::sin(heading_ref)};
  const Vec2 left{-fwd.y, fwd.x};
  double lrd = 0.0, frd = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec2 e = pred[i] - gt[i];
    lrd += e.dot(left);
    frd += e.dot(fwd);
  }
  const double inv = 1.0 / static_cast<double>(pred.size());
  return {lrd * inv, frd * inv};
}

MetricRecord score_prediction(std::span<const Vec2> pred, std::span<const Vec2> gt,
                              double heading_ref) {
  MetricRecord rec;
  rec.fde = fde(pred, gt);
  rec.ade = ade(pred, gt);
  std::tie(rec.lrd, rec.frd) = lateral_longitudinal_deviation(pred, gt, heading_ref);
  return rec;
}

namespace {

bool combine_verdict(MetricCombine combine, bool fde_ok, bool ade_ok) {
  switch (combine) {
    case MetricCombine::Both:
      return fde_ok && ade_ok;
    case MetricCombine::Either:
      return fde_ok || ade_ok;
    case MetricCombine::FdeOnly:
      return fde_ok;
    case MetricCombine::AdeOnly:
      return ade_ok;
  }
  throw ConfigError("metrics: unknown combinator");
}

}  // namespace

double clean_accuracy(std::span<const MetricRecord> clean_model,
                      std::span<const MetricRecord> victim, double threshold,
                      MetricCombine combine) {
  if (clean_model.size() != victim.size())
    throw ConfigError("clean_accuracy: record count mismatch");
  if (clean_model.empty()) throw ConfigError("clean_accuracy: empty record lists");
  if (threshold <= 0.0) throw ConfigError("clean_accuracy: threshold must be > 0");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < victim.size(); ++i) {
    const bool fde_ok = victim[i].fde - clean_model[i].fde < threshold;
    const bool ade_ok = victim[i].ade - clean_model[i].ade < threshold;
    if (combine_verdict(combine, fde_ok, ade_ok)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(victim.size());
}

double attack_success_rate(std::span<const MetricRecord> triggered,
                           std::span<const MetricRecord> untriggered, double threshold,
                           MetricCombine combine) {
  if (triggered.size() != untriggered.size())
    throw ConfigError("attack_success_rate: record count mismatch");
  if (triggered.empty()) throw ConfigError("attack_success_rate: empty record lists");
  if (threshold <= 0.0) throw ConfigError("attack_success_rate: threshold must be > 0");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < triggered.size(); ++i) {
    const bool fde_hit = triggered[i].fde - untriggered[i].fde > threshold;
    const bool ade_hit = triggered[i].ade - untriggered[i].ade > threshold;
    if (combine_verdict(combine, fde_hit, ade_hit)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(triggered.size());
}

}  // namespace tplab
