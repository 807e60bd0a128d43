#include "tplab/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "tplab/errors.hpp"
#include "tplab/random.hpp"

namespace tplab {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct KmeansRun {
  std::vector<int> assign;
  std::vector<std::vector<double>> centers;
  double inertia = std::numeric_limits<double>::infinity();
};

KmeansRun kmeans_once(const std::vector<std::vector<double>>& pts, int k, RandomStream& rng,
                      int max_iters, double rel_tol) {
  const std::size_t n = pts.size();
  const std::size_t dim = pts[0].size();

  // k-means++ seeding
  std::vector<std::vector<double>> centers;
  centers.reserve(static_cast<std::size_t>(k));
  centers.push_back(pts[rng.uniform_int(0, static_cast<int>(n) - 1)]);
  std::vector<double> d2(n);
  while (centers.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, sq_dist(pts[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        r -= d2[i];
        if (r <= 0.0) {
          pick = i;
          break;
        }
        pick = i;
      }
    } else {
      pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n) - 1));
    }
    centers.push_back(pts[pick]);
  }

  KmeansRun run;
  run.assign.assign(n, 0);
  double prev_inertia = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iters; ++iter) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bestd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(pts[i], centers[static_cast<std::size_t>(c)]);
        if (d < bestd) {
          bestd = d;
          best = c;
        }
      }
      run.assign[i] = best;
      inertia += bestd;
    }

    std::vector<std::vector<double>> next(static_cast<std::size_t>(k),
                                          std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& c = next[static_cast<std::size_t>(run.assign[i])];
      for (std::size_t j = 0; j < dim; ++j) c[j] += pts[i][j];
      ++counts[static_cast<std::size_t>(run.assign[i])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        // re-seed empty clusters on the point farthest from its center
        std::size_t far = 0;
        double fard = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d =
              sq_dist(pts[i], centers[static_cast<std::size_t>(run.assign[i])]);
          if (d > fard) {
            fard = d;
            far = i;
          }
        }
        next[static_cast<std::size_t>(c)] = pts[far];
      } else {
        const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        for (std::size_t j = 0; j < dim; ++j) next[static_cast<std::size_t>(c)][j] *= inv;
      }
    }
    centers = std::move(next);

    run.inertia = inertia;
    if (std::isfinite(prev_inertia)) {
      const double denom = std::max(prev_inertia, 1e-300);
      if (std::abs(prev_inertia - inertia) <= rel_tol * denom) break;
    }
    prev_inertia = inertia;
  }
  // final assignment against the last centers
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double bestd = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const double d = sq_dist(pts[i], centers[static_cast<std::size_t>(c)]);
      if (d < bestd) {
        bestd = d;
        best = c;
      }
    }
    run.assign[i] = best;
    inertia += bestd;
  }
  run.inertia = inertia;
  run.centers = std::move(centers);
  return run;
}

double mean_silhouette(const std::vector<std::vector<double>>& pts,
                       const std::vector<int>& assign, int k) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (int a : assign) ++counts[static_cast<std::size_t>(a)];

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int ci = assign[i];
    if (counts[static_cast<std::size_t>(ci)] <= 1) continue;  // singleton: s = 0
    std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sums[static_cast<std::size_t>(assign[j])] += std::sqrt(sq_dist(pts[i], pts[j]));
    }
    const double a =
        sums[static_cast<std::size_t>(ci)] / static_cast<double>(counts[static_cast<std::size_t>(ci)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == ci || counts[static_cast<std::size_t>(c)] == 0) continue;
      b = std::min(b, sums[static_cast<std::size_t>(c)] /
                          static_cast<double>(counts[static_cast<std::size_t>(c)]));
    }
    if (!std::isfinite(b)) continue;  // only one populated cluster
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return n > 0 ? total / static_cast<double>(n) : 0.0;
}

}  // namespace

void ClusterConfig::validate() const {
  if (k < 2) throw ConfigError("cluster k must be >= 2");
  if (restarts < 1) throw ConfigError("cluster restarts must be >= 1");
  if (max_iters < 1) throw ConfigError("cluster max_iters must be >= 1");
  if (!(rel_tol >= 0.0)) throw ConfigError("cluster rel_tol must be >= 0");
}

DetectionReport activation_clustering(const std::vector<std::vector<double>>& latents,
                                      const std::vector<bool>& poison_flags, std::uint64_t seed,
                                      const ClusterConfig& cfg) {
  cfg.validate();
  if (latents.empty()) throw ConfigError("activation_clustering: empty latent set");
  if (latents.size() != poison_flags.size())
    throw ConfigError("activation_clustering: latents/flags size mismatch");
  const std::size_t dim = latents[0].size();
  for (const auto& l : latents)
    if (l.size() != dim) throw ConfigError("activation_clustering: ragged latent vectors");
  if (latents.size() < static_cast<std::size_t>(cfg.k))
    throw ConfigError("activation_clustering: fewer points than clusters");

  DetectionReport rep;

  bool all_same = true;
  for (std::size_t i = 1; i < latents.size() && all_same; ++i)
    if (latents[i] != latents[0]) all_same = false;
  if (all_same) {
    rep.assignments.assign(latents.size(), 0);
    rep.degenerate = true;
    rep.silhouette = 0.0;
    rep.smaller_cluster_fraction = 0.0;
    // nothing is flagged, so recall/precision stay at 0 unless there are no poisons
    std::size_t poisons = 0;
    for (bool f : poison_flags) poisons += f ? 1 : 0;
    rep.recall = poisons == 0 ? 1.0 : 0.0;
    rep.precision = 0.0;
    rep.false_positive_rate = 0.0;
    return rep;
  }

  RandomStream rng(seed);
  KmeansRun best;
  for (int r = 0; r < cfg.restarts; ++r) {
    RandomStream sub = rng.fork(static_cast<std::uint64_t>(r));
    KmeansRun run = kmeans_once(latents, cfg.k, sub, cfg.max_iters, cfg.rel_tol);
    if (run.inertia < best.inertia) best = std::move(run);
  }

  rep.assignments = best.assign;
  rep.silhouette = mean_silhouette(latents, best.assign, cfg.k);

  std::vector<std::size_t> counts(static_cast<std::size_t>(cfg.k), 0);
  for (int a : best.assign) ++counts[static_cast<std::size_t>(a)];
  int flag_cluster = 0;
  for (int c = 1; c < cfg.k; ++c)
    if (counts[static_cast<std::size_t>(c)] < counts[static_cast<std::size_t>(flag_cluster)])
      flag_cluster = c;
  rep.smaller_cluster_fraction =
      static_cast<double>(counts[static_cast<std::size_t>(flag_cluster)]) /
      static_cast<double>(latents.size());

  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    const bool flagged = best.assign[i] == flag_cluster;
    const bool poison = poison_flags[i];
    if (flagged && poison)
      ++tp;
    else if (flagged && !poison)
      ++fp;
    else if (!flagged && poison)
      ++fn;
    else
      ++tn;
  }
  rep.flagged = tp + fp;
  rep.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  rep.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0;
  rep.false_positive_rate =
      (fp + tn) > 0 ? static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0;
  return rep;
}

std::vector<std::vector<double>> collect_latents(const MlpModel& model,
                                                 const std::vector<DrivingScene>& scenes) {
  std::vector<std::vector<double>> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    const EncodedScene enc = encode_scene(s, model.layout);
    out.push_back(model.latent(enc.x));
  }
  return out;
}

void export_latents(const MlpModel& model, const std::vector<DrivingScene>& scenes,
                    const std::vector<bool>& poison_flags, const std::string& path) {
  if (scenes.size() != poison_flags.size())
    throw ConfigError("export_latents: scenes/flags size mismatch");
  std::ofstream out(path);
  if (!out) throw ConfigError("export_latents: cannot open " + path);
  const std::size_t dim = model.hidden.empty() ? 0 : static_cast<std::size_t>(model.hidden.back());
  out << "scene_id,is_poison";
  for (std::size_t j = 0; j < dim; ++j) out << ",l" << j;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const EncodedScene enc = encode_scene(scenes[i], model.layout);
    const std::vector<double> lat = model.latent(enc.x);
    out << scenes[i].scene_id << ',' << (poison_flags[i] ? 1 : 0);
    for (double v : lat) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
}

void RobustTrainConfig::validate() const {
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
}

TrainSummary robust_train(MlpModel& model, std::span<const EncodedScene> data,
                          const TrainConfig& base, const RobustTrainConfig& robust,
                          std::uint64_t seed) {
  robust.validate();
  TrainConfig cfg = base;
  cfg.grad_clip = std::isinf(robust.clip_norm) ? 0.0 : robust.clip_norm;
  cfg.noise_std = robust.noise_std;
  return train(model, data, cfg, seed);
}

}  // namespace tplab
