#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tplab/predictor.hpp"
#include "tplab/scene.hpp"

namespace tplab {

// Outcome of unsupervised latent-space clustering aimed at separating poisoned
// training examples from clean ones.
struct DetectionReport {
  std::vector<int> assignments;        // cluster index per example
  double silhouette = 0.0;             // mean silhouette over all examples
  double smaller_cluster_fraction = 0.0;
  bool degenerate = false;             // all points identical; no usable split
  // Treating the smaller cluster as the "poison" prediction:
  double precision = 0.0;
  double recall = 0.0;
  double false_positive_rate = 0.0;
  std::size_t flagged = 0;             // examples predicted poisoned
};

struct ClusterConfig {
  int k = 2;
  int restarts = 8;
  int max_iters = 100;
  double rel_tol = 1e-6;

  void validate() const;
};

// Seeded k-means (k-means++ init, best of `restarts`) over latent vectors,
// followed by a silhouette score and detection stats against the ground-truth
// poison flags. Flags are used only for scoring, never for fitting.
DetectionReport activation_clustering(const std::vector<std::vector<double>>& latents,
                                      const std::vector<bool>& poison_flags, std::uint64_t seed,
                                      const ClusterConfig& cfg = {});

// Last-hidden-layer activations for each scene, in input order.
std::vector<std::vector<double>> collect_latents(const MlpModel& model,
                                                 const std::vector<DrivingScene>& scenes);

// CSV dump: scene_id,is_poison,l0,l1,...  One row per scene.
void export_latents(const MlpModel& model, const std::vector<DrivingScene>& scenes,
                    const std::vector<bool>& poison_flags, const std::string& path);

struct RobustTrainConfig {
  double clip_norm = 0.0;   // 0 or +inf disables per-example clipping
  double noise_std = 0.0;   // 0 disables gradient noise

  void validate() const;
};

// Training hardened with per-example gradient clipping and Gaussian gradient
// noise. With both knobs off this is bit-identical to plain train().
TrainSummary robust_train(MlpModel& model, std::span<const EncodedScene> data,
                          const TrainConfig& base, const RobustTrainConfig& robust,
                          std::uint64_t seed);

}  // namespace tplab
