#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tplab/scene.hpp"

namespace tplab {

// Fixed-size input contract of the predictor. A scene is packed into
// max_agents slots of obs_len (x, y) pairs followed by the per-timestep
// presence mask, all expressed in the target frame: origin at the target's
// last observed point, x-axis along its last observed heading. Slot 0 is the
// target, slot 1 the AV, remaining agents follow in id order.
//
// Each slot's pairs hold the agent's last observed point (the anchor) followed
// by its per-step displacement vectors, oldest first. Motion cues thus keep
// the same numeric scale no matter how far an agent sits from the target,
// while the anchor preserves where it sits.
struct EncoderLayout {
  int max_agents = 8;
  int obs_len = 4;
  int horizon = 12;
  // Coordinates (inputs and targets) are multiplied by this before they reach
  // the network, keeping tanh layers out of saturation at road scale; decoding
  // and input gradients undo it.
  double coord_scale = 0.05;
  // Anchors span the whole corridor while displacements span one timestep, so
  // they get their own multiplier; this evens out the per-channel input
  // magnitudes the way per-feature normalization would.
  double anchor_scale = 0.01;
  // First-layer weights on non-target slots start at this fraction of the
  // target slot's init scale; below 1 context sensitivity must be learned
  // rather than inherited from random initialization.
  double context_init = 1.0;

  int coords_dim() const { return max_agents * obs_len * 2; }
  int input_dim() const { return max_agents * obs_len * 3; }
  int output_dim() const { return horizon * 2; }

  // index of the x component of slot feature f (f=0 anchor, f>=1 the
  // displacement from point f-1 to point f); the y component follows it
  int coord_index(int slot, int f) const { return (slot * obs_len + f) * 2; }
  int mask_index(int slot, int t) const { return coords_dim() + slot * obs_len + t; }

  void validate() const;
};

struct EncodedScene {
  std::vector<double> x;  // scaled coords (masked entries zeroed), then mask
  std::vector<double> y;  // target future as a scaled residual against y_base
  // Constant-velocity extrapolation of the target's observed motion, in scaled
  // frame coordinates. The network predicts the residual against it, so its
  // outputs stay near zero for steady motion.
  std::vector<double> y_base;
  Vec2 origin;            // world position of the frame origin
  double frame_angle = 0.0;  // world heading of the frame x-axis
  double coord_scale = 1.0;  // copied from the layout at encode time
  std::vector<std::string> slot_ids;  // agent id per slot; "" for empty
};

// world -> frame and back
Vec2 to_frame(const Vec2& p_world, const Vec2& origin, double frame_angle);
Vec2 to_world(const Vec2& p_frame, const Vec2& origin, double frame_angle);

// Pack a scene. If the scene has more agents than slots, the ones nearest to
// the target (by last observed point) are kept.
EncodedScene encode_scene(const DrivingScene& scene, const EncoderLayout& layout);

// Map frame-relative predicted waypoints back into world coordinates.
std::vector<Vec2> decode_waypoints(const EncodedScene& enc, const std::vector<double>& wp);

// A world-frame trajectory expressed as a network target vector (scaled frame
// coordinates), e.g. an attacker-chosen future.
std::vector<double> frame_targets(const EncodedScene& enc, const Trajectory& world_future);

// Gradient of any scalar wrt an agent's world-frame observed point, given the
// gradient wrt the input vector. Returns zero for masked or absent entries.
Vec2 input_grad_to_world(const EncodedScene& enc, const EncoderLayout& layout,
                         const std::vector<double>& grad_x, int slot, int t);

// Tanh MLP over the packed input. The head emits per-step displacements that
// are prefix-summed into frame-relative waypoints; the training loss is the
// mean squared error over the 2*horizon waypoint components.
struct MlpModel {
  EncoderLayout layout;
  std::vector<int> hidden;
  // weights[l] is row-major (out x in); layer l=hidden.size() is the head
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  MlpModel() = default;
  MlpModel(const EncoderLayout& layout, std::vector<int> hidden, std::uint64_t seed);

  std::size_t num_layers() const { return weights.size(); }
  std::size_t num_params() const;
  std::vector<double> params() const;
  void set_params(std::span<const double> flat);

  std::vector<double> predict(std::span<const double> x) const;  // waypoints, 2*horizon
  std::vector<double> latent(std::span<const double> x) const;   // last hidden activations
  double loss(std::span<const double> x, std::span<const double> y) const;
};

struct BackwardResult {
  double loss = 0.0;
  std::vector<double> grad_params;  // flat, same order as params()
  std::vector<double> grad_input;
};

// Reverse-mode pass for one example.
BackwardResult backward(const MlpModel& model, std::span<const double> x,
                        std::span<const double> y);

struct BatchGradResult {
  double loss = 0.0;             // mean per-example loss
  std::vector<double> grad;      // gradient of the mean loss
};

BatchGradResult batch_loss_grad(const MlpModel& model, std::span<const EncodedScene> batch);

struct AlignmentResult {
  double alignment = 1.0;  // 1 - cos(batch gradient, reference gradient)
  bool degenerate = false;  // batch gradient (or reference) is numerically zero
  std::vector<std::vector<double>> input_grads;  // dA/dx per example
};

// Alignment between the batch training gradient and a fixed reference
// gradient, and its gradient wrt each example's input. The input gradient is
// obtained by differentiating S_j(x) = g_j(x) . v, where v = dA/dg is held
// fixed: a parameter-space tangent pass in direction v followed by a reverse
// pass over the augmented graph.
AlignmentResult alignment_input_grads(const MlpModel& model, std::span<const EncodedScene> batch,
                                      std::span<const double> reference_grad);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  double lr = 0.03;
  double momentum = 0.9;
  double lr_decay = 0.98;      // multiplicative, per epoch
  double grad_clip = 0.0;      // per-example L2 clip; 0 disables
  double noise_std = 0.0;      // gradient noise scale; 0 disables
  double weight_decay = 0.0;   // decoupled, weights only; 0 disables
  // Average the weights over this many final epochs (Polyak tail averaging);
  // 0 keeps the last iterate.
  int avg_tail = 0;

  void validate() const;
};

struct TrainSummary {
  double final_loss = 0.0;  // mean training loss of the last epoch
  int epochs = 0;
};

// Seeded minibatch SGD with momentum. When grad_clip/noise_std are zero the
// run is bit-identical to the unmodified path; nonzero values clip each
// example's gradient to grad_clip and add N(0, (noise_std/batch)^2) noise to
// every coordinate of the averaged gradient.
TrainSummary train(MlpModel& model, std::span<const EncodedScene> data, const TrainConfig& cfg,
                   std::uint64_t seed);

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace tplab
