#include "tplab/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "tplab/errors.hpp"
#include "tplab/random.hpp"

namespace tplab {

using nlohmann::json;

void EncoderLayout::validate() const {
  if (max_agents < 2) throw ConfigError("EncoderLayout: max_agents must be >= 2");
  if (obs_len < 2) throw ConfigError("EncoderLayout: obs_len must be >= 2");
  if (horizon < 1) throw ConfigError("EncoderLayout: horizon must be >= 1");
  if (!(coord_scale > 0.0)) throw ConfigError("EncoderLayout: coord_scale must be > 0");
  if (!(anchor_scale > 0.0)) throw ConfigError("EncoderLayout: anchor_scale must be > 0");
  if (!(context_init > 0.0) || context_init > 1.0)
    throw ConfigError("EncoderLayout: context_init must lie in (0,1]");
}

Vec2 to_frame(const Vec2& p_world, const Vec2& origin, double frame_angle) {
  return (p_world - origin).rotated(-frame_angle);
}

Vec2 to_world(const Vec2& p_frame, const Vec2& origin, double frame_angle) {
  return origin + p_frame.rotated(frame_angle);
}

EncodedScene encode_scene(const DrivingScene& scene, const EncoderLayout& layout) {
  layout.validate();
  if (static_cast<int>(scene.obs_len()) != layout.obs_len)
    throw ConfigError("encode_scene: scene obs length != layout.obs_len");
  if (static_cast<int>(scene.fut_len()) != layout.horizon)
    throw ConfigError("encode_scene: scene future length != layout.horizon");

  const AgentTrack& target = scene.target();
  EncodedScene enc;
  enc.coord_scale = layout.coord_scale;
  enc.origin = target.obs.points.back();
  // Frame x-axis along the target's last observed motion; fall back through
  // earlier segments if the last one is degenerate.
  enc.frame_angle = 0.0;
  for (std::size_t t = target.obs.size() - 1; t > 0; --t) {
    const Vec2 d = target.obs.points[t] - target.obs.points[t - 1];
    if (d.norm() > 1e-9) {
      enc.frame_angle = std::atan2(d.y, d.x);
      break;
    }
  }

  // Slots: target, AV, then the rest in id order. Overflow keeps the agents
  // nearest to the target.
  std::vector<const AgentTrack*> others;
  for (const AgentTrack& a : scene.agents)
    if (a.id != scene.target_id && a.id != scene.av_id) others.push_back(&a);
  std::sort(others.begin(), others.end(),
            [](const AgentTrack* a, const AgentTrack* b) { return a->id < b->id; });
  const std::size_t room = static_cast<std::size_t>(layout.max_agents) - 2;
  if (others.size() > room) {
    std::stable_sort(others.begin(), others.end(), [&](const AgentTrack* a, const AgentTrack* b) {
      return (a->obs.points.back() - enc.origin).norm() <
             (b->obs.points.back() - enc.origin).norm();
    });
    others.resize(room);
    std::sort(others.begin(), others.end(),
              [](const AgentTrack* a, const AgentTrack* b) { return a->id < b->id; });
  }

  std::vector<const AgentTrack*> slots{&target, &scene.av()};
  slots.insert(slots.end(), others.begin(), others.end());

  enc.x.assign(static_cast<std::size_t>(layout.input_dim()), 0.0);
  enc.slot_ids.assign(static_cast<std::size_t>(layout.max_agents), "");
  std::vector<Vec2> fp(static_cast<std::size_t>(layout.obs_len));
  std::vector<bool> present(static_cast<std::size_t>(layout.obs_len));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    enc.slot_ids[s] = slots[s]->id;
    for (int t = 0; t < layout.obs_len; ++t) {
      present[static_cast<std::size_t>(t)] = slots[s]->observed_at(static_cast<std::size_t>(t));
      if (!present[static_cast<std::size_t>(t)]) continue;
      fp[static_cast<std::size_t>(t)] = to_frame(
          slots[s]->obs.points[static_cast<std::size_t>(t)], enc.origin, enc.frame_angle);
      enc.x[static_cast<std::size_t>(layout.mask_index(static_cast<int>(s), t))] = 1.0;
    }
    const int last = layout.obs_len - 1;
    if (present[static_cast<std::size_t>(last)]) {
      const int ci = layout.coord_index(static_cast<int>(s), 0);
      enc.x[static_cast<std::size_t>(ci)] =
          fp[static_cast<std::size_t>(last)].x * layout.anchor_scale;
      enc.x[static_cast<std::size_t>(ci) + 1] =
          fp[static_cast<std::size_t>(last)].y * layout.anchor_scale;
    }
    for (int f = 1; f < layout.obs_len; ++f) {
      if (!present[static_cast<std::size_t>(f)] || !present[static_cast<std::size_t>(f - 1)])
        continue;
      const Vec2 d = fp[static_cast<std::size_t>(f)] - fp[static_cast<std::size_t>(f - 1)];
      const int ci = layout.coord_index(static_cast<int>(s), f);
      enc.x[static_cast<std::size_t>(ci)] = d.x * layout.coord_scale;
      enc.x[static_cast<std::size_t>(ci) + 1] = d.y * layout.coord_scale;
    }
  }

  {
    const Vec2 last = target.obs.points.back();
    const Vec2 step = last - target.obs.points[target.obs.size() - 2];
    enc.y_base.reserve(static_cast<std::size_t>(layout.horizon) * 2);
    for (int i = 1; i <= layout.horizon; ++i) {
      const Vec2 cv = to_frame(last + step * static_cast<double>(i), enc.origin, enc.frame_angle);
      enc.y_base.push_back(cv.x * layout.coord_scale);
      enc.y_base.push_back(cv.y * layout.coord_scale);
    }
  }
  enc.y = frame_targets(enc, target.fut);
  return enc;
}

std::vector<Vec2> decode_waypoints(const EncodedScene& enc, const std::vector<double>& wp) {
  if (wp.size() != enc.y_base.size())
    throw ConfigError("decode_waypoints: output size != encoder horizon");
  std::vector<Vec2> out;
  out.reserve(wp.size() / 2);
  const double inv = 1.0 / enc.coord_scale;
  for (std::size_t i = 0; i + 1 < wp.size(); i += 2) {
    const double fx = (wp[i] + enc.y_base[i]) * inv;
    const double fy = (wp[i + 1] + enc.y_base[i + 1]) * inv;
    out.push_back(to_world({fx, fy}, enc.origin, enc.frame_angle));
  }
  return out;
}

std::vector<double> frame_targets(const EncodedScene& enc, const Trajectory& world_future) {
  if (world_future.size() * 2 != enc.y_base.size())
    throw ConfigError("frame_targets: future length != encoder horizon");
  std::vector<double> y;
  y.reserve(world_future.size() * 2);
  std::size_t i = 0;
  for (const Waypoint& p : world_future.points) {
    const Vec2 q = to_frame(p, enc.origin, enc.frame_angle);
    y.push_back(q.x * enc.coord_scale - enc.y_base[i++]);
    y.push_back(q.y * enc.coord_scale - enc.y_base[i++]);
  }
  return y;
}

Vec2 input_grad_to_world(const EncodedScene& enc, const EncoderLayout& layout,
                         const std::vector<double>& grad_x, int slot, int t) {
  if (slot < 0 || slot >= layout.max_agents || t < 0 || t >= layout.obs_len)
    throw ConfigError("input_grad_to_world: slot/t out of range");
  const auto mask = [&](int tt) {
    return enc.x[static_cast<std::size_t>(layout.mask_index(slot, tt))] != 0.0;
  };
  if (!mask(t)) return {};
  const auto feat = [&](int f) {
    const int ci = layout.coord_index(slot, f);
    return Vec2{grad_x[static_cast<std::size_t>(ci)], grad_x[static_cast<std::size_t>(ci) + 1]};
  };
  // point t feeds the anchor (if last), the displacement ending at t, and the
  // displacement starting at t, each an affine function of the frame point
  Vec2 g{};
  if (t >= 1 && mask(t - 1)) g += feat(t);
  if (t + 1 < layout.obs_len && mask(t + 1)) g -= feat(t + 1);
  g = g * layout.coord_scale;
  if (t == layout.obs_len - 1) g += feat(0) * layout.anchor_scale;
  // transpose of the world->frame rotation maps the gradient back
  return g.rotated(enc.frame_angle);
}

namespace {

// dims()[l] is layer l's input width; the last entry is the head output.
std::vector<int> layer_dims(const MlpModel& m) {
  std::vector<int> d{m.layout.input_dim()};
  d.insert(d.end(), m.hidden.begin(), m.hidden.end());
  d.push_back(m.layout.output_dim());
  return d;
}

// y = W x + b, W row-major (out x in)
void affine(const std::vector<double>& w, const std::vector<double>& b,
            const std::vector<double>& x, std::vector<double>& y) {
  const std::size_t out = b.size(), in = x.size();
  y.assign(out, 0.0);
  for (std::size_t r = 0; r < out; ++r) {
    double acc = b[r];
    const double* row = w.data() + r * in;
    for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// y = W^T x
void affine_t(std::span<const double> w, std::size_t out, std::size_t in,
              const std::vector<double>& x, std::vector<double>& y) {
  y.assign(in, 0.0);
  for (std::size_t r = 0; r < out; ++r) {
    const double* row = w.data() + r * in;
    const double xr = x[r];
    for (std::size_t c = 0; c < in; ++c) y[c] += row[c] * xr;
  }
}

struct Forward {
  std::vector<std::vector<double>> h;  // h[0] = x .. h[L] last hidden
  std::vector<double> d;               // head output (displacements)
  std::vector<double> wp;              // prefix sums of d, per coordinate
};

Forward run_forward(const MlpModel& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.layout.input_dim())
    throw ConfigError("predictor: input size != layout.input_dim()");
  const std::size_t L = m.hidden.size();
  Forward f;
  f.h.resize(L + 1);
  f.h[0].assign(x.begin(), x.end());
  std::vector<double> a;
  for (std::size_t l = 0; l < L; ++l) {
    affine(m.weights[l], m.biases[l], f.h[l], a);
    f.h[l + 1].resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) f.h[l + 1][i] = std::tanh(a[i]);
  }
  affine(m.weights[L], m.biases[L], f.h[L], f.d);
  f.wp.assign(f.d.size(), 0.0);
  for (std::size_t i = 0; i < f.d.size(); ++i)
    f.wp[i] = f.d[i] + (i >= 2 ? f.wp[i - 2] : 0.0);
  return f;
}

double mse(const std::vector<double>& wp, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < wp.size(); ++i) {
    const double e = wp[i] - y[i];
    acc += e * e;
  }
  return acc / static_cast<double>(wp.size());
}

// reverse of the per-coordinate prefix sum
std::vector<double> reverse_cumsum(const std::vector<double>& g) {
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t i = g.size(); i-- > 0;)
    out[i] = g[i] + (i + 2 < g.size() ? out[i + 2] : 0.0);
  return out;
}

}  // namespace

MlpModel::MlpModel(const EncoderLayout& layout_in, std::vector<int> hidden_in,
                   std::uint64_t seed)
    : layout(layout_in), hidden(std::move(hidden_in)) {
  layout.validate();
  if (hidden.empty()) throw ConfigError("MlpModel: needs at least one hidden layer");
  for (int hdim : hidden)
    if (hdim < 1) throw ConfigError("MlpModel: hidden widths must be >= 1");

  const std::vector<int> dims = layer_dims(*this);
  RandomStream root(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = static_cast<std::size_t>(dims[l]);
    const std::size_t out = static_cast<std::size_t>(dims[l + 1]);
    RandomStream rs = root.fork(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(out * in);
    for (double& v : w) v = rs.uniform(-limit, limit);
    if (l == 0 && layout.context_init < 1.0) {
      const int coords = layout.coords_dim();
      for (std::size_t o = 0; o < out; ++o)
        for (std::size_t i = 0; i < in; ++i) {
          const int ii = static_cast<int>(i);
          const int slot = ii < coords ? ii / (layout.obs_len * 2)
                                       : (ii - coords) / layout.obs_len;
          if (slot != 0) w[o * in + i] *= layout.context_init;
        }
    }
    weights.push_back(std::move(w));
    biases.emplace_back(out, 0.0);
  }
}

std::size_t MlpModel::num_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

std::vector<double> MlpModel::params() const {
  std::vector<double> flat;
  flat.reserve(num_params());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.insert(flat.end(), weights[l].begin(), weights[l].end());
    flat.insert(flat.end(), biases[l].begin(), biases[l].end());
  }
  return flat;
}

void MlpModel::set_params(std::span<const double> flat) {
  if (flat.size() != num_params()) throw ConfigError("set_params: size mismatch");
  std::size_t off = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    std::copy_n(flat.begin() + off, weights[l].size(), weights[l].begin());
    off += weights[l].size();
    std::copy_n(flat.begin() + off, biases[l].size(), biases[l].begin());
    off += biases[l].size();
  }
}

std::vector<double> MlpModel::predict(std::span<const double> x) const {
  return run_forward(*this, x).wp;
}

std::vector<double> MlpModel::latent(std::span<const double> x) const {
  Forward f = run_forward(*this, x);
  return std::move(f.h.back());
}

double MlpModel::loss(std::span<const double> x, std::span<const double> y) const {
  const Forward f = run_forward(*this, x);
  if (y.size() != f.wp.size()) throw ConfigError("loss: label size != output size");
  return mse(f.wp, y);
}

BackwardResult backward(const MlpModel& model, std::span<const double> x,
                        std::span<const double> y) {
  const Forward f = run_forward(model, x);
  if (y.size() != f.wp.size()) throw ConfigError("backward: label size != output size");
  const std::size_t L = model.hidden.size();
  const double inv_n = 1.0 / static_cast<double>(f.wp.size());

  BackwardResult res;
  res.loss = mse(f.wp, y);
  res.grad_params.assign(model.num_params(), 0.0);

  std::vector<double> wp_bar(f.wp.size());
  for (std::size_t i = 0; i < f.wp.size(); ++i) wp_bar[i] = 2.0 * inv_n * (f.wp[i] - y[i]);
  std::vector<double> d_bar = reverse_cumsum(wp_bar);

  // offsets of each layer's W block in the flat gradient
  std::vector<std::size_t> w_off(L + 1);
  {
    std::size_t off = 0;
    for (std::size_t l = 0; l <= L; ++l) {
      w_off[l] = off;
      off += model.weights[l].size() + model.biases[l].size();
    }
  }

  auto add_layer_grads = [&](std::size_t l, const std::vector<double>& a_bar,
                             const std::vector<double>& h_in) {
    const std::size_t in = h_in.size();
    double* wg = res.grad_params.data() + w_off[l];
    double* bg = wg + model.weights[l].size();
    for (std::size_t r = 0; r < a_bar.size(); ++r) {
      const double ar = a_bar[r];
      double* row = wg + r * in;
      for (std::size_t c = 0; c < in; ++c) row[c] += ar * h_in[c];
      bg[r] += ar;
    }
  };

  add_layer_grads(L, d_bar, f.h[L]);
  std::vector<double> h_bar;
  affine_t(model.weights[L], d_bar.size(), f.h[L].size(), d_bar, h_bar);

  for (std::size_t l = L; l-- > 0;) {
    std::vector<double> a_bar(h_bar.size());
    for (std::size_t i = 0; i < h_bar.size(); ++i)
      a_bar[i] = (1.0 - f.h[l + 1][i] * f.h[l + 1][i]) * h_bar[i];
    add_layer_grads(l, a_bar, f.h[l]);
    affine_t(model.weights[l], a_bar.size(), f.h[l].size(), a_bar, h_bar);
  }
  res.grad_input = std::move(h_bar);
  return res;
}

BatchGradResult batch_loss_grad(const MlpModel& model, std::span<const EncodedScene> batch) {
  if (batch.empty()) throw ConfigError("batch_loss_grad: empty batch");
  BatchGradResult out;
  out.grad.assign(model.num_params(), 0.0);
  for (const EncodedScene& enc : batch) {
    const BackwardResult b = backward(model, enc.x, enc.y);
    out.loss += b.loss;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += b.grad_params[i];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

namespace {

// Gradient wrt x of S(x) = g(x) . v, where g is the parameter gradient of the
// per-example loss and v a fixed parameter-space direction: tangent pass in
// theta-direction v, then reverse mode over the augmented graph.
std::vector<double> directional_mixed_grad(const MlpModel& m, std::span<const double> x,
                                           std::span<const double> y,
                                           std::span<const double> v) {
  const Forward f = run_forward(m, x);
  const std::size_t L = m.hidden.size();
  const double inv_n = 1.0 / static_cast<double>(f.wp.size());

  // unpack v into per-layer blocks (V_l, c_l)
  std::vector<std::span<const double>> V(L + 1), c(L + 1);
  {
    std::size_t off = 0;
    for (std::size_t l = 0; l <= L; ++l) {
      V[l] = v.subspan(off, m.weights[l].size());
      off += m.weights[l].size();
      c[l] = v.subspan(off, m.biases[l].size());
      off += m.biases[l].size();
    }
  }

  // tangent pass: hdot[0] = 0
  std::vector<std::vector<double>> hdot(L + 1), adot(L);
  hdot[0].assign(f.h[0].size(), 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t out = m.biases[l].size(), in = f.h[l].size();
    adot[l].assign(out, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      double acc = c[l][r];
      const double* vrow = V[l].data() + r * in;
      const double* wrow = m.weights[l].data() + r * in;
      for (std::size_t cc = 0; cc < in; ++cc)
        acc += vrow[cc] * f.h[l][cc] + wrow[cc] * hdot[l][cc];
      adot[l][r] = acc;
    }
    hdot[l + 1].resize(out);
    for (std::size_t i = 0; i < out; ++i)
      hdot[l + 1][i] = (1.0 - f.h[l + 1][i] * f.h[l + 1][i]) * adot[l][i];
  }
  std::vector<double> ddot(f.d.size());
  {
    const std::size_t out = m.biases[L].size(), in = f.h[L].size();
    for (std::size_t r = 0; r < out; ++r) {
      double acc = c[L][r];
      const double* vrow = V[L].data() + r * in;
      const double* wrow = m.weights[L].data() + r * in;
      for (std::size_t cc = 0; cc < in; ++cc)
        acc += vrow[cc] * f.h[L][cc] + wrow[cc] * hdot[L][cc];
      ddot[r] = acc;
    }
  }
  std::vector<double> wpdot(ddot.size(), 0.0);
  for (std::size_t i = 0; i < ddot.size(); ++i)
    wpdot[i] = ddot[i] + (i >= 2 ? wpdot[i - 2] : 0.0);

  // reverse pass over the augmented graph
  std::vector<double> wp_bar(f.wp.size()), wpdot_bar(f.wp.size());
  for (std::size_t i = 0; i < f.wp.size(); ++i) {
    wp_bar[i] = 2.0 * inv_n * wpdot[i];
    wpdot_bar[i] = 2.0 * inv_n * (f.wp[i] - y[i]);
  }
  const std::vector<double> d_bar = reverse_cumsum(wp_bar);
  const std::vector<double> ddot_bar = reverse_cumsum(wpdot_bar);

  std::vector<double> h_bar, hdot_bar, tmp;
  affine_t(m.weights[L], d_bar.size(), f.h[L].size(), d_bar, h_bar);
  affine_t(V[L], ddot_bar.size(), f.h[L].size(), ddot_bar, tmp);
  for (std::size_t i = 0; i < h_bar.size(); ++i) h_bar[i] += tmp[i];
  affine_t(m.weights[L], ddot_bar.size(), f.h[L].size(), ddot_bar, hdot_bar);

  for (std::size_t l = L; l-- > 0;) {
    const std::size_t width = h_bar.size();
    std::vector<double> adot_bar(width), a_bar(width);
    for (std::size_t i = 0; i < width; ++i) {
      const double h = f.h[l + 1][i];
      const double one_m_h2 = 1.0 - h * h;
      adot_bar[i] = one_m_h2 * hdot_bar[i];
      h_bar[i] += -2.0 * h * adot[l][i] * hdot_bar[i];
      a_bar[i] = one_m_h2 * h_bar[i];
    }
    const std::size_t in = f.h[l].size();
    affine_t(m.weights[l], width, in, a_bar, h_bar);
    affine_t(V[l], width, in, adot_bar, tmp);
    for (std::size_t i = 0; i < in; ++i) h_bar[i] += tmp[i];
    affine_t(m.weights[l], width, in, adot_bar, hdot_bar);
  }
  return h_bar;
}

}  // namespace

AlignmentResult alignment_input_grads(const MlpModel& model, std::span<const EncodedScene> batch,
                                      std::span<const double> reference_grad) {
  if (batch.empty()) throw ConfigError("alignment_input_grads: empty batch");
  if (reference_grad.size() != model.num_params())
    throw ConfigError("alignment_input_grads: reference gradient size mismatch");

  const BatchGradResult bg = batch_loss_grad(model, batch);
  const std::vector<double>& g = bg.grad;

  double gg = 0.0, rr = 0.0, gr = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    gg += g[i] * g[i];
    rr += reference_grad[i] * reference_grad[i];
    gr += g[i] * reference_grad[i];
  }
  const double gn = std::sqrt(gg), rn = std::sqrt(rr);

  AlignmentResult res;
  res.input_grads.assign(batch.size(), {});
  if (gn < 1e-12 || rn < 1e-12) {
    res.alignment = 1.0;
    res.degenerate = true;
    for (std::size_t j = 0; j < batch.size(); ++j)
      res.input_grads[j].assign(batch[j].x.size(), 0.0);
    return res;
  }

  const double cosv = gr / (gn * rn);
  res.alignment = 1.0 - cosv;

  // v = dA/dg
  std::vector<double> v(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    v[i] = cosv * g[i] / gg - reference_grad[i] / (gn * rn);

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    res.input_grads[j] = directional_mixed_grad(model, batch[j].x, batch[j].y, v);
    for (double& gi : res.input_grads[j]) gi *= inv_b;
  }
  return res;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (lr <= 0.0) throw ConfigError("TrainConfig: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("TrainConfig: momentum in [0,1)");
  if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("TrainConfig: lr_decay in (0,1]");
  if (grad_clip < 0.0) throw ConfigError("TrainConfig: grad_clip must be >= 0");
  if (noise_std < 0.0) throw ConfigError("TrainConfig: noise_std must be >= 0");
  if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
  if (avg_tail < 0) throw ConfigError("TrainConfig: avg_tail must be >= 0");
}

TrainSummary train(MlpModel& model, std::span<const EncodedScene> data, const TrainConfig& cfg,
                   std::uint64_t seed) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");
  for (const EncodedScene& enc : data) {
    if (static_cast<int>(enc.x.size()) != model.layout.input_dim() ||
        static_cast<int>(enc.y.size()) != model.layout.output_dim())
      throw ConfigError("train: encoded scene does not match model layout");
  }

  RandomStream rng(seed);
  const std::size_t P = model.num_params();
  std::vector<double> params = model.params();
  std::vector<double> velocity(P, 0.0), grad(P, 0.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  // flat-parameter ranges holding weight matrices (decay skips biases)
  std::vector<std::pair<std::size_t, std::size_t>> weight_spans;
  {
    std::size_t off = 0;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
      weight_spans.emplace_back(off, off + model.weights[l].size());
      off += model.weights[l].size() + model.biases[l].size();
    }
  }

  TrainSummary summary;
  std::vector<double> tail_sum;
  int tail_n = 0;
  double lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const EncodedScene& enc = data[order[k]];
        BackwardResult b = backward(model, enc.x, enc.y);
        epoch_loss += b.loss;
        if (cfg.grad_clip > 0.0) {
          double norm2 = 0.0;
          for (double gi : b.grad_params) norm2 += gi * gi;
          const double norm = std::sqrt(norm2);
          if (norm > cfg.grad_clip) {
            const double scale = cfg.grad_clip / norm;
            for (double& gi : b.grad_params) gi *= scale;
          }
        }
        for (std::size_t i = 0; i < P; ++i) grad[i] += b.grad_params[i];
      }
      for (std::size_t i = 0; i < P; ++i) grad[i] *= inv_b;
      if (cfg.noise_std > 0.0) {
        const double std_per_coord = cfg.noise_std * inv_b;
        for (std::size_t i = 0; i < P; ++i) grad[i] += rng.normal(0.0, std_per_coord);
      }
      for (std::size_t i = 0; i < P; ++i) {
        velocity[i] = cfg.momentum * velocity[i] - lr * grad[i];
        params[i] += velocity[i];
      }
      if (cfg.weight_decay > 0.0) {
        const double keep = 1.0 - lr * cfg.weight_decay;
        for (const auto& [lo, hi] : weight_spans)
          for (std::size_t i = lo; i < hi; ++i) params[i] *= keep;
      }
      model.set_params(params);
    }
    summary.final_loss = epoch_loss / static_cast<double>(data.size());
    lr *= cfg.lr_decay;
    if (cfg.avg_tail > 0 && epoch >= cfg.epochs - cfg.avg_tail) {
      if (tail_sum.empty()) tail_sum.assign(P, 0.0);
      for (std::size_t i = 0; i < P; ++i) tail_sum[i] += params[i];
      ++tail_n;
    }
  }
  if (tail_n > 0) {
    const double inv = 1.0 / static_cast<double>(tail_n);
    for (std::size_t i = 0; i < P; ++i) params[i] = tail_sum[i] * inv;
    model.set_params(params);
  }
  summary.epochs = cfg.epochs;
  return summary;
}

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  json j{{"layout",
          {{"max_agents", model.layout.max_agents},
           {"obs_len", model.layout.obs_len},
           {"horizon", model.layout.horizon},
           {"coord_scale", model.layout.coord_scale},
           {"anchor_scale", model.layout.anchor_scale},
           {"context_init", model.layout.context_init}}},
         {"hidden", model.hidden},
         {"weights", model.weights},
         {"biases", model.biases}};
  std::ofstream out(path);
  if (!out) throw ConfigError("save_model: cannot open " + path.string());
  out << j.dump() << '\n';
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_model: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed model JSON: ") + e.what());
  }
  try {
    MlpModel m;
    m.layout.max_agents = j.at("layout").at("max_agents").get<int>();
    m.layout.obs_len = j.at("layout").at("obs_len").get<int>();
    m.layout.horizon = j.at("layout").at("horizon").get<int>();
    m.layout.coord_scale = j.at("layout").at("coord_scale").get<double>();
    m.layout.anchor_scale = j.at("layout").at("anchor_scale").get<double>();
    m.layout.context_init = j.at("layout").at("context_init").get<double>();
    m.hidden = j.at("hidden").get<std::vector<int>>();
    m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    m.biases = j.at("biases").get<std::vector<std::vector<double>>>();
    m.layout.validate();
    if (m.hidden.empty() || m.weights.size() != m.hidden.size() + 1 ||
        m.biases.size() != m.weights.size())
      throw ValidationError("model JSON: inconsistent layer shapes");
    const std::vector<int> dims = layer_dims(m);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      if (m.weights[l].size() !=
              static_cast<std::size_t>(dims[l]) * static_cast<std::size_t>(dims[l + 1]) ||
          m.biases[l].size() != static_cast<std::size_t>(dims[l + 1]))
        throw ValidationError("model JSON: layer " + std::to_string(l) + " shape mismatch");
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model schema violation: ") + e.what());
  }
}

}  // namespace tplab
