#include "lidiff/neuron.hpp"

#include <cmath>
#include <numbers>

namespace lidiff {

void LifParams::validate() const {
  LIDIFF_CHECK(tau >= 1.0f, "lif: tau must be >= 1, got ", tau);
  LIDIFF_CHECK(u_th > u_reset, "lif: u_th (", u_th, ") must exceed u_reset (", u_reset, ")");
  LIDIFF_CHECK(surrogate_width > 0.0f, "lif: surrogate_width must be positive");
}

LifState lif_fresh_state(const Shape& shape, const LifParams& p) {
  LifState s;
  s.u = Tensor::full(shape, p.u_reset);
  s.t = 0;
  return s;
}

float surrogate_grad(float v, float width) {
  LIDIFF_CHECK(width > 0.0f, "surrogate_grad: width must be positive");
  float s = std::numbers::pi_v<float> * width * v * 0.5f;
  return width / (2.0f * (1.0f + s * s));
}

Tensor lif_step(const Tensor& x, LifState& state, const LifParams& p, bool smooth) {
  p.validate();
  LIDIFF_CHECK(x.shape() == state.u.shape(), "lif_step: input ", shape_str(x.shape()),
               " does not match membrane ", shape_str(state.u.shape()));
  // h = u + (x - (u - u_reset)) / tau
  Tensor drive = sub(x, add_scalar(state.u, -p.u_reset));
  Tensor h = add(state.u, scale(drive, 1.0f / p.tau));
  Tensor s = spike_threshold(add_scalar(h, -p.u_th), p.surrogate_width, smooth);
  // u' = h (1 - s) + u_reset s
  Tensor keep = sub(Tensor::ones(s.shape()), s);
  Tensor u_next = add(hadamard(h, keep), scale(s, p.u_reset));
  LIDIFF_CHECK(all_finite(u_next), "lif_step: non-finite membrane at step ", state.t);
  state.u = u_next;
  state.t += 1;
  return s;
}

Tensor lif_sequence(const Tensor& x_seq, int64_t t_steps, const LifParams& p, bool smooth) {
  LIDIFF_CHECK(t_steps >= 1, "lif_sequence: need at least one time step, got ", t_steps);
  LIDIFF_CHECK(x_seq.dim(0) % t_steps == 0, "lif_sequence: leading dim ", x_seq.dim(0),
               " not divisible by T=", t_steps);
  int64_t rows_per_t = x_seq.dim(0) / t_steps;
  Shape step_shape = x_seq.shape();
  step_shape[0] = rows_per_t;
  LifState state = lif_fresh_state(step_shape, p);
  std::vector<Tensor> spikes;
  spikes.reserve(static_cast<size_t>(t_steps));
  for (int64_t t = 0; t < t_steps; ++t) {
    Tensor xt = slice_rows(x_seq, t * rows_per_t, (t + 1) * rows_per_t);
    spikes.push_back(lif_step(xt, state, p, smooth));
  }
  return concat_rows(spikes);
}

}  // namespace lidiff
