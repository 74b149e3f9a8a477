#pragma once

#include "lidiff/tensor.hpp"

namespace lidiff {

/// Leaky integrate-and-fire constants. tau controls leakage, spikes fire when
/// the transient membrane reaches u_th, and the potential hard-resets to
/// u_reset on firing.
struct LifParams {
  float tau = 2.0f;
  float u_th = 1.0f;
  float u_reset = 0.0f;
  float surrogate_width = 2.0f;

  void validate() const;
};

/// Membrane potential carried across time steps within one sample window.
struct LifState {
  Tensor u;
  int t = 0;
};

LifState lif_fresh_state(const Shape& shape, const LifParams& p);

// One membrane update:
//   h = u + (x - (u - u_reset)) / tau
//   s = step(h - u_th)            (1 iff h >= u_th)
//   u' = h * (1 - s) + u_reset * s
// Returns the spike tensor; the state is advanced in place. With smooth=true
// the step is replaced by the arctangent sigmoid, which makes the whole
// update an ordinary differentiable function (used by gradient checking).
Tensor lif_step(const Tensor& x, LifState& state, const LifParams& p, bool smooth = false);

// Runs lif_step over axis 0 of a time-major tensor ([T*rows, ...]) from a
// fresh state and concatenates the per-step spikes.
Tensor lif_sequence(const Tensor& x_seq, int64_t t_steps, const LifParams& p,
                    bool smooth = false);

// Derivative of the arctangent surrogate sigmoid
//   sigma(v) = atan(pi*width*v/2)/pi + 1/2,
// evaluated at v = h - u_th during backward passes.
float surrogate_grad(float v, float width);

/// Stateless-across-calls spiking layer: every forward starts from a fresh
/// state and runs the given number of time steps.
class LifLayer {
 public:
  LifLayer() = default;
  explicit LifLayer(LifParams p) : params_(p) {}

  Tensor forward(const Tensor& x_seq, int64_t t_steps, bool smooth = false) const {
    return lif_sequence(x_seq, t_steps, params_, smooth);
  }
  const LifParams& params() const { return params_; }

 private:
  LifParams params_;
};

}  // namespace lidiff
