#include "lidiff/layers.hpp"

#include <cmath>

namespace lidiff {

void kaiming_uniform_fill(Tensor& t, int64_t fan_in, uint64_t seed) {
  LIDIFF_CHECK(fan_in > 0, "kaiming init needs positive fan-in");
  float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  Rng rng(seed);
  float* p = t.data();
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = rng.uniform(-bound, bound);
}

void uniform_fill(Tensor& t, float lo, float hi, uint64_t seed) {
  Rng rng(seed);
  float* p = t.data();
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = rng.uniform(lo, hi);
}

// ---- Linear ----

Linear::Linear(int64_t in_dim, int64_t out_dim, bool with_bias)
    : in_dim_(in_dim), out_dim_(out_dim), with_bias_(with_bias) {
  weight = Tensor::zeros({in_dim, out_dim});
  weight.mark_param();
  if (with_bias_) {
    bias = Tensor::zeros({out_dim});
    bias.mark_param();
  }
}

void Linear::init(const std::string& prefix, uint64_t seed) {
  kaiming_uniform_fill(weight, in_dim_, name_seed(prefix + ".w", seed));
  // bias stays zero
}

void Linear::register_into(ParamRegistry& reg, const std::string& prefix) const {
  reg.add_param(prefix + ".w", weight);
  if (with_bias_) reg.add_param(prefix + ".b", bias);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor out = matmul(x, weight);
  if (with_bias_) out = add_bias(out, bias);
  return out;
}

// ---- BatchNorm ----

BatchNorm::BatchNorm(int64_t channels) : channels_(channels) {
  gamma = Tensor::ones({channels});
  beta = Tensor::zeros({channels});
  gamma.mark_param();
  beta.mark_param();
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::ones({channels});
}

void BatchNorm::init(const std::string&, uint64_t) {
  // gamma=1, beta=0, running stats at identity; nothing stochastic.
}

void BatchNorm::register_into(ParamRegistry& reg, const std::string& prefix) const {
  reg.add_param(prefix + ".gamma", gamma);
  reg.add_param(prefix + ".beta", beta);
  reg.add_buffer(prefix + ".running_mean", running_mean);
  reg.add_buffer(prefix + ".running_var", running_var);
}

namespace {

// Fused batch-norm over a (outer, C, inner) view of x; statistics per channel
// across outer*inner positions.
Tensor bn_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, int64_t outer, int64_t channels,
                  int64_t inner, bool training, bool update_stats, float momentum, float eps) {
  LIDIFF_CHECK(gamma.numel() == channels && beta.numel() == channels,
               "batchnorm: parameter length ", gamma.numel(), " != channels ", channels);
  int64_t m = outer * inner;
  LIDIFF_CHECK(!training || m >= 2,
               "batchnorm: training mode needs at least 2 rows per channel, got ", m);

  std::vector<float> mean(static_cast<size_t>(channels));
  std::vector<float> inv_sigma(static_cast<size_t>(channels));
  const float* px = x.data();
  auto at = [&](int64_t o, int64_t c, int64_t i) { return (o * channels + c) * inner + i; };

  if (training) {
    for (int64_t c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) sum += static_cast<double>(px[at(o, c, i)]);
      double mu = sum / static_cast<double>(m);
      double varsum = 0.0;
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          double d = static_cast<double>(px[at(o, c, i)]) - mu;
          varsum += d * d;
        }
      double var = varsum / static_cast<double>(m);
      mean[static_cast<size_t>(c)] = static_cast<float>(mu);
      inv_sigma[static_cast<size_t>(c)] =
          static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      if (update_stats) {
        float* rm = running_mean.data();
        float* rv = running_var.data();
        rm[c] = (1.0f - momentum) * rm[c] + momentum * static_cast<float>(mu);
        rv[c] = (1.0f - momentum) * rv[c] + momentum * static_cast<float>(var);
      }
    }
  } else {
    const float* rm = running_mean.data();
    const float* rv = running_var.data();
    for (int64_t c = 0; c < channels; ++c) {
      mean[static_cast<size_t>(c)] = rm[c];
      inv_sigma[static_cast<size_t>(c)] = 1.0f / std::sqrt(rv[c] + eps);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  std::vector<float> xhat(static_cast<size_t>(x.numel()));
  float* po = out.data();
  const float* pg = gamma.data();
  const float* pb = beta.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t c = 0; c < channels; ++c)
      for (int64_t i = 0; i < inner; ++i) {
        int64_t idx = at(o, c, i);
        float xh = (px[idx] - mean[static_cast<size_t>(c)]) * inv_sigma[static_cast<size_t>(c)];
        xhat[static_cast<size_t>(idx)] = xh;
        po[idx] = pg[c] * xh + pb[c];
      }

  bool rec = GradTape::active() &&
             (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  if (rec) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto gn = gamma.shared_node();
    auto bn = beta.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([xn, gn, bn, on, xhat = std::move(xhat),
                                inv_sigma = std::move(inv_sigma), outer, channels, inner,
                                training] {
      if (on->grad.empty()) return;
      const std::vector<float>& gy = on->grad;
      auto at2 = [&](int64_t o, int64_t c, int64_t i) { return (o * channels + c) * inner + i; };
      int64_t m = outer * inner;
      bool do_x = xn->requires_grad && (!xn->is_param || param_grads_enabled());
      bool do_g = gn->requires_grad && (!gn->is_param || param_grads_enabled());
      bool do_b = bn->requires_grad && (!bn->is_param || param_grads_enabled());
      std::vector<double> sum_gy(static_cast<size_t>(channels), 0.0);
      std::vector<double> sum_gy_xhat(static_cast<size_t>(channels), 0.0);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t c = 0; c < channels; ++c)
          for (int64_t i = 0; i < inner; ++i) {
            int64_t idx = at2(o, c, i);
            sum_gy[static_cast<size_t>(c)] += static_cast<double>(gy[idx]);
            sum_gy_xhat[static_cast<size_t>(c)] +=
                static_cast<double>(gy[idx]) * static_cast<double>(xhat[static_cast<size_t>(idx)]);
          }
      if (do_g) {
        if (gn->grad.empty()) gn->grad.assign(gn->values.size(), 0.0f);
        for (int64_t c = 0; c < channels; ++c)
          gn->grad[c] += static_cast<float>(sum_gy_xhat[static_cast<size_t>(c)]);
      }
      if (do_b) {
        if (bn->grad.empty()) bn->grad.assign(bn->values.size(), 0.0f);
        for (int64_t c = 0; c < channels; ++c)
          bn->grad[c] += static_cast<float>(sum_gy[static_cast<size_t>(c)]);
      }
      if (do_x) {
        if (xn->grad.empty()) xn->grad.assign(xn->values.size(), 0.0f);
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t c = 0; c < channels; ++c) {
            float gamma_c = gn->values[c];
            float is = inv_sigma[static_cast<size_t>(c)];
            float mean_gy =
                training ? static_cast<float>(sum_gy[static_cast<size_t>(c)] / m) : 0.0f;
            float mean_gy_xhat =
                training ? static_cast<float>(sum_gy_xhat[static_cast<size_t>(c)] / m) : 0.0f;
            for (int64_t i = 0; i < inner; ++i) {
              int64_t idx = at2(o, c, i);
              float gyv = gy[idx];
              float xh = xhat[static_cast<size_t>(idx)];
              xn->grad[idx] += gamma_c * is * (gyv - mean_gy - xh * mean_gy_xhat);
            }
          }
      }
    });
  }
  return out;
}

}  // namespace

Tensor BatchNorm::forward_impl(const Tensor& x, int64_t outer, int64_t inner, bool training,
                               bool update_stats) const {
  auto* self = const_cast<BatchNorm*>(this);
  return bn_forward(x, gamma, beta, self->running_mean, self->running_var, outer, channels_,
                    inner, training, update_stats, momentum, eps);
}

Tensor BatchNorm::forward_rows(const Tensor& x, bool training, bool update_stats) const {
  LIDIFF_CHECK(x.rank() == 2 && x.dim(1) == channels_, "batchnorm rows: ",
               shape_str(x.shape()), " vs channels ", channels_);
  return forward_impl(x, x.dim(0), 1, training, update_stats);
}

Tensor BatchNorm::forward_nchw(const Tensor& x, bool training, bool update_stats) const {
  LIDIFF_CHECK(x.rank() == 4 && x.dim(1) == channels_, "batchnorm nchw: ",
               shape_str(x.shape()), " vs channels ", channels_);
  return forward_impl(x, x.dim(0), x.dim(2) * x.dim(3), training, update_stats);
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor& running_mean, Tensor& running_var, bool training, bool update_stats,
                 float momentum, float eps) {
  LIDIFF_CHECK(x.rank() == 2, "batchnorm expects [N x D], got ", shape_str(x.shape()));
  return bn_forward(x, gamma, beta, running_mean, running_var, x.dim(0), x.dim(1), 1, training,
                    update_stats, momentum, eps);
}

// ---- Conv2d ----

Conv2d::Conv2d(int64_t in_ch, int64_t out_ch, int kernel, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad) {
  weight = Tensor::zeros({out_ch, in_ch, kernel, kernel});
  weight.mark_param();
}

void Conv2d::init(const std::string& prefix, uint64_t seed) {
  kaiming_uniform_fill(weight, in_ch_ * kernel_ * kernel_, name_seed(prefix + ".w", seed));
}

void Conv2d::register_into(ParamRegistry& reg, const std::string& prefix) const {
  reg.add_param(prefix + ".w", weight);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight, stride_, pad_); }

}  // namespace lidiff
