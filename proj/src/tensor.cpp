#include "lidiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lidiff {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0f);
}

Tensor Tensor::full(Shape shape, float v) {
  Tensor t;
  t.d_ = std::make_shared<detail::TensorData>();
  int64_t n = shape_numel(shape);
  LIDIFF_CHECK(n >= 0, "negative tensor extent in shape ", shape_str(shape));
  t.d_->shape = std::move(shape);
  t.d_->values.assign(static_cast<size_t>(n), v);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
  Tensor t;
  t.d_ = std::make_shared<detail::TensorData>();
  LIDIFF_CHECK(shape_numel(shape) == static_cast<int64_t>(values.size()),
               "shape ", shape_str(shape), " does not match payload of ", values.size(),
               " values");
  t.d_->shape = std::move(shape);
  t.d_->values = std::move(values);
  return t;
}

Tensor Tensor::scalar(float v) { return from({1}, {v}); }

float Tensor::scalar_value() const {
  LIDIFF_CHECK(numel() == 1, "scalar_value on tensor of shape ", shape_str(shape()));
  return d_->values[0];
}

double Tensor::scalar_hi() const {
  LIDIFF_CHECK(numel() == 1, "scalar_hi on tensor of shape ", shape_str(shape()));
  return d_->has_scalar_hi ? d_->scalar_hi : static_cast<double>(d_->values[0]);
}

std::vector<float>& Tensor::grad_buffer() {
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0f);
  return d_->grad;
}

Tensor Tensor::grad_tensor() const {
  if (d_->grad.empty()) return Tensor::zeros(d_->shape);
  return Tensor::from(d_->shape, d_->grad);
}

Tensor Tensor::clone_values() const {
  return Tensor::from(d_->shape, d_->values);
}

// ---- tape ----

namespace {
thread_local GradTape* g_active_tape = nullptr;
thread_local bool g_param_grads = true;
}  // namespace

GradTape::Scope::Scope(GradTape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
GradTape::Scope::~Scope() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::backward(const Tensor& scalar_loss) {
  LIDIFF_CHECK(!consumed_, "tape backward called twice without re-recording");
  LIDIFF_CHECK(scalar_loss.defined() && scalar_loss.numel() == 1,
               "backward expects a scalar loss");
  consumed_ = true;
  scalar_loss.node()->grad.assign(1, 1.0f);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

ParamGradGuard::ParamGradGuard(bool allow) : prev_(g_param_grads) { g_param_grads = allow; }
ParamGradGuard::~ParamGradGuard() { g_param_grads = prev_; }
bool param_grads_enabled() { return g_param_grads; }

namespace {

bool want_tape(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Returns the output-side gradient buffer, or nullptr if nothing flowed back.
const std::vector<float>* out_grad(const std::shared_ptr<detail::TensorData>& d) {
  return d->grad.empty() ? nullptr : &d->grad;
}

bool accum_allowed(const std::shared_ptr<detail::TensorData>& d) {
  if (!d->requires_grad) return false;
  if (d->is_param && !g_param_grads) return false;
  return true;
}

std::vector<float>& grad_buf(const std::shared_ptr<detail::TensorData>& d) {
  if (d->grad.empty()) d->grad.assign(d->values.size(), 0.0f);
  return d->grad;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* opname) {
  LIDIFF_CHECK(a.shape() == b.shape(), opname, ": shape mismatch ", shape_str(a.shape()),
               " vs ", shape_str(b.shape()));
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (want_tape({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    GradTape::active()->record([an, bn, on] {
      const auto* g = out_grad(on);
      if (!g) return;
      if (accum_allowed(an)) {
        auto& ga = grad_buf(an);
        for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
      }
      if (accum_allowed(bn)) {
        auto& gb = grad_buf(bn);
        for (size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (want_tape({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    GradTape::active()->record([an, bn, on] {
      const auto* g = out_grad(on);
      if (!g) return;
      if (accum_allowed(an)) {
        auto& ga = grad_buf(an);
        for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
      }
      if (accum_allowed(bn)) {
        auto& gb = grad_buf(bn);
        for (size_t i = 0; i < g->size(); ++i) gb[i] -= (*g)[i];
      }
    });
  }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "hadamard");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (want_tape({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    GradTape::active()->record([an, bn, on] {
      const auto* g = out_grad(on);
      if (!g) return;
      if (accum_allowed(an)) {
        auto& ga = grad_buf(an);
        for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * bn->values[i];
      }
      if (accum_allowed(bn)) {
        auto& gb = grad_buf(bn);
        for (size_t i = 0; i < g->size(); ++i) gb[i] += (*g)[i] * an->values[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  if (want_tape({&a})) {
    out.set_requires_grad(true);
    auto an = a.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([an, on, c] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(an)) return;
      auto& ga = grad_buf(an);
      for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * c;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + c;
  if (want_tape({&a})) {
    out.set_requires_grad(true);
    auto an = a.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([an, on] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(an)) return;
      auto& ga = grad_buf(an);
      for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    });
  }
  return out;
}

Tensor clamp01(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = std::min(std::max(px[i], 0.0f), 1.0f);
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([xn, on] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      for (size_t i = 0; i < g->size(); ++i) {
        float v = xn->values[i];
        if (v > 0.0f && v < 1.0f) gx[i] += (*g)[i];
      }
    });
  }
  return out;
}

Tensor sat_add1(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sat_add1");
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = std::min(pa[i] + pb[i], 1.0f);
  if (want_tape({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    GradTape::active()->record([an, bn, on] {
      const auto* g = out_grad(on);
      if (!g) return;
      bool da = accum_allowed(an), db = accum_allowed(bn);
      if (!da && !db) return;
      std::vector<float>* ga = da ? &grad_buf(an) : nullptr;
      std::vector<float>* gb = db ? &grad_buf(bn) : nullptr;
      for (size_t i = 0; i < g->size(); ++i) {
        if (an->values[i] + bn->values[i] > 1.0f) continue;
        if (ga) (*ga)[i] += (*g)[i];
        if (gb) (*gb)[i] += (*g)[i];
      }
    });
  }
  return out;
}

namespace {
inline float atan_sigmoid(float v, float width) {
  return std::atan(std::numbers::pi_v<float> * width * v * 0.5f) / std::numbers::pi_v<float> +
         0.5f;
}
inline float atan_sigmoid_deriv(float v, float width) {
  float s = std::numbers::pi_v<float> * width * v * 0.5f;
  return width / (2.0f * (1.0f + s * s));
}
}  // namespace

Tensor spike_threshold(const Tensor& v, float width, bool smooth) {
  LIDIFF_CHECK(width > 0.0f, "spike_threshold: width must be positive, got ", width);
  Tensor out = Tensor::zeros(v.shape());
  const float* pv = v.data();
  float* po = out.data();
  int64_t n = v.numel();
  if (smooth) {
    for (int64_t i = 0; i < n; ++i) po[i] = atan_sigmoid(pv[i], width);
  } else {
    for (int64_t i = 0; i < n; ++i) po[i] = pv[i] >= 0.0f ? 1.0f : 0.0f;
  }
  if (want_tape({&v})) {
    out.set_requires_grad(true);
    auto vn = v.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([vn, on, width] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(vn)) return;
      auto& gv = grad_buf(vn);
      for (size_t i = 0; i < g->size(); ++i)
        gv[i] += (*g)[i] * atan_sigmoid_deriv(vn->values[i], width);
    });
  }
  return out;
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  LIDIFF_CHECK(a.rank() == 2 && b.rank() == 2, "matmul expects 2-D operands, got ",
               shape_str(a.shape()), " and ", shape_str(b.shape()));
  LIDIFF_CHECK(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree, ",
               shape_str(a.shape()), " vs ", shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p)
        acc += static_cast<double>(pa[i * k + p]) * static_cast<double>(pb[p * n + j]);
      po[i * n + j] = static_cast<float>(acc);
    }
  }
  if (want_tape({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    GradTape::active()->record([an, bn, on, m, k, n] {
      const auto* g = out_grad(on);
      if (!g) return;
      const float* pg = g->data();
      if (accum_allowed(an)) {  // dA = dC·Bᵀ
        auto& ga = grad_buf(an);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j)
              acc += static_cast<double>(pg[i * n + j]) *
                     static_cast<double>(bn->values[p * n + j]);
            ga[i * k + p] += static_cast<float>(acc);
          }
      }
      if (accum_allowed(bn)) {  // dB = Aᵀ·dC
        auto& gb = grad_buf(bn);
        for (int64_t p = 0; p < k; ++p)
          for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < m; ++i)
              acc += static_cast<double>(an->values[i * k + p]) *
                     static_cast<double>(pg[i * n + j]);
            gb[p * n + j] += static_cast<float>(acc);
          }
      }
    });
  }
  return out;
}

Tensor matmul_ta(const Tensor& a, const Tensor& b) {
  LIDIFF_CHECK(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
               "matmul_ta: incompatible shapes ", shape_str(a.shape()), " and ",
               shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({k, n});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t p = 0; p < k; ++p)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < m; ++i)
        acc += static_cast<double>(pa[i * k + p]) * static_cast<double>(pb[i * n + j]);
      po[p * n + j] = static_cast<float>(acc);
    }
  if (want_tape({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    GradTape::active()->record([an, bn, on, m, k, n] {
      const auto* g = out_grad(on);
      if (!g) return;
      const float* pg = g->data();
      if (accum_allowed(an)) {  // dA = B·dCᵀ
        auto& ga = grad_buf(an);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j)
              acc += static_cast<double>(bn->values[i * n + j]) *
                     static_cast<double>(pg[p * n + j]);
            ga[i * k + p] += static_cast<float>(acc);
          }
      }
      if (accum_allowed(bn)) {  // dB = A·dC
        auto& gb = grad_buf(bn);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p)
              acc += static_cast<double>(an->values[i * k + p]) *
                     static_cast<double>(pg[p * n + j]);
            gb[i * n + j] += static_cast<float>(acc);
          }
      }
    });
  }
  return out;
}

Tensor matmul_tb(const Tensor& a, const Tensor& b) {
  LIDIFF_CHECK(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
               "matmul_tb: incompatible shapes ", shape_str(a.shape()), " and ",
               shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = Tensor::zeros({m, n});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p)
        acc += static_cast<double>(pa[i * k + p]) * static_cast<double>(pb[j * k + p]);
      po[i * n + j] = static_cast<float>(acc);
    }
  if (want_tape({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    GradTape::active()->record([an, bn, on, m, k, n] {
      const auto* g = out_grad(on);
      if (!g) return;
      const float* pg = g->data();
      if (accum_allowed(an)) {  // dA = dC·B
        auto& ga = grad_buf(an);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j)
              acc += static_cast<double>(pg[i * n + j]) *
                     static_cast<double>(bn->values[j * k + p]);
            ga[i * k + p] += static_cast<float>(acc);
          }
      }
      if (accum_allowed(bn)) {  // dB = dCᵀ·A
        auto& gb = grad_buf(bn);
        for (int64_t j = 0; j < n; ++j)
          for (int64_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int64_t i = 0; i < m; ++i)
              acc += static_cast<double>(pg[i * n + j]) *
                     static_cast<double>(an->values[i * k + p]);
            gb[j * k + p] += static_cast<float>(acc);
          }
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  LIDIFF_CHECK(x.rank() == 2 && bias.rank() == 1 && bias.dim(0) == x.dim(1),
               "add_bias: shapes ", shape_str(x.shape()), " and ", shape_str(bias.shape()));
  int64_t r = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  const float* pb = bias.data();
  float* po = out.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] + pb[j];
  if (want_tape({&x, &bias})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), bn = bias.shared_node(), on = out.shared_node();
    GradTape::active()->record([xn, bn, on, r, d] {
      const auto* g = out_grad(on);
      if (!g) return;
      if (accum_allowed(xn)) {
        auto& gx = grad_buf(xn);
        for (size_t i = 0; i < g->size(); ++i) gx[i] += (*g)[i];
      }
      if (accum_allowed(bn)) {
        auto& gb = grad_buf(bn);
        for (int64_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (int64_t i = 0; i < r; ++i) acc += static_cast<double>((*g)[i * d + j]);
          gb[j] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor mul_colvec(const Tensor& x, const Tensor& v) {
  LIDIFF_CHECK(x.rank() == 2 && v.rank() == 2 && v.dim(1) == 1 && v.dim(0) == x.dim(0),
               "mul_colvec: shapes ", shape_str(x.shape()), " and ", shape_str(v.shape()));
  int64_t r = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  const float* pv = v.data();
  float* po = out.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] * pv[i];
  if (want_tape({&x, &v})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), vn = v.shared_node(), on = out.shared_node();
    GradTape::active()->record([xn, vn, on, r, d] {
      const auto* g = out_grad(on);
      if (!g) return;
      if (accum_allowed(xn)) {
        auto& gx = grad_buf(xn);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < d; ++j) gx[i * d + j] += (*g)[i * d + j] * vn->values[i];
      }
      if (accum_allowed(vn)) {
        auto& gv = grad_buf(vn);
        for (int64_t i = 0; i < r; ++i) {
          double acc = 0.0;
          for (int64_t j = 0; j < d; ++j)
            acc += static_cast<double>((*g)[i * d + j]) *
                   static_cast<double>(xn->values[i * d + j]);
          gv[i] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

// ---- convolution ----

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  LIDIFF_CHECK(x.rank() == 4 && w.rank() == 4, "conv2d expects NCHW input and OIHW weight");
  LIDIFF_CHECK(x.dim(1) == w.dim(1), "conv2d: channel mismatch, input ", shape_str(x.shape()),
               " weight ", shape_str(w.shape()));
  LIDIFF_CHECK(stride >= 1, "conv2d: stride must be >= 1");
  int64_t r = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int64_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int64_t oh = (h + 2 * pad - kh) / stride + 1;
  int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  LIDIFF_CHECK(oh >= 1 && ow >= 1, "conv2d: kernel ", kh, "x", kw, " stride ", stride,
               " does not fit input ", shape_str(x.shape()));
  Tensor out = Tensor::zeros({r, co, oh, ow});
  const float* px = x.data();
  const float* pw = w.data();
  float* po = out.data();
  auto xi = [&](int64_t n, int64_t c, int64_t y, int64_t z) {
    return ((n * ci + c) * h + y) * wd + z;
  };
  for (int64_t n = 0; n < r; ++n)
    for (int64_t f = 0; f < co; ++f)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t z = 0; z < ow; ++z) {
          double acc = 0.0;
          for (int64_t c = 0; c < ci; ++c)
            for (int64_t u = 0; u < kh; ++u) {
              int64_t iy = y * stride + u - pad;
              if (iy < 0 || iy >= h) continue;
              for (int64_t v = 0; v < kw; ++v) {
                int64_t iz = z * stride + v - pad;
                if (iz < 0 || iz >= wd) continue;
                acc += static_cast<double>(px[xi(n, c, iy, iz)]) *
                       static_cast<double>(pw[((f * ci + c) * kh + u) * kw + v]);
              }
            }
          po[((n * co + f) * oh + y) * ow + z] = static_cast<float>(acc);
        }
  if (want_tape({&x, &w})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), wn = w.shared_node(), on = out.shared_node();
    int64_t s = stride, p = pad;
    GradTape::active()->record([xn, wn, on, r, ci, h, wd, co, kh, kw, oh, ow, s, p] {
      const auto* g = out_grad(on);
      if (!g) return;
      const float* pg = g->data();
      bool do_x = accum_allowed(xn), do_w = accum_allowed(wn);
      if (!do_x && !do_w) return;
      std::vector<float>* gx = do_x ? &grad_buf(xn) : nullptr;
      std::vector<float>* gw = do_w ? &grad_buf(wn) : nullptr;
      for (int64_t n = 0; n < r; ++n)
        for (int64_t f = 0; f < co; ++f)
          for (int64_t y = 0; y < oh; ++y)
            for (int64_t z = 0; z < ow; ++z) {
              float go = pg[((n * co + f) * oh + y) * ow + z];
              if (go == 0.0f) continue;
              for (int64_t c = 0; c < ci; ++c)
                for (int64_t u = 0; u < kh; ++u) {
                  int64_t iy = y * s + u - p;
                  if (iy < 0 || iy >= h) continue;
                  for (int64_t v = 0; v < kw; ++v) {
                    int64_t iz = z * s + v - p;
                    if (iz < 0 || iz >= wd) continue;
                    int64_t xoff = ((n * ci + c) * h + iy) * wd + iz;
                    int64_t woff = ((f * ci + c) * kh + u) * kw + v;
                    if (gx) (*gx)[xoff] += go * wn->values[woff];
                    if (gw) (*gw)[woff] += go * xn->values[xoff];
                  }
                }
            }
    });
  }
  return out;
}

// ---- shape ops ----

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1) {
  LIDIFF_CHECK(x.rank() >= 1, "slice_rows on rank-0 tensor");
  int64_t rows = x.dim(0);
  LIDIFF_CHECK(0 <= r0 && r0 < r1 && r1 <= rows, "slice_rows: range [", r0, ",", r1,
               ") out of bounds for ", shape_str(x.shape()));
  int64_t inner = x.numel() / rows;
  Shape oshape = x.shape();
  oshape[0] = r1 - r0;
  Tensor out = Tensor::zeros(oshape);
  std::copy(x.data() + r0 * inner, x.data() + r1 * inner, out.data());
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([xn, on, r0, inner] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      for (size_t i = 0; i < g->size(); ++i) gx[static_cast<size_t>(r0 * inner) + i] += (*g)[i];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  LIDIFF_CHECK(!parts.empty(), "concat_rows of zero tensors");
  Shape oshape = parts[0].shape();
  int64_t inner = parts[0].numel() / parts[0].dim(0);
  int64_t rows = 0;
  for (const auto& p : parts) {
    LIDIFF_CHECK(p.rank() == parts[0].rank() && p.numel() / p.dim(0) == inner,
                 "concat_rows: incompatible part shapes");
    rows += p.dim(0);
  }
  oshape[0] = rows;
  Tensor out = Tensor::zeros(oshape);
  int64_t off = 0;
  bool rec = false;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + off);
    off += p.numel();
    rec = rec || p.requires_grad();
  }
  if (GradTape::active() && rec) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorData>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.shared_node());
    auto on = out.shared_node();
    GradTape::active()->record([nodes, on] {
      const auto* g = out_grad(on);
      if (!g) return;
      size_t off2 = 0;
      for (const auto& nd : nodes) {
        size_t n = nd->values.size();
        if (accum_allowed(nd)) {
          auto& gp = grad_buf(nd);
          for (size_t i = 0; i < n; ++i) gp[i] += (*g)[off2 + i];
        }
        off2 += n;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
  LIDIFF_CHECK(x.rank() == 2, "slice_cols expects a 2-D tensor, got ", shape_str(x.shape()));
  int64_t r = x.dim(0), d = x.dim(1);
  LIDIFF_CHECK(0 <= c0 && c0 < c1 && c1 <= d, "slice_cols: range [", c0, ",", c1,
               ") out of bounds for ", shape_str(x.shape()));
  int64_t w = c1 - c0;
  Tensor out = Tensor::zeros({r, w});
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < w; ++j) po[i * w + j] = px[i * d + c0 + j];
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([xn, on, r, d, c0, w] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < w; ++j) gx[i * d + c0 + j] += (*g)[i * w + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  LIDIFF_CHECK(!parts.empty(), "concat_cols of zero tensors");
  int64_t r = parts[0].dim(0);
  int64_t d = 0;
  bool rec = false;
  for (const auto& p : parts) {
    LIDIFF_CHECK(p.rank() == 2 && p.dim(0) == r, "concat_cols: incompatible part shapes");
    d += p.dim(1);
    rec = rec || p.requires_grad();
  }
  Tensor out = Tensor::zeros({r, d});
  float* po = out.data();
  int64_t c0 = 0;
  for (const auto& p : parts) {
    int64_t w = p.dim(1);
    const float* pp = p.data();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < w; ++j) po[i * d + c0 + j] = pp[i * w + j];
    c0 += w;
  }
  if (GradTape::active() && rec) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorData>> nodes;
    std::vector<int64_t> widths;
    for (const auto& p : parts) {
      nodes.push_back(p.shared_node());
      widths.push_back(p.dim(1));
    }
    auto on = out.shared_node();
    GradTape::active()->record([nodes, widths, on, r, d] {
      const auto* g = out_grad(on);
      if (!g) return;
      int64_t off = 0;
      for (size_t k = 0; k < nodes.size(); ++k) {
        int64_t w = widths[k];
        if (accum_allowed(nodes[k])) {
          auto& gp = grad_buf(nodes[k]);
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < w; ++j) gp[i * w + j] += (*g)[i * d + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  LIDIFF_CHECK(shape_numel(new_shape) == x.numel(), "reshape: ", shape_str(x.shape()),
               " cannot become ", shape_str(new_shape));
  Tensor out = Tensor::from(std::move(new_shape), x.values());
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([xn, on] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      for (size_t i = 0; i < g->size(); ++i) gx[i] += (*g)[i];
    });
  }
  return out;
}

Tensor nchw_to_tokens(const Tensor& x) {
  LIDIFF_CHECK(x.rank() == 4, "nchw_to_tokens expects NCHW, got ", shape_str(x.shape()));
  int64_t r = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t hw = h * w;
  Tensor out = Tensor::zeros({r * hw, c});
  const float* px = x.data();
  float* po = out.data();
  for (int64_t n = 0; n < r; ++n)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t p = 0; p < hw; ++p) po[(n * hw + p) * c + ch] = px[(n * c + ch) * hw + p];
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([xn, on, r, c, hw] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      for (int64_t n = 0; n < r; ++n)
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t p = 0; p < hw; ++p)
            gx[(n * c + ch) * hw + p] += (*g)[(n * hw + p) * c + ch];
    });
  }
  return out;
}

Tensor tokens_to_nchw(const Tensor& x, int64_t c, int64_t h, int64_t w) {
  LIDIFF_CHECK(x.rank() == 2 && x.dim(1) == c && x.dim(0) % (h * w) == 0,
               "tokens_to_nchw: tokens ", shape_str(x.shape()), " incompatible with C=", c,
               " H=", h, " W=", w);
  int64_t hw = h * w;
  int64_t r = x.dim(0) / hw;
  Tensor out = Tensor::zeros({r, c, h, w});
  const float* px = x.data();
  float* po = out.data();
  for (int64_t n = 0; n < r; ++n)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t p = 0; p < hw; ++p) po[(n * c + ch) * hw + p] = px[(n * hw + p) * c + ch];
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([xn, on, r, c, hw] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      for (int64_t n = 0; n < r; ++n)
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t p = 0; p < hw; ++p)
            gx[(n * hw + p) * c + ch] += (*g)[(n * c + ch) * hw + p];
    });
  }
  return out;
}

// ---- reductions ----

Tensor reduce_sum(const Tensor& x, int axis) {
  LIDIFF_CHECK(x.rank() == 2, "reduce_sum expects a 2-D tensor, got ", shape_str(x.shape()));
  LIDIFF_CHECK(axis == 0 || axis == 1, "reduce_sum: invalid axis ", axis, " for rank 2");
  int64_t r = x.dim(0), d = x.dim(1);
  Shape oshape = axis == 0 ? Shape{1, d} : Shape{r, 1};
  Tensor out = Tensor::zeros(oshape);
  const float* px = x.data();
  float* po = out.data();
  if (axis == 0) {
    for (int64_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < r; ++i) acc += static_cast<double>(px[i * d + j]);
      po[j] = static_cast<float>(acc);
    }
  } else {
    for (int64_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(px[i * d + j]);
      po[i] = static_cast<float>(acc);
    }
  }
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([xn, on, r, d, axis] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < d; ++j)
          gx[i * d + j] += axis == 0 ? (*g)[j] : (*g)[i];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  const float* px = x.data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]);
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  out.node()->scalar_hi = acc;
  out.node()->has_scalar_hi = true;
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([xn, on] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      float go = (*g)[0];
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += go;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  int64_t n = x.numel();
  LIDIFF_CHECK(n > 0, "mean_all of empty tensor");
  double acc = 0.0;
  const float* px = x.data();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]);
  acc /= static_cast<double>(n);
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  out.node()->scalar_hi = acc;
  out.node()->has_scalar_hi = true;
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    float inv = 1.0f / static_cast<float>(n);
    GradTape::active()->record([xn, on, inv] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      float go = (*g)[0] * inv;
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += go;
    });
  }
  return out;
}

Tensor mean_time_tokens(const Tensor& x, int64_t t_steps, int64_t batch, int64_t tokens) {
  LIDIFF_CHECK(x.rank() == 2 && x.dim(0) == t_steps * batch * tokens,
               "mean_time_tokens: rows of ", shape_str(x.shape()), " != T*B*N = ",
               t_steps * batch * tokens);
  int64_t d = x.dim(1);
  Tensor out = Tensor::zeros({batch, d});
  const float* px = x.data();
  float* po = out.data();
  double inv = 1.0 / static_cast<double>(t_steps * tokens);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int64_t t = 0; t < t_steps; ++t)
        for (int64_t n = 0; n < tokens; ++n)
          acc += static_cast<double>(px[(((t * batch) + b) * tokens + n) * d + j]);
      po[b * d + j] = static_cast<float>(acc * inv);
    }
  if (want_tape({&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    float finv = static_cast<float>(inv);
    GradTape::active()->record([xn, on, t_steps, batch, tokens, d, finv] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(xn)) return;
      auto& gx = grad_buf(xn);
      for (int64_t b = 0; b < batch; ++b)
        for (int64_t j = 0; j < d; ++j) {
          float go = (*g)[b * d + j] * finv;
          for (int64_t t = 0; t < t_steps; ++t)
            for (int64_t n = 0; n < tokens; ++n)
              gx[(((t * batch) + b) * tokens + n) * d + j] += go;
        }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  LIDIFF_CHECK(logits.rank() == 2, "softmax_cross_entropy expects [batch x classes]");
  int64_t b = logits.dim(0), c = logits.dim(1);
  LIDIFF_CHECK(static_cast<int64_t>(labels.size()) == b, "labels count ", labels.size(),
               " != batch ", b);
  const float* pz = logits.data();
  std::vector<float> softmax(static_cast<size_t>(b * c));
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    LIDIFF_CHECK(labels[i] >= 0 && labels[i] < c, "label ", labels[i], " out of range [0,", c,
                 ") at row ", i);
    double m = pz[i * c];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, static_cast<double>(pz[i * c + j]));
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(pz[i * c + j]) - m);
    double lse = m + std::log(z);
    for (int64_t j = 0; j < c; ++j)
      softmax[static_cast<size_t>(i * c + j)] =
          static_cast<float>(std::exp(static_cast<double>(pz[i * c + j]) - lse));
    total += lse - static_cast<double>(pz[i * c + labels[i]]);
  }
  total /= static_cast<double>(b);
  Tensor out = Tensor::scalar(static_cast<float>(total));
  out.node()->scalar_hi = total;
  out.node()->has_scalar_hi = true;
  if (want_tape({&logits})) {
    out.set_requires_grad(true);
    auto zn = logits.shared_node();
    auto on = out.shared_node();
    GradTape::active()->record([zn, on, softmax, labels, b, c] {
      const auto* g = out_grad(on);
      if (!g || !accum_allowed(zn)) return;
      auto& gz = grad_buf(zn);
      float go = (*g)[0] / static_cast<float>(b);
      for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < c; ++j) {
          float p = softmax[static_cast<size_t>(i * c + j)];
          gz[i * c + j] += go * (p - (labels[i] == j ? 1.0f : 0.0f));
        }
    });
  }
  return out;
}

// ---- non-tape helpers ----

bool all_finite(const Tensor& x) {
  const float* p = x.data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

bool is_binary(const Tensor& x) {
  const float* p = x.data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i)
    if (p[i] != 0.0f && p[i] != 1.0f) return false;
  return true;
}

double sum_values(const Tensor& x) {
  double acc = 0.0;
  const float* p = x.data();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(p[i]);
  return acc;
}

}  // namespace lidiff
