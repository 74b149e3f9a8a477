#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lidiff/util.hpp"

namespace lidiff {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_param = false;
  // High-precision copy of the value for scalar reductions. Finite-difference
  // oracles read this instead of the float32-rounded scalar, which keeps the
  // difference quotient out of the rounding noise floor.
  double scalar_hi = 0.0;
  bool has_scalar_hi = false;
};
}  // namespace detail

/// Dense row-major float32 tensor handle. Copies are shallow; the payload is
/// shared. Values are immutable by convention once an op has consumed the
/// tensor on an active tape (backward closures read them).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float v);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0f); }
  static Tensor from(Shape shape, std::vector<float> values);
  static Tensor scalar(float v);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int64_t dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }

  float* data() { return d_->values.data(); }
  const float* data() const { return d_->values.data(); }
  std::vector<float>& values() { return d_->values; }
  const std::vector<float>& values() const { return d_->values; }

  float scalar_value() const;
  double scalar_hi() const;  // falls back to float value when not stashed

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    d_->requires_grad = rg;
    return *this;
  }
  bool is_param() const { return d_->is_param; }
  Tensor& mark_param() {
    d_->is_param = true;
    d_->requires_grad = true;
    return *this;
  }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<float>& grad_buffer();  // allocates zeros on demand
  const std::vector<float>* grad_if_any() const {
    return d_->grad.empty() ? nullptr : &d_->grad;
  }
  Tensor grad_tensor() const;  // zeros when no gradient was accumulated
  void zero_grad() { d_->grad.clear(); }

  Tensor clone_values() const;  // deep copy, detached, no grad flags

  detail::TensorData* node() const { return d_.get(); }
  std::shared_ptr<detail::TensorData> shared_node() const { return d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

/// Define-by-run gradient tape. Ops executed while a tape is active (via
/// Scope) append backward closures; backward() replays them in reverse.
/// A tape is single-use: backing up twice without re-recording is an error.
class GradTape {
 public:
  class Scope {
   public:
    explicit Scope(GradTape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* prev_;
  };

  static GradTape* active();

  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
  void backward(const Tensor& scalar_loss);
  size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

/// While a guard with allow=false is alive on this thread, backward closures
/// skip gradient accumulation into parameter tensors. Used by the attack code,
/// which only needs input gradients and must leave the model untouched.
class ParamGradGuard {
 public:
  explicit ParamGradGuard(bool allow);
  ~ParamGradGuard();

 private:
  bool prev_;
};
bool param_grads_enabled();

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);

// min(max(x,0),1); gradient passes only where 0 < x < 1.
Tensor clamp01(const Tensor& x);

// min(a+b, 1) with straight-through gradient where a+b <= 1. Keeps spike
// sums binary in the spike-element-wise residual alternative.
Tensor sat_add1(const Tensor& a, const Tensor& b);

// Forward: Heaviside step (1 iff v >= 0), or the arctangent sigmoid when
// smooth=true. Backward uses the arctangent surrogate derivative either way.
Tensor spike_threshold(const Tensor& v, float width, bool smooth);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);      // [MxK]·[KxN]
Tensor matmul_ta(const Tensor& a, const Tensor& b);   // aᵀ·b, a:[MxK] b:[MxN] -> [KxN]
Tensor matmul_tb(const Tensor& a, const Tensor& b);   // a·bᵀ, a:[MxK] b:[NxK] -> [MxN]
Tensor add_bias(const Tensor& x, const Tensor& bias);  // x:[RxD] + bias:[D]
Tensor mul_colvec(const Tensor& x, const Tensor& v);   // x:[RxD] ⊙ v:[Rx1] broadcast

// ---- convolution (NCHW) ----
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);

// ---- shape ops ----
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1);  // along axis 0
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);  // 2-D only
Tensor concat_cols(const std::vector<Tensor>& parts);        // 2-D only
Tensor reshape(const Tensor& x, Shape new_shape);            // numel-preserving view copy
Tensor nchw_to_tokens(const Tensor& x);                         // [R,C,H,W] -> [R*H*W, C]
Tensor tokens_to_nchw(const Tensor& x, int64_t c, int64_t h, int64_t w);

// ---- reductions ----
Tensor reduce_sum(const Tensor& x, int axis);  // 2-D, keeps a size-1 axis
Tensor sum_all(const Tensor& x);               // scalar, double-accumulated
Tensor mean_all(const Tensor& x);
// Mean over time steps and tokens: x is [T*B*N, D] laid out time-major,
// result is [B, D].
Tensor mean_time_tokens(const Tensor& x, int64_t t_steps, int64_t batch, int64_t tokens);

// Softmax cross-entropy averaged over the batch; labels index rows of logits.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// ---- non-tape helpers ----
bool all_finite(const Tensor& x);
bool is_binary(const Tensor& x);  // every value exactly 0.0f or 1.0f
double sum_values(const Tensor& x);

}  // namespace lidiff
