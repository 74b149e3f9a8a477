#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lidiff/tensor.hpp"

namespace lidiff {

/// Named views of a model's learnable tensors and persistent buffers
/// (buffers = batch-norm running statistics). Order is stable; names are the
/// checkpoint keys and also seed per-tensor initialization.
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, Tensor>> buffers;

  void add_param(const std::string& name, const Tensor& t) { params.emplace_back(name, t); }
  void add_buffer(const std::string& name, const Tensor& t) { buffers.emplace_back(name, t); }
};

void kaiming_uniform_fill(Tensor& t, int64_t fan_in, uint64_t seed);
void uniform_fill(Tensor& t, float lo, float hi, uint64_t seed);

class Linear {
 public:
  Linear() = default;
  Linear(int64_t in_dim, int64_t out_dim, bool with_bias = false);

  void init(const std::string& prefix, uint64_t seed);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;
  Tensor forward(const Tensor& x) const;  // [R x in] -> [R x out]

  int64_t in_dim() const { return in_dim_; }
  int64_t out_dim() const { return out_dim_; }
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], only when constructed with bias

 private:
  int64_t in_dim_ = 0, out_dim_ = 0;
  bool with_bias_ = false;
};

/// Batch normalization over the channel axis. Two layouts are supported:
/// rows ([R x C], statistics over R) and NCHW ([R x C x H x W], statistics
/// over R*H*W). Shared parameters and running statistics either way; in this
/// model the row count already pools the time dimension.
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int64_t channels);

  void init(const std::string& prefix, uint64_t seed);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;

  Tensor forward_rows(const Tensor& x, bool training, bool update_stats) const;
  Tensor forward_nchw(const Tensor& x, bool training, bool update_stats) const;

  int64_t channels() const { return channels_; }
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // buffers, mutated by training forward
  float eps = 1e-5f;
  float momentum = 0.1f;

 private:
  Tensor forward_impl(const Tensor& x, int64_t outer, int64_t inner, bool training,
                      bool update_stats) const;
  int64_t channels_ = 0;
};

// Functional form matching the rows layout; used directly by tests.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 Tensor& running_mean, Tensor& running_var, bool training,
                 bool update_stats = true, float momentum = 0.1f, float eps = 1e-5f);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int64_t in_ch, int64_t out_ch, int kernel, int stride, int pad);

  void init(const std::string& prefix, uint64_t seed);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;
  Tensor forward(const Tensor& x) const;

  int64_t in_ch() const { return in_ch_; }
  int64_t out_ch() const { return out_ch_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }
  Tensor weight;  // [out x in x k x k]

 private:
  int64_t in_ch_ = 0, out_ch_ = 0;
  int kernel_ = 0, stride_ = 1, pad_ = 0;
};

}  // namespace lidiff
