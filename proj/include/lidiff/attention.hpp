#pragma once

#include "lidiff/context.hpp"
#include "lidiff/layers.hpp"
#include "lidiff/neuron.hpp"

namespace lidiff {

// Linear-complexity spike attention core: within every group of `tokens`
// rows and every head, attn = q · (kᵀ · v). With binary operands all
// accumulations are exact small integers.
Tensor spike_linear_attention(const Tensor& q_s, const Tensor& k_s, const Tensor& v_s,
                              int64_t tokens, int heads);

// Output half of spike-driven self-attention: the linear kernel above
// followed by the output projection, batch norm and a spiking layer.
Tensor sdsa_forward(const Tensor& q_s, const Tensor& k_s, const Tensor& v_s, int64_t tokens,
                    int heads, const Linear& w_attn, const BatchNorm& bn_attn,
                    const LifLayer& sn_out, FwdCtx& ctx);

/// Feedforward lateral-inhibition attention. The query is split per head into
/// an excitatory and an inhibitory half; their spike-encoded channel sums are
/// differenced, spike-encoded again, and the result gates the key spikes as a
/// token-wise mask. With summed_q=true the split/difference is replaced by a
/// plain channel sum over the whole query (the reduced variant used for
/// ablation runs).
class FfLidiffAttention {
 public:
  FfLidiffAttention() = default;
  FfLidiffAttention(int64_t dim, int heads, LifParams neuron, bool summed_q = false);

  void init(const std::string& prefix, uint64_t seed);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;

  Tensor forward(const Tensor& x, FwdCtx& ctx) const;

  // Mask stage alone, starting from already spike-encoded inputs. Unit tests
  // drive this directly to force specific spike patterns past the encoders.
  Tensor mask_and_gate(const Tensor& q_s1, const Tensor& q_s2, const Tensor& k_s,
                       FwdCtx& ctx) const;

  int64_t dim() const { return dim_; }
  int heads() const { return heads_; }
  bool summed_q() const { return summed_q_; }

  Linear wq, wk;
  BatchNorm bn_q, bn_k;
  LifLayer sn_q1, sn_q2, sn_k, sn_a;

 private:
  int64_t dim_ = 0;
  int heads_ = 1;
  bool summed_q_ = false;
};

/// Feedback lateral-inhibition attention block. The first propagation is
/// plain spike-driven attention; between propagations the last block's output
/// is projected through two learnable prompts, clamped, differenced and
/// re-expanded into a feedback tensor; the second propagation injects that
/// feedback into the value path only, reusing all first-pass weights.
/// Constructed without feedback it degrades to the plain SDSA block used by
/// the ablation configuration.
class FbLidiffAttention {
 public:
  FbLidiffAttention() = default;
  FbLidiffAttention(int64_t dim, int heads, LifParams neuron, bool with_feedback = true);

  void init(const std::string& prefix, uint64_t seed);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;

  Tensor forward_first(const Tensor& x, int64_t tokens, FwdCtx& ctx) const;
  Tensor compute_feedback(const Tensor& o_last, FwdCtx& ctx) const;
  Tensor forward_second(const Tensor& x2, const Tensor& x_fb, int64_t tokens,
                        FwdCtx& ctx) const;

  int64_t dim() const { return dim_; }
  int heads() const { return heads_; }
  bool has_feedback() const { return with_feedback_; }

  Linear wq, wk, wv, wattn;
  BatchNorm bn_q, bn_k, bn_v, bn_attn;
  LifLayer sn_q, sn_k, sn_v, sn_out;
  // feedback machinery
  Tensor w_p1, w_p2;  // [1 x D] prompts
  Linear w_fb;        // 1 -> D alignment
  BatchNorm bn_fb;
  LifLayer sn_fb;

 private:
  Tensor encode(const Linear& proj, const BatchNorm& bn, const LifLayer& sn, const Tensor& x,
                FwdCtx& ctx) const;
  int64_t dim_ = 0;
  int heads_ = 1;
  bool with_feedback_ = true;
};

}  // namespace lidiff
