#pragma once

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lidiff/attention.hpp"
#include "lidiff/context.hpp"
#include "lidiff/energy.hpp"
#include "lidiff/gradcheck.hpp"

namespace lidiff {

enum class ResidualStyle { MembraneShortcut, SewAdd };

ResidualStyle residual_style_from_string(const std::string& s);
std::string residual_style_name(ResidualStyle r);

/// Full architecture description. Channel widths follow the C / 2C / 4C
/// schedule across the three stages; spatial token grids follow H/4, H/8,
/// H/16. Patch strides clamp once a map degenerates to 1x1, which admits
/// inputs smaller than 16 for tiny diagnostic configs.
struct ModelConfig {
  int64_t time_steps = 2;
  int64_t in_channels = 1;  // 3 static images, 2 event frames, 1 synthetic
  int64_t img_h = 16, img_w = 16;
  int64_t base_channels = 16;
  int64_t depth1 = 1, depth2 = 1, depth3 = 1;
  int heads1 = 1, heads2 = 1, heads3 = 1;
  int64_t mlp_ratio = 4;
  int64_t num_classes = 2;
  float tau = 2.0f, u_th = 1.0f, u_reset = 0.0f, surrogate_width = 2.0f;
  bool no_ff_lidiff = false;
  bool no_fb_lidiff = false;
  bool cross_block_sharing = false;
  ResidualStyle residual = ResidualStyle::MembraneShortcut;
  float alpha = 0.5f;

  void validate() const;
  LifParams neuron() const { return {tau, u_th, u_reset, surrogate_width}; }
  int64_t stage_channels(int stage) const;  // 1..3 -> C, 2C, 4C
};

struct SpMlp {
  SpMlp() = default;
  SpMlp(int64_t dim, int64_t ratio, LifParams neuron);
  void init(const std::string& prefix, uint64_t seed);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;
  Tensor forward(const Tensor& x, FwdCtx& ctx) const;

  Linear fc1, fc2;
  BatchNorm bn1, bn2;
  LifLayer sn1, sn2;
  int64_t dim = 0, hidden = 0;
};

/// conv3x3(s1,p1)+BN+SN then a patch-reduction conv (kernel == stride) +BN+SN.
struct DownsampleStage {
  DownsampleStage() = default;
  DownsampleStage(int64_t in_ch, int64_t out_ch, int64_t in_h, int64_t in_w, int patch,
                  bool first, LifParams neuron);
  void init(const std::string& prefix, uint64_t seed);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;
  Tensor forward(const Tensor& x, FwdCtx& ctx, int stage) const;

  Conv2d conv_pre, conv_patch;
  BatchNorm bn_pre, bn_patch;
  LifLayer sn_pre, sn_patch;
  int64_t out_h = 0, out_w = 0;
  bool first = false;
};

struct DualLossResult {
  Tensor total;
  Tensor loss1;
  Tensor loss2;
};

// alpha * CE(logits1, y) + (1 - alpha) * CE(logits2, y).
DualLossResult dual_loss(const Tensor& logits1, const Tensor& logits2,
                         const std::vector<int>& labels, float alpha);

class Network {
 public:
  explicit Network(const ModelConfig& cfg, uint64_t seed);

  struct Pass1Result {
    Tensor logits;
    Tensor stage3_input;   // spike tokens entering stage 3 (cached for pass 2)
    Tensor stage3_output;  // carrier after the last stage-3 block (feedback source)
    int64_t batch = 0;
  };

  // input is [T*B, C_in, H, W], time-major.
  Pass1Result forward_pass1(const Tensor& input, FwdCtx& ctx) const;
  Tensor forward_pass2(const Pass1Result& cache, FwdCtx& ctx) const;

  // Deployed prediction path: logits2 when feedback blocks exist, else logits1.
  Tensor infer_logits(const Tensor& input, FwdCtx& ctx) const;
  std::vector<int> predict(const Tensor& input, FwdCtx& ctx) const;

  const ModelConfig& config() const { return cfg_; }
  const ParamRegistry& registry() const { return registry_; }
  std::vector<std::pair<std::string, Tensor>> trainable_params() const;
  void zero_grads() const;

  std::pair<int64_t, int64_t> stage_grid(int stage) const;  // 1..3 -> {h, w}
  int64_t stage_tokens(int stage) const {
    auto [h, w] = stage_grid(stage);
    return h * w;
  }

  std::vector<std::shared_ptr<FbLidiffAttention>>& stage3_attn() { return s3_attn_; }
  const std::vector<std::shared_ptr<FbLidiffAttention>>& stage3_attn() const {
    return s3_attn_;
  }

 private:
  Tensor run_stage12_blocks(const Tensor& tokens, int stage, FwdCtx& ctx) const;
  Tensor apply_residual(const Tensor& carrier, const Tensor& module_out) const;
  Tensor head_logits(const Tensor& o, int64_t batch, FwdCtx& ctx) const;
  void profile_attention(FwdCtx& ctx, const std::string& id, LayerKind kind, int stage,
                         int64_t tokens, int64_t dim, int heads, const Tensor& input,
                         bool with_feedback_macs = false) const;
  void profile_linear(FwdCtx& ctx, const std::string& id, int stage, int64_t tokens,
                      int64_t d_in, int64_t d_out, const Tensor& input) const;

  ModelConfig cfg_;
  DownsampleStage ds1_, ds2_, ds3_;
  std::vector<std::shared_ptr<FfLidiffAttention>> s1_attn_, s2_attn_;
  std::vector<std::shared_ptr<SpMlp>> s1_mlp_, s2_mlp_;
  std::vector<std::shared_ptr<FbLidiffAttention>> s3_attn_;
  std::vector<std::shared_ptr<SpMlp>> s3_mlp_;
  LifLayer head_sn_;
  Linear head_fc_;
  ParamRegistry registry_;
  std::array<std::pair<int64_t, int64_t>, 3> grids_{};
};

// Accuracy of the deployed prediction path over pre-batched inputs.
double eval_accuracy(const Network& net, const std::vector<Tensor>& batch_inputs,
                     const std::vector<std::vector<int>>& batch_labels, FwdCtx& ctx);

// Whole-model gradient check: tape gradients of the training loss versus
// central finite differences, both evaluated on the surrogate-smoothed
// forward (spikes replaced by their sigmoid), over `samples` parameter
// elements drawn across the whole parameter set.
GradCheckReport model_grad_check(const Network& net, const Tensor& batch,
                                 const std::vector<int>& labels, float eps, int64_t samples,
                                 uint64_t seed);

}  // namespace lidiff
