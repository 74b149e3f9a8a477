#include "lidiff/attention.hpp"

#include "lidiff/energy.hpp"

namespace lidiff {

namespace {
void check_spikes(const Tensor& x, const FwdCtx& ctx, const char* where) {
  if (ctx.strict_spikes)
    LIDIFF_CHECK(is_binary(x), where, ": non-spike input in strict mode");
}

void profile_attn(FwdCtx& ctx, LayerKind kind, int64_t dim, int heads, const Tensor& input,
                  double mac_flops) {
  if (!ctx.profiler) return;
  LayerDescriptor d;
  d.kind = kind;
  d.tokens = ctx.tokens;
  d.d_in = dim;
  d.heads = heads;
  ctx.profiler->record(ctx.scope, kind, ctx.stage, ctx.pass, count_flops(d), mac_flops, input);
}
}  // namespace

Tensor spike_linear_attention(const Tensor& q_s, const Tensor& k_s, const Tensor& v_s,
                              int64_t tokens, int heads) {
  LIDIFF_CHECK(q_s.shape() == k_s.shape() && k_s.shape() == v_s.shape(),
               "spike attention: q/k/v shapes differ: ", shape_str(q_s.shape()), " ",
               shape_str(k_s.shape()), " ", shape_str(v_s.shape()));
  LIDIFF_CHECK(q_s.rank() == 2 && q_s.dim(0) % tokens == 0,
               "spike attention: rows of ", shape_str(q_s.shape()),
               " not divisible by token count ", tokens);
  int64_t d = q_s.dim(1);
  LIDIFF_CHECK(heads >= 1 && d % heads == 0, "spike attention: dim ", d,
               " not divisible by heads ", heads);
  int64_t groups = q_s.dim(0) / tokens;
  int64_t dh = d / heads;

  std::vector<Tensor> group_out;
  group_out.reserve(static_cast<size_t>(groups));
  for (int64_t g = 0; g < groups; ++g) {
    Tensor qg = slice_rows(q_s, g * tokens, (g + 1) * tokens);
    Tensor kg = slice_rows(k_s, g * tokens, (g + 1) * tokens);
    Tensor vg = slice_rows(v_s, g * tokens, (g + 1) * tokens);
    if (heads == 1) {
      group_out.push_back(matmul(qg, matmul_ta(kg, vg)));
      continue;
    }
    std::vector<Tensor> head_out;
    head_out.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(qg, h * dh, (h + 1) * dh);
      Tensor kh = slice_cols(kg, h * dh, (h + 1) * dh);
      Tensor vh = slice_cols(vg, h * dh, (h + 1) * dh);
      head_out.push_back(matmul(qh, matmul_ta(kh, vh)));
    }
    group_out.push_back(concat_cols(head_out));
  }
  return concat_rows(group_out);
}

Tensor sdsa_forward(const Tensor& q_s, const Tensor& k_s, const Tensor& v_s, int64_t tokens,
                    int heads, const Linear& w_attn, const BatchNorm& bn_attn,
                    const LifLayer& sn_out, FwdCtx& ctx) {
  Tensor attn = spike_linear_attention(q_s, k_s, v_s, tokens, heads);
  Tensor projected = bn_attn.forward_rows(w_attn.forward(attn), ctx.training, ctx.update_bn);
  return sn_out.forward(projected, ctx.t_steps, ctx.smooth);
}

// ---- FfLidiffAttention ----

FfLidiffAttention::FfLidiffAttention(int64_t dim, int heads, LifParams neuron, bool summed_q)
    : wq(dim, dim),
      wk(dim, dim),
      bn_q(dim),
      bn_k(dim),
      sn_q1(neuron),
      sn_q2(neuron),
      sn_k(neuron),
      sn_a(neuron),
      dim_(dim),
      heads_(heads),
      summed_q_(summed_q) {
  LIDIFF_CHECK(heads >= 1 && dim % heads == 0, "ff attention: dim ", dim,
               " not divisible by heads ", heads);
  LIDIFF_CHECK((dim / heads) % 2 == 0,
               "ff attention: per-head channel width must be even for the split, got ",
               dim / heads);
}

void FfLidiffAttention::init(const std::string& prefix, uint64_t seed) {
  wq.init(prefix + ".wq", seed);
  wk.init(prefix + ".wk", seed);
}

void FfLidiffAttention::register_into(ParamRegistry& reg, const std::string& prefix) const {
  wq.register_into(reg, prefix + ".wq");
  wk.register_into(reg, prefix + ".wk");
  bn_q.register_into(reg, prefix + ".bn_q");
  bn_k.register_into(reg, prefix + ".bn_k");
}

Tensor FfLidiffAttention::mask_and_gate(const Tensor& q_s1, const Tensor& q_s2,
                                        const Tensor& k_s, FwdCtx& ctx) const {
  int64_t half = dim_ / 2;
  LIDIFF_CHECK(q_s1.dim(1) == half && q_s2.dim(1) == half && k_s.dim(1) == dim_,
               "mask_and_gate: widths ", q_s1.dim(1), "/", q_s2.dim(1), "/", k_s.dim(1),
               " inconsistent with dim ", dim_);
  int64_t half_h = half / heads_;

  std::vector<Tensor> exc, inh;
  for (int h = 0; h < heads_; ++h) {
    exc.push_back(reduce_sum(slice_cols(q_s1, h * half_h, (h + 1) * half_h), 1));
    inh.push_back(reduce_sum(slice_cols(q_s2, h * half_h, (h + 1) * half_h), 1));
  }
  Tensor a_e = heads_ == 1 ? exc[0] : concat_cols(exc);
  Tensor a_i = heads_ == 1 ? inh[0] : concat_cols(inh);
  Tensor a_combined = sn_a.forward(sub(a_e, a_i), ctx.t_steps, ctx.smooth);
  if (ctx.recorder) ctx.recorder->add(ctx.scope + ".a_combined", a_combined);

  int64_t dh = dim_ / heads_;
  if (heads_ == 1) return mul_colvec(k_s, a_combined);
  std::vector<Tensor> gated;
  for (int h = 0; h < heads_; ++h)
    gated.push_back(
        mul_colvec(slice_cols(k_s, h * dh, (h + 1) * dh), slice_cols(a_combined, h, h + 1)));
  return concat_cols(gated);
}

Tensor FfLidiffAttention::forward(const Tensor& x, FwdCtx& ctx) const {
  check_spikes(x, ctx, "ff attention");
  profile_attn(ctx, LayerKind::AttentionFf, dim_, heads_, x, 0.0);
  Tensor q = bn_q.forward_rows(wq.forward(x), ctx.training, ctx.update_bn);
  Tensor k = bn_k.forward_rows(wk.forward(x), ctx.training, ctx.update_bn);
  Tensor k_s = sn_k.forward(k, ctx.t_steps, ctx.smooth);
  int64_t dh = dim_ / heads_;

  if (summed_q_) {
    // Reduced variant: token score is the channel sum of the raw query.
    std::vector<Tensor> sums;
    for (int h = 0; h < heads_; ++h)
      sums.push_back(reduce_sum(slice_cols(q, h * dh, (h + 1) * dh), 1));
    Tensor a = heads_ == 1 ? sums[0] : concat_cols(sums);
    Tensor a_combined = sn_a.forward(a, ctx.t_steps, ctx.smooth);
    if (ctx.recorder) ctx.recorder->add(ctx.scope + ".a_combined", a_combined);
    if (heads_ == 1) return mul_colvec(k_s, a_combined);
    std::vector<Tensor> gated;
    for (int h = 0; h < heads_; ++h)
      gated.push_back(
          mul_colvec(slice_cols(k_s, h * dh, (h + 1) * dh), slice_cols(a_combined, h, h + 1)));
    return concat_cols(gated);
  }

  // Per head, the first half of the channels drives excitation and the
  // second half inhibition; lay the halves out contiguously so the spiking
  // layers see one tensor each.
  int64_t half_h = dh / 2;
  std::vector<Tensor> firsts, seconds;
  for (int h = 0; h < heads_; ++h) {
    firsts.push_back(slice_cols(q, h * dh, h * dh + half_h));
    seconds.push_back(slice_cols(q, h * dh + half_h, (h + 1) * dh));
  }
  Tensor q1 = heads_ == 1 ? firsts[0] : concat_cols(firsts);
  Tensor q2 = heads_ == 1 ? seconds[0] : concat_cols(seconds);
  Tensor q_s1 = sn_q1.forward(q1, ctx.t_steps, ctx.smooth);
  Tensor q_s2 = sn_q2.forward(q2, ctx.t_steps, ctx.smooth);
  return mask_and_gate(q_s1, q_s2, k_s, ctx);
}

// ---- FbLidiffAttention ----

FbLidiffAttention::FbLidiffAttention(int64_t dim, int heads, LifParams neuron,
                                     bool with_feedback)
    : wq(dim, dim),
      wk(dim, dim),
      wv(dim, dim),
      wattn(dim, dim),
      bn_q(dim),
      bn_k(dim),
      bn_v(dim),
      bn_attn(dim),
      sn_q(neuron),
      sn_k(neuron),
      sn_v(neuron),
      sn_out(neuron),
      dim_(dim),
      heads_(heads),
      with_feedback_(with_feedback) {
  LIDIFF_CHECK(heads >= 1 && dim % heads == 0, "fb attention: dim ", dim,
               " not divisible by heads ", heads);
  if (with_feedback_) {
    w_p1 = Tensor::zeros({1, dim});
    w_p2 = Tensor::zeros({1, dim});
    w_p1.mark_param();
    w_p2.mark_param();
    w_fb = Linear(1, dim);
    bn_fb = BatchNorm(dim);
    sn_fb = LifLayer(neuron);
  }
}

void FbLidiffAttention::init(const std::string& prefix, uint64_t seed) {
  wq.init(prefix + ".wq", seed);
  wk.init(prefix + ".wk", seed);
  wv.init(prefix + ".wv", seed);
  wattn.init(prefix + ".wattn", seed);
  if (with_feedback_) {
    // Small positive prompts keep the feedback signal near zero at the start
    // of training, so pass 2 begins close to pass 1.
    uniform_fill(w_p1, 0.0f, 0.1f, name_seed(prefix + ".w_p1", seed));
    uniform_fill(w_p2, 0.0f, 0.1f, name_seed(prefix + ".w_p2", seed));
    w_fb.init(prefix + ".w_fb", seed);
  }
}

void FbLidiffAttention::register_into(ParamRegistry& reg, const std::string& prefix) const {
  wq.register_into(reg, prefix + ".wq");
  wk.register_into(reg, prefix + ".wk");
  wv.register_into(reg, prefix + ".wv");
  wattn.register_into(reg, prefix + ".wattn");
  bn_q.register_into(reg, prefix + ".bn_q");
  bn_k.register_into(reg, prefix + ".bn_k");
  bn_v.register_into(reg, prefix + ".bn_v");
  bn_attn.register_into(reg, prefix + ".bn_attn");
  if (with_feedback_) {
    reg.add_param(prefix + ".w_p1", w_p1);
    reg.add_param(prefix + ".w_p2", w_p2);
    w_fb.register_into(reg, prefix + ".w_fb");
    bn_fb.register_into(reg, prefix + ".bn_fb");
  }
}

Tensor FbLidiffAttention::encode(const Linear& proj, const BatchNorm& bn, const LifLayer& sn,
                                 const Tensor& x, FwdCtx& ctx) const {
  return sn.forward(bn.forward_rows(proj.forward(x), ctx.training, ctx.update_bn), ctx.t_steps,
                    ctx.smooth);
}

Tensor FbLidiffAttention::forward_first(const Tensor& x, int64_t tokens, FwdCtx& ctx) const {
  check_spikes(x, ctx, "fb attention (first pass)");
  profile_attn(ctx, LayerKind::AttentionFb, dim_, heads_, x, 0.0);
  Tensor q_s = encode(wq, bn_q, sn_q, x, ctx);
  Tensor k_s = encode(wk, bn_k, sn_k, x, ctx);
  Tensor v_s = encode(wv, bn_v, sn_v, x, ctx);
  return sdsa_forward(q_s, k_s, v_s, tokens, heads_, wattn, bn_attn, sn_out, ctx);
}

Tensor FbLidiffAttention::compute_feedback(const Tensor& o_last, FwdCtx& ctx) const {
  LIDIFF_CHECK(with_feedback_, "compute_feedback on a block built without feedback");
  LIDIFF_CHECK(o_last.rank() == 2 && o_last.dim(1) == dim_,
               "compute_feedback: prompt length ", dim_, " does not match input ",
               shape_str(o_last.shape()));
  Tensor a_e = clamp01(matmul_tb(o_last, w_p1));  // [rows x 1]
  Tensor a_i = clamp01(matmul_tb(o_last, w_p2));
  Tensor a_combined = sub(a_e, a_i);
  if (ctx.recorder) {
    ctx.recorder->add(ctx.scope + ".fb_a_e", a_e);
    ctx.recorder->add(ctx.scope + ".fb_a_i", a_i);
    ctx.recorder->add(ctx.scope + ".fb_a_combined", a_combined);
  }
  Tensor aligned = bn_fb.forward_rows(w_fb.forward(a_combined), ctx.training, ctx.update_bn);
  return sn_fb.forward(aligned, ctx.t_steps, ctx.smooth);
}

Tensor FbLidiffAttention::forward_second(const Tensor& x2, const Tensor& x_fb, int64_t tokens,
                                         FwdCtx& ctx) const {
  check_spikes(x2, ctx, "fb attention (second pass)");
  LIDIFF_CHECK(x2.shape() == x_fb.shape(), "fb second pass: input ", shape_str(x2.shape()),
               " vs feedback ", shape_str(x_fb.shape()));
  // The prompt products, clamps and the 1->D alignment operate on real values;
  // they ride on this entry as full-precision MAC work.
  profile_attn(ctx, LayerKind::AttentionFb, dim_, heads_, x2,
               with_feedback_ ? feedback_mac_flops(ctx.tokens, dim_) : 0.0);
  Tensor q_s = encode(wq, bn_q, sn_q, x2, ctx);
  Tensor k_s = encode(wk, bn_k, sn_k, x2, ctx);
  // Feedback is injected into the value path only.
  Tensor v_pre = add(wv.forward(x2), wv.forward(x_fb));
  Tensor v_s = sn_v.forward(bn_v.forward_rows(v_pre, ctx.training, ctx.update_bn), ctx.t_steps,
                            ctx.smooth);
  return sdsa_forward(q_s, k_s, v_s, tokens, heads_, wattn, bn_attn, sn_out, ctx);
}

}  // namespace lidiff
