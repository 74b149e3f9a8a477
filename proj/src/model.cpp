#include "lidiff/model.hpp"

#include <algorithm>
#include <cmath>

namespace lidiff {

ResidualStyle residual_style_from_string(const std::string& s) {
  if (s == "membrane_shortcut") return ResidualStyle::MembraneShortcut;
  if (s == "sew_add") return ResidualStyle::SewAdd;
  throw Error("unknown residual style '" + s + "' (membrane_shortcut or sew_add)");
}

std::string residual_style_name(ResidualStyle r) {
  return r == ResidualStyle::MembraneShortcut ? "membrane_shortcut" : "sew_add";
}

void ModelConfig::validate() const {
  LIDIFF_CHECK(time_steps >= 1, "config: time_steps must be >= 1");
  LIDIFF_CHECK(in_channels >= 1 && in_channels <= 3, "config: in_channels must be 1..3");
  LIDIFF_CHECK(img_h >= 4 && img_w >= 4 && img_h % 4 == 0 && img_w % 4 == 0,
               "config: input ", img_h, "x", img_w, " must be divisible by the stage-1 patch");
  LIDIFF_CHECK(base_channels >= 1, "config: base_channels must be positive");
  LIDIFF_CHECK(depth1 >= 0 && depth2 >= 0, "config: negative stage depth");
  LIDIFF_CHECK(no_fb_lidiff ? depth3 >= 0 : depth3 >= 1,
               "config: depth3 must be >= 1 unless no_fb_lidiff is set");
  LIDIFF_CHECK(heads1 >= 1 && heads2 >= 1 && heads3 >= 1, "config: heads must be >= 1");
  for (int s = 1; s <= 3; ++s) {
    int heads = s == 1 ? heads1 : (s == 2 ? heads2 : heads3);
    int64_t d = stage_channels(s);
    LIDIFF_CHECK(d % heads == 0, "config: stage ", s, " width ", d,
                 " not divisible by heads ", heads);
    if (s < 3)
      LIDIFF_CHECK((d / heads) % 2 == 0, "config: stage ", s,
                   " per-head width must be even for the query split");
  }
  LIDIFF_CHECK(mlp_ratio >= 1, "config: mlp_ratio must be >= 1");
  LIDIFF_CHECK(num_classes >= 2, "config: num_classes must be >= 2");
  LIDIFF_CHECK(alpha >= 0.0f && alpha <= 1.0f, "config: alpha must lie in [0,1], got ", alpha);
  neuron().validate();
}

int64_t ModelConfig::stage_channels(int stage) const {
  switch (stage) {
    case 1: return base_channels;
    case 2: return 2 * base_channels;
    case 3: return 4 * base_channels;
  }
  throw Error("stage_channels: stage must be 1..3");
}

// ---- SpMlp ----

SpMlp::SpMlp(int64_t dim_in, int64_t ratio, LifParams neuron)
    : fc1(dim_in, dim_in * ratio),
      fc2(dim_in * ratio, dim_in),
      bn1(dim_in * ratio),
      bn2(dim_in),
      sn1(neuron),
      sn2(neuron),
      dim(dim_in),
      hidden(dim_in * ratio) {}

void SpMlp::init(const std::string& prefix, uint64_t seed) {
  fc1.init(prefix + ".fc1", seed);
  fc2.init(prefix + ".fc2", seed);
}

void SpMlp::register_into(ParamRegistry& reg, const std::string& prefix) const {
  fc1.register_into(reg, prefix + ".fc1");
  bn1.register_into(reg, prefix + ".bn1");
  fc2.register_into(reg, prefix + ".fc2");
  bn2.register_into(reg, prefix + ".bn2");
}

Tensor SpMlp::forward(const Tensor& x, FwdCtx& ctx) const {
  if (ctx.profiler) {
    LayerDescriptor d{LayerKind::LinearLayer, 0, 0, 0, 0, 0, ctx.tokens, dim, hidden, 1};
    ctx.profiler->record(ctx.scope + ".fc1", LayerKind::LinearLayer, ctx.stage, ctx.pass,
                         count_flops(d), 0.0, x);
  }
  Tensor h = sn1.forward(bn1.forward_rows(fc1.forward(x), ctx.training, ctx.update_bn),
                         ctx.t_steps, ctx.smooth);
  if (ctx.profiler) {
    LayerDescriptor d{LayerKind::LinearLayer, 0, 0, 0, 0, 0, ctx.tokens, hidden, dim, 1};
    ctx.profiler->record(ctx.scope + ".fc2", LayerKind::LinearLayer, ctx.stage, ctx.pass,
                         count_flops(d), 0.0, h);
  }
  return sn2.forward(bn2.forward_rows(fc2.forward(h), ctx.training, ctx.update_bn),
                     ctx.t_steps, ctx.smooth);
}

// ---- DownsampleStage ----

DownsampleStage::DownsampleStage(int64_t in_ch, int64_t out_ch, int64_t in_h, int64_t in_w,
                                 int patch, bool is_first, LifParams neuron)
    : conv_pre(in_ch, out_ch, 3, 1, 1),
      bn_pre(out_ch),
      bn_patch(out_ch),
      sn_pre(neuron),
      sn_patch(neuron),
      first(is_first) {
  int64_t eff = std::min<int64_t>(patch, std::min(in_h, in_w));
  LIDIFF_CHECK(eff >= 1, "downsample: degenerate input ", in_h, "x", in_w);
  LIDIFF_CHECK(in_h % eff == 0 && in_w % eff == 0, "downsample: input ", in_h, "x", in_w,
               " not divisible by patch size ", eff);
  conv_patch = Conv2d(out_ch, out_ch, static_cast<int>(eff), static_cast<int>(eff), 0);
  out_h = in_h / eff;
  out_w = in_w / eff;
}

void DownsampleStage::init(const std::string& prefix, uint64_t seed) {
  conv_pre.init(prefix + ".conv_pre", seed);
  conv_patch.init(prefix + ".conv_patch", seed);
}

void DownsampleStage::register_into(ParamRegistry& reg, const std::string& prefix) const {
  conv_pre.register_into(reg, prefix + ".conv_pre");
  bn_pre.register_into(reg, prefix + ".bn_pre");
  conv_patch.register_into(reg, prefix + ".conv_patch");
  bn_patch.register_into(reg, prefix + ".bn_patch");
}

Tensor DownsampleStage::forward(const Tensor& x, FwdCtx& ctx, int stage) const {
  if (ctx.profiler) {
    LayerDescriptor d;
    d.kind = first ? LayerKind::ConvFirst : LayerKind::Conv;
    d.kernel = conv_pre.kernel();
    d.c_in = conv_pre.in_ch();
    d.c_out = conv_pre.out_ch();
    d.h_out = x.dim(2);
    d.w_out = x.dim(3);
    ctx.profiler->record(ctx.scope + ".conv_pre", d.kind, stage, ctx.pass, count_flops(d), 0.0,
                         x);
  }
  Tensor a = sn_pre.forward(bn_pre.forward_nchw(conv_pre.forward(x), ctx.training, ctx.update_bn),
                            ctx.t_steps, ctx.smooth);
  if (ctx.profiler) {
    LayerDescriptor d;
    d.kind = LayerKind::Conv;
    d.kernel = conv_patch.kernel();
    d.c_in = conv_patch.in_ch();
    d.c_out = conv_patch.out_ch();
    d.h_out = out_h;
    d.w_out = out_w;
    ctx.profiler->record(ctx.scope + ".conv_patch", d.kind, stage, ctx.pass, count_flops(d),
                         0.0, a);
  }
  return sn_patch.forward(
      bn_patch.forward_nchw(conv_patch.forward(a), ctx.training, ctx.update_bn), ctx.t_steps,
      ctx.smooth);
}

// ---- dual loss ----

DualLossResult dual_loss(const Tensor& logits1, const Tensor& logits2,
                         const std::vector<int>& labels, float alpha) {
  LIDIFF_CHECK(alpha >= 0.0f && alpha <= 1.0f, "dual_loss: alpha must lie in [0,1], got ",
               alpha);
  DualLossResult r;
  r.loss1 = softmax_cross_entropy(logits1, labels);
  r.loss2 = softmax_cross_entropy(logits2, labels);
  r.total = add(scale(r.loss1, alpha), scale(r.loss2, 1.0f - alpha));
  return r;
}

// ---- Network ----

Network::Network(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg), head_sn_(cfg.neuron()) {
  cfg_.validate();
  LifParams np = cfg_.neuron();
  int64_t c1 = cfg_.stage_channels(1), c2 = cfg_.stage_channels(2), c3 = cfg_.stage_channels(3);

  ds1_ = DownsampleStage(cfg_.in_channels, c1, cfg_.img_h, cfg_.img_w, 4, true, np);
  grids_[0] = {ds1_.out_h, ds1_.out_w};
  ds2_ = DownsampleStage(c1, c2, ds1_.out_h, ds1_.out_w, 2, false, np);
  grids_[1] = {ds2_.out_h, ds2_.out_w};
  ds3_ = DownsampleStage(c2, c3, ds2_.out_h, ds2_.out_w, 2, false, np);
  grids_[2] = {ds3_.out_h, ds3_.out_w};

  for (int64_t i = 0; i < cfg_.depth1; ++i) {
    s1_attn_.push_back(
        std::make_shared<FfLidiffAttention>(c1, cfg_.heads1, np, cfg_.no_ff_lidiff));
    s1_mlp_.push_back(std::make_shared<SpMlp>(c1, cfg_.mlp_ratio, np));
  }
  for (int64_t i = 0; i < cfg_.depth2; ++i) {
    s2_attn_.push_back(
        std::make_shared<FfLidiffAttention>(c2, cfg_.heads2, np, cfg_.no_ff_lidiff));
    s2_mlp_.push_back(std::make_shared<SpMlp>(c2, cfg_.mlp_ratio, np));
  }
  bool fb = !cfg_.no_fb_lidiff;
  if (cfg_.cross_block_sharing && cfg_.depth3 > 0) {
    auto shared_attn = std::make_shared<FbLidiffAttention>(c3, cfg_.heads3, np, fb);
    auto shared_mlp = std::make_shared<SpMlp>(c3, cfg_.mlp_ratio, np);
    for (int64_t i = 0; i < cfg_.depth3; ++i) {
      s3_attn_.push_back(shared_attn);
      s3_mlp_.push_back(shared_mlp);
    }
  } else {
    for (int64_t i = 0; i < cfg_.depth3; ++i) {
      s3_attn_.push_back(std::make_shared<FbLidiffAttention>(c3, cfg_.heads3, np, fb));
      s3_mlp_.push_back(std::make_shared<SpMlp>(c3, cfg_.mlp_ratio, np));
    }
  }
  head_fc_ = Linear(c3, cfg_.num_classes, /*with_bias=*/true);

  // Register and initialize. Initialization is seeded per tensor name, so
  // model variants that share a parameter subset share its exact values.
  auto init_block = [&](auto& obj, const std::string& prefix) {
    obj.register_into(registry_, prefix);
    obj.init(prefix, seed);
  };
  init_block(ds1_, "ds1");
  init_block(ds2_, "ds2");
  init_block(ds3_, "ds3");
  for (size_t i = 0; i < s1_attn_.size(); ++i) {
    std::string p = "stage1.block" + std::to_string(i);
    init_block(*s1_attn_[i], p + ".attn");
    init_block(*s1_mlp_[i], p + ".mlp");
  }
  for (size_t i = 0; i < s2_attn_.size(); ++i) {
    std::string p = "stage2.block" + std::to_string(i);
    init_block(*s2_attn_[i], p + ".attn");
    init_block(*s2_mlp_[i], p + ".mlp");
  }
  if (cfg_.cross_block_sharing && cfg_.depth3 > 0) {
    init_block(*s3_attn_[0], "stage3.shared.attn");
    init_block(*s3_mlp_[0], "stage3.shared.mlp");
  } else {
    for (size_t i = 0; i < s3_attn_.size(); ++i) {
      std::string p = "stage3.block" + std::to_string(i);
      init_block(*s3_attn_[i], p + ".attn");
      init_block(*s3_mlp_[i], p + ".mlp");
    }
  }
  init_block(head_fc_, "head.fc");
}

std::pair<int64_t, int64_t> Network::stage_grid(int stage) const {
  LIDIFF_CHECK(stage >= 1 && stage <= 3, "stage_grid: stage must be 1..3");
  return grids_[static_cast<size_t>(stage - 1)];
}

std::vector<std::pair<std::string, Tensor>> Network::trainable_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, t] : registry_.params)
    if (t.requires_grad()) out.emplace_back(name, t);
  return out;
}

void Network::zero_grads() const {
  for (const auto& [name, t] : registry_.params) const_cast<Tensor&>(t).zero_grad();
}

Tensor Network::apply_residual(const Tensor& carrier, const Tensor& module_out) const {
  if (cfg_.residual == ResidualStyle::MembraneShortcut) return add(carrier, module_out);
  return sat_add1(carrier, module_out);
}

Tensor Network::run_stage12_blocks(const Tensor& tokens, int stage, FwdCtx& ctx) const {
  const auto& attns = stage == 1 ? s1_attn_ : s2_attn_;
  const auto& mlps = stage == 1 ? s1_mlp_ : s2_mlp_;
  Tensor r = tokens;
  for (size_t i = 0; i < attns.size(); ++i) {
    ScopeGuard g(ctx, "stage" + std::to_string(stage) + ".block" + std::to_string(i));
    {
      ScopeGuard ga(ctx, "attn");
      r = apply_residual(r, attns[i]->forward(r, ctx));
    }
    ScopeGuard gm(ctx, "mlp");
    r = apply_residual(r, mlps[i]->forward(r, ctx));
  }
  return r;
}

Tensor Network::head_logits(const Tensor& o, int64_t batch, FwdCtx& ctx) const {
  Tensor spikes = head_sn_.forward(o, ctx.t_steps, ctx.smooth);
  if (ctx.profiler) {
    LayerDescriptor d{LayerKind::LinearLayer, 0, 0, 0, 0, 0, 1,
                      cfg_.stage_channels(3), cfg_.num_classes, 1};
    ctx.profiler->record("head.fc", LayerKind::LinearLayer, 3, ctx.pass, count_flops(d), 0.0,
                         spikes);
  }
  Tensor pooled = mean_time_tokens(spikes, ctx.t_steps, batch, stage_tokens(3));
  return head_fc_.forward(pooled);
}

Network::Pass1Result Network::forward_pass1(const Tensor& input, FwdCtx& ctx) const {
  LIDIFF_CHECK(input.rank() == 4, "forward: input must be [T*B, C, H, W], got ",
               shape_str(input.shape()));
  LIDIFF_CHECK(input.dim(1) == cfg_.in_channels && input.dim(2) == cfg_.img_h &&
                   input.dim(3) == cfg_.img_w,
               "forward: input ", shape_str(input.shape()), " does not match configured ",
               cfg_.in_channels, "x", cfg_.img_h, "x", cfg_.img_w);
  LIDIFF_CHECK(input.dim(0) % cfg_.time_steps == 0, "forward: leading dim ", input.dim(0),
               " not divisible by T=", cfg_.time_steps);
  LIDIFF_CHECK(all_finite(input), "forward: non-finite input");
  int64_t batch = input.dim(0) / cfg_.time_steps;
  ctx.t_steps = cfg_.time_steps;
  ctx.pass = 1;

  ctx.stage = 1;
  ctx.tokens = stage_tokens(1);
  Tensor s1;
  {
    ScopeGuard g(ctx, "ds1");
    s1 = ds1_.forward(input, ctx, 1);
  }
  Tensor r = run_stage12_blocks(nchw_to_tokens(s1), 1, ctx);

  ctx.stage = 2;
  ctx.tokens = stage_tokens(2);
  Tensor m2 = tokens_to_nchw(r, cfg_.stage_channels(1), grids_[0].first, grids_[0].second);
  Tensor s2;
  {
    ScopeGuard g(ctx, "ds2");
    s2 = ds2_.forward(m2, ctx, 2);
  }
  r = run_stage12_blocks(nchw_to_tokens(s2), 2, ctx);

  ctx.stage = 3;
  ctx.tokens = stage_tokens(3);
  Tensor m3 = tokens_to_nchw(r, cfg_.stage_channels(2), grids_[1].first, grids_[1].second);
  Tensor s3;
  {
    ScopeGuard g(ctx, "ds3");
    s3 = ds3_.forward(m3, ctx, 3);
  }
  Tensor stage3_in = nchw_to_tokens(s3);

  Tensor r3 = stage3_in;
  for (size_t m = 0; m < s3_attn_.size(); ++m) {
    ScopeGuard g(ctx, "stage3.block" + std::to_string(m));
    {
      ScopeGuard ga(ctx, "attn");
      r3 = apply_residual(r3, s3_attn_[m]->forward_first(r3, stage_tokens(3), ctx));
    }
    ScopeGuard gm(ctx, "mlp");
    r3 = apply_residual(r3, s3_mlp_[m]->forward(r3, ctx));
  }

  Pass1Result res;
  res.batch = batch;
  res.logits = head_logits(r3, batch, ctx);
  if (!cfg_.no_fb_lidiff) {
    res.stage3_input = stage3_in;
    res.stage3_output = r3;
  }
  return res;
}

Tensor Network::forward_pass2(const Pass1Result& cache, FwdCtx& ctx) const {
  LIDIFF_CHECK(!cfg_.no_fb_lidiff, "forward_pass2: model was built without feedback blocks");
  LIDIFF_CHECK(cache.stage3_input.defined() && cache.stage3_output.defined(),
               "forward_pass2: missing pass-1 cache");
  ctx.t_steps = cfg_.time_steps;
  ctx.pass = 2;
  ctx.stage = 3;
  ctx.tokens = stage_tokens(3);
  // The second propagation re-normalizes with batch statistics but must not
  // advance the EMA: it re-processes the same batch through shared layers.
  bool saved_update = ctx.update_bn;
  ctx.update_bn = false;

  Tensor r = cache.stage3_input;
  for (size_t m = 0; m < s3_attn_.size(); ++m) {
    ScopeGuard g(ctx, "stage3.block" + std::to_string(m));
    Tensor x_fb;
    {
      ScopeGuard gf(ctx, "attn");
      x_fb = s3_attn_[m]->compute_feedback(cache.stage3_output, ctx);
      r = apply_residual(r, s3_attn_[m]->forward_second(r, x_fb, stage_tokens(3), ctx));
    }
    ScopeGuard gm(ctx, "mlp");
    r = apply_residual(r, s3_mlp_[m]->forward(r, ctx));
  }
  Tensor logits = head_logits(r, cache.batch, ctx);
  ctx.update_bn = saved_update;
  ctx.pass = 1;
  return logits;
}

Tensor Network::infer_logits(const Tensor& input, FwdCtx& ctx) const {
  Pass1Result p1 = forward_pass1(input, ctx);
  if (cfg_.no_fb_lidiff) return p1.logits;
  return forward_pass2(p1, ctx);
}

std::vector<int> Network::predict(const Tensor& input, FwdCtx& ctx) const {
  Tensor logits = infer_logits(input, ctx);
  int64_t b = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(b));
  const float* p = logits.data();
  for (int64_t i = 0; i < b; ++i) {
    int best = 0;
    for (int64_t j = 1; j < c; ++j)
      if (p[i * c + j] > p[i * c + best]) best = static_cast<int>(j);
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

GradCheckReport model_grad_check(const Network& net, const Tensor& batch,
                                 const std::vector<int>& labels, float eps, int64_t samples,
                                 uint64_t seed) {
  LIDIFF_CHECK(eps > 0.0f && samples >= 1, "model_grad_check: bad eps or sample count");
  auto params = net.trainable_params();
  LIDIFF_CHECK(!params.empty(), "model_grad_check: no trainable parameters");

  auto loss_fn = [&]() -> Tensor {
    FwdCtx ctx;
    ctx.training = true;
    ctx.smooth = true;
    ctx.update_bn = false;  // finite differences must not mutate state
    auto p1 = net.forward_pass1(batch, ctx);
    if (net.config().no_fb_lidiff) return softmax_cross_entropy(p1.logits, labels);
    Tensor logits2 = net.forward_pass2(p1, ctx);
    return dual_loss(p1.logits, logits2, labels, net.config().alpha).total;
  };

  // Analytic gradients once.
  net.zero_grads();
  std::vector<std::vector<float>> tape_grads;
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  for (auto& [name, p] : params) {
    Tensor g = p.grad_tensor();
    LIDIFF_CHECK(all_finite(g), "model_grad_check: non-finite gradient in ", name);
    tape_grads.push_back(g.values());
  }

  // Global element sample.
  int64_t total_elems = 0;
  for (auto& [name, p] : params) total_elems += p.numel();
  Rng rng(seed ^ 0xBADC0FFEull);
  std::vector<int64_t> picks;
  for (int64_t k = 0; k < samples; ++k) picks.push_back(rng.randint(0, total_elems - 1));
  std::sort(picks.begin(), picks.end());
  picks.erase(std::unique(picks.begin(), picks.end()), picks.end());

  GradCheckReport report;
  size_t pi = 0;
  int64_t base = 0;
  for (int64_t flat : picks) {
    while (flat >= base + params[pi].second.numel()) {
      base += params[pi].second.numel();
      ++pi;
    }
    int64_t idx = flat - base;
    Tensor p = params[pi].second;
    float* w = p.data();
    float saved = w[idx];
    w[idx] = saved + eps;
    double f_plus = loss_fn().scalar_hi();
    w[idx] = saved - eps;
    double f_minus = loss_fn().scalar_hi();
    w[idx] = saved;
    LIDIFF_CHECK(std::isfinite(f_plus) && std::isfinite(f_minus),
                 "model_grad_check: non-finite loss probing ", params[pi].first);
    float fd = static_cast<float>((f_plus - f_minus) / (2.0 * static_cast<double>(eps)));
    float tg = tape_grads[pi][static_cast<size_t>(idx)];
    float denom = std::max({std::fabs(tg), std::fabs(fd), 1.0f});
    float rel = std::fabs(tg - fd) / denom;
    report.elements_checked += 1;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = params[pi].first;
      report.worst_index = idx;
      report.worst_tape = tg;
      report.worst_fd = fd;
    }
  }
  return report;
}

double eval_accuracy(const Network& net, const std::vector<Tensor>& batch_inputs,
                     const std::vector<std::vector<int>>& batch_labels, FwdCtx& ctx) {
  LIDIFF_CHECK(batch_inputs.size() == batch_labels.size(),
               "eval_accuracy: batch count mismatch");
  int64_t correct = 0, total = 0;
  for (size_t b = 0; b < batch_inputs.size(); ++b) {
    std::vector<int> pred = net.predict(batch_inputs[b], ctx);
    LIDIFF_CHECK(pred.size() == batch_labels[b].size(), "eval_accuracy: label count mismatch");
    for (size_t i = 0; i < pred.size(); ++i) {
      correct += pred[i] == batch_labels[b][i] ? 1 : 0;
      ++total;
    }
  }
  LIDIFF_CHECK(total > 0, "eval_accuracy: empty evaluation set");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace lidiff
