#include "lidiff/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lidiff {

void AttackConfig::validate() const {
  LIDIFF_CHECK(kind == "fgsm" || kind == "pgd", "attack: unknown kind '", kind, "'");
  LIDIFF_CHECK(epsilon >= 0.0f, "attack: epsilon must be >= 0");
  if (kind == "pgd") {
    LIDIFF_CHECK(step_size > 0.0f || epsilon == 0.0f, "attack: pgd needs step_size > 0");
    LIDIFF_CHECK(iterations >= 1, "attack: pgd needs iterations >= 1");
  }
}

Tensor input_gradient(const Network& net, const Tensor& batch, const std::vector<int>& labels) {
  Tensor x = batch.clone_values();
  x.set_requires_grad(true);
  GradTape tape;
  {
    GradTape::Scope scope(tape);
    ParamGradGuard freeze(false);  // input gradients only
    FwdCtx ctx;
    ctx.training = false;
    ctx.update_bn = false;
    Tensor logits = net.infer_logits(x, ctx);
    Tensor loss = softmax_cross_entropy(logits, labels);
    tape.backward(loss);
  }
  Tensor g = x.grad_tensor();
  LIDIFF_CHECK(all_finite(g), "attack: non-finite input gradient");
  return g;
}

namespace {
inline float sign0(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

Tensor perturb_and_project(const Tensor& x_curr, const Tensor& grad, const Tensor& x_clean,
                           float step, float eps) {
  Tensor out = Tensor::zeros(x_curr.shape());
  const float* xc = x_curr.data();
  const float* g = grad.data();
  const float* x0 = x_clean.data();
  float* po = out.data();
  int64_t n = x_curr.numel();
  for (int64_t i = 0; i < n; ++i) {
    float v = xc[i] + step * sign0(g[i]);
    v = std::min(std::max(v, x0[i] - eps), x0[i] + eps);  // L-inf ball
    v = std::min(std::max(v, 0.0f), 1.0f);                // valid input box
    po[i] = v;
  }
  return out;
}
}  // namespace

Tensor fgsm(const Network& net, const Tensor& batch, const std::vector<int>& labels,
            float eps) {
  LIDIFF_CHECK(eps >= 0.0f, "fgsm: epsilon must be >= 0");
  Tensor g = input_gradient(net, batch, labels);
  return perturb_and_project(batch, g, batch, eps, eps);
}

Tensor pgd(const Network& net, const Tensor& batch, const std::vector<int>& labels,
           const AttackConfig& cfg) {
  cfg.validate();
  Tensor x = batch.clone_values();
  if (cfg.random_start && cfg.epsilon > 0.0f) {
    Rng rng(cfg.seed);
    float* p = x.data();
    const float* x0 = batch.data();
    for (int64_t i = 0; i < x.numel(); ++i) {
      float v = x0[i] + rng.uniform(-cfg.epsilon, cfg.epsilon);
      p[i] = std::min(std::max(v, 0.0f), 1.0f);
    }
  }
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    Tensor g = input_gradient(net, x, labels);
    x = perturb_and_project(x, g, batch, cfg.step_size, cfg.epsilon);
  }
  return x;
}

std::vector<AttackSweepRow> attack_sweep(const Network& net, const Dataset& ds,
                                         const std::vector<AttackConfig>& configs,
                                         int64_t batch_size) {
  LIDIFF_CHECK(!ds.inputs.empty(), "attack_sweep: empty dataset");
  std::vector<int64_t> order(ds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  int64_t t_steps = net.config().time_steps;

  std::vector<AttackSweepRow> rows;
  for (const AttackConfig& cfg : configs) {
    cfg.validate();
    int64_t clean_ok = 0, adv_ok = 0, total = 0;
    for (size_t first = 0; first < ds.size(); first += static_cast<size_t>(batch_size)) {
      size_t count = std::min(static_cast<size_t>(batch_size), ds.size() - first);
      Tensor batch = make_batch(ds, order, first, count, t_steps);
      std::vector<int> labels = batch_labels(ds, order, first, count);
      FwdCtx ctx;
      ctx.training = false;
      ctx.update_bn = false;
      std::vector<int> clean_pred = net.predict(batch, ctx);
      Tensor adv = cfg.kind == "fgsm" ? fgsm(net, batch, labels, cfg.epsilon)
                                      : pgd(net, batch, labels, cfg);
      std::vector<int> adv_pred = net.predict(adv, ctx);
      for (size_t i = 0; i < count; ++i) {
        clean_ok += clean_pred[i] == labels[i] ? 1 : 0;
        adv_ok += adv_pred[i] == labels[i] ? 1 : 0;
        ++total;
      }
    }
    AttackSweepRow row;
    row.kind = cfg.kind;
    row.epsilon = cfg.epsilon;
    row.step_size = cfg.step_size;
    row.iterations = cfg.kind == "fgsm" ? 1 : cfg.iterations;
    row.clean_acc = static_cast<double>(clean_ok) / static_cast<double>(total);
    row.adv_acc = static_cast<double>(adv_ok) / static_cast<double>(total);
    rows.push_back(row);
  }
  return rows;
}

void write_attack_csv(const std::string& path, const std::vector<AttackSweepRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  LIDIFF_CHECK(f.good(), "cannot open ", path, " for writing");
  f << "kind,epsilon,step_size,iterations,clean_acc,adv_acc\n";
  for (const auto& r : rows)
    f << r.kind << "," << r.epsilon << "," << r.step_size << "," << r.iterations << ","
      << r.clean_acc << "," << r.adv_acc << "\n";
  LIDIFF_CHECK(f.good(), "write failed for ", path);
}

}  // namespace lidiff
