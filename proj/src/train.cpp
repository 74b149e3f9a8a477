#include "lidiff/train.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace lidiff {

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, float lr, float beta1,
             float beta2, float eps, float weight_decay)
    : params_(std::move(params)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
  }
}

void AdamW::step() {
  t_ += 1;
  float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor p = params_[k].second;
    float* w = p.data();
    const std::vector<float>* g = p.grad_if_any();
    auto& m = m_[k];
    auto& v = v_[k];
    int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      float gi = g ? (*g)[static_cast<size_t>(i)] : 0.0f;
      LIDIFF_CHECK(std::isfinite(gi), "adamw: non-finite gradient in parameter ",
                   params_[k].first, " at element ", i);
      m[static_cast<size_t>(i)] = beta1_ * m[static_cast<size_t>(i)] + (1.0f - beta1_) * gi;
      v[static_cast<size_t>(i)] = beta2_ * v[static_cast<size_t>(i)] + (1.0f - beta2_) * gi * gi;
      float mhat = m[static_cast<size_t>(i)] / bc1;
      float vhat = v[static_cast<size_t>(i)] / bc2;
      w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
    }
  }
}

double clip_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params,
                      double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    const std::vector<float>* g = p.grad_if_any();
    if (!g) continue;
    for (float v : *g) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    float s = static_cast<float>(max_norm / norm);
    for (const auto& [name, p] : params) {
      auto* node = p.node();
      for (float& v : node->grad) v *= s;
    }
  }
  return norm;
}

void TrainRecipe::validate() const {
  LIDIFF_CHECK(epochs >= 1, "recipe: epochs must be >= 1");
  LIDIFF_CHECK(batch_size >= 1, "recipe: batch_size must be >= 1");
  LIDIFF_CHECK(alpha >= 0.0f && alpha <= 1.0f, "recipe: alpha must lie in [0,1]");
  LIDIFF_CHECK(warmup_epochs >= 0 && warmup_epochs < epochs,
               "recipe: warmup must be shorter than the run");
  LIDIFF_CHECK(schedule == "cosine" || schedule == "constant", "recipe: unknown schedule '",
               schedule, "'");
}

float cosine_lr(int64_t epoch, const TrainRecipe& recipe) {
  LIDIFF_CHECK(epoch >= 0 && epoch < recipe.epochs, "cosine_lr: epoch ", epoch,
               " outside [0,", recipe.epochs, ")");
  if (epoch < recipe.warmup_epochs)
    return recipe.base_lr * static_cast<float>(epoch + 1) /
           static_cast<float>(recipe.warmup_epochs);
  int64_t e = epoch - recipe.warmup_epochs;
  int64_t span = recipe.epochs - recipe.warmup_epochs;
  return recipe.base_lr * 0.5f *
         (1.0f + std::cos(std::numbers::pi_v<float> * static_cast<float>(e) /
                          static_cast<float>(span)));
}

float schedule_lr(int64_t epoch, const TrainRecipe& recipe) {
  if (recipe.schedule == "constant") return recipe.base_lr;
  return cosine_lr(epoch, recipe);
}

namespace {

// Horizontal flip plus zero-pad-and-crop jitter; the only augmentation pair
// provided, off by default.
Tensor augment_sample(const Tensor& img, Rng& rng) {
  int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out = img.clone_values();
  if (rng.uniform(0.0f, 1.0f) < 0.5f) {
    float* p = out.data();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t r = 0; r < h; ++r)
        for (int64_t col = 0; col < w / 2; ++col)
          std::swap(p[(ch * h + r) * w + col], p[(ch * h + r) * w + (w - 1 - col)]);
  }
  int64_t dy = rng.randint(-2, 2), dx = rng.randint(-2, 2);
  if (dy == 0 && dx == 0) return out;
  Tensor shifted = Tensor::zeros(img.shape());
  const float* p = out.data();
  float* q = shifted.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t col = 0; col < w; ++col) {
        int64_t sr = r - dy, sc = col - dx;
        if (sr < 0 || sr >= h || sc < 0 || sc >= w) continue;
        q[(ch * h + r) * w + col] = p[(ch * h + sr) * w + sc];
      }
  return shifted;
}

}  // namespace

double evaluate(const Network& net, const Dataset& ds, int64_t batch_size) {
  LIDIFF_CHECK(!ds.inputs.empty(), "evaluate: empty dataset");
  FwdCtx ctx;
  ctx.training = false;
  ctx.update_bn = false;
  std::vector<int64_t> order(ds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  int64_t correct = 0;
  for (size_t first = 0; first < ds.size(); first += static_cast<size_t>(batch_size)) {
    size_t count = std::min(static_cast<size_t>(batch_size), ds.size() - first);
    Tensor batch = make_batch(ds, order, first, count, net.config().time_steps);
    std::vector<int> labels = batch_labels(ds, order, first, count);
    std::vector<int> pred = net.predict(batch, ctx);
    for (size_t i = 0; i < count; ++i) correct += pred[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

TrainResult train_loop(Network& net, const Dataset& train, const Dataset& eval,
                       const TrainRecipe& recipe, const std::string& metrics_csv) {
  recipe.validate();
  LIDIFF_CHECK(!train.inputs.empty(), "train_loop: empty training dataset");
  const ModelConfig& cfg = net.config();
  bool fb = !cfg.no_fb_lidiff;

  auto params = net.trainable_params();
  AdamW opt(params, schedule_lr(0, recipe), 0.9f, 0.999f, 1e-8f, recipe.weight_decay);

  std::ofstream csv;
  if (!metrics_csv.empty()) {
    csv.open(metrics_csv, std::ios::trunc);
    LIDIFF_CHECK(csv.good(), "cannot open ", metrics_csv, " for writing");
    csv << "epoch,lr,train_loss,loss1,loss2,eval_acc\n";
  }

  TrainResult result;
  std::vector<int64_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

  for (int64_t epoch = 0; epoch < recipe.epochs; ++epoch) {
    float lr = schedule_lr(epoch, recipe);
    opt.set_lr(lr);
    Rng epoch_rng(recipe.seed ^ (0x9E3779B97F4A7C15ull * static_cast<uint64_t>(epoch + 1)));
    epoch_rng.shuffle(order);

    double loss_sum = 0.0, loss1_sum = 0.0, loss2_sum = 0.0;
    int64_t batches = 0;
    for (size_t first = 0; first < train.size();
         first += static_cast<size_t>(recipe.batch_size)) {
      size_t count = std::min(static_cast<size_t>(recipe.batch_size), train.size() - first);
      if (count < 2) continue;  // batch statistics need at least two rows
      Tensor batch;
      if (recipe.augment) {
        Dataset aug;
        aug.class_count = train.class_count;
        aug.channels = train.channels;
        aug.height = train.height;
        aug.width = train.width;
        std::vector<int64_t> ids;
        for (size_t b = 0; b < count; ++b) {
          aug.inputs.push_back(augment_sample(train.inputs[static_cast<size_t>(order[first + b])],
                                              epoch_rng));
          aug.labels.push_back(train.labels[static_cast<size_t>(order[first + b])]);
          ids.push_back(static_cast<int64_t>(b));
        }
        batch = make_batch(aug, ids, 0, count, cfg.time_steps);
      } else {
        batch = make_batch(train, order, first, count, cfg.time_steps);
      }
      std::vector<int> labels = batch_labels(train, order, first, count);

      net.zero_grads();
      GradTape tape;
      double total, l1v, l2v;
      {
        GradTape::Scope scope(tape);
        FwdCtx ctx;
        ctx.training = true;
        auto p1 = net.forward_pass1(batch, ctx);
        Tensor loss;
        if (fb) {
          Tensor logits2 = net.forward_pass2(p1, ctx);
          DualLossResult dl = dual_loss(p1.logits, logits2, labels, recipe.alpha);
          loss = dl.total;
          l1v = dl.loss1.scalar_hi();
          l2v = dl.loss2.scalar_hi();
        } else {
          loss = softmax_cross_entropy(p1.logits, labels);
          l1v = loss.scalar_hi();
          l2v = l1v;
        }
        // Metric totals mix the high-precision terms; the tape still
        // backpropagates the float32 loss tensor.
        total = static_cast<double>(recipe.alpha) * l1v +
                (1.0 - static_cast<double>(recipe.alpha)) * l2v;
        LIDIFF_CHECK(std::isfinite(total), "train_loop: diverged (non-finite loss) at epoch ",
                     epoch, " batch ", batches);
        tape.backward(loss);
      }
      clip_grad_norm(params, recipe.grad_clip);
      opt.step();
      loss_sum += total;
      loss1_sum += l1v;
      loss2_sum += l2v;
      ++batches;
    }
    LIDIFF_CHECK(batches > 0, "train_loop: no usable batches (batch_size vs dataset size)");

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(batches);
    m.loss1 = loss1_sum / static_cast<double>(batches);
    m.loss2 = loss2_sum / static_cast<double>(batches);
    m.eval_acc = eval.inputs.empty() ? 0.0 : evaluate(net, eval);
    result.history.push_back(m);
    if (csv.is_open()) {
      csv << m.epoch << "," << m.lr << "," << m.train_loss << "," << m.loss1 << "," << m.loss2
          << "," << m.eval_acc << "\n";
      csv.flush();
    }
  }
  result.final_eval_acc = result.history.empty() ? 0.0 : result.history.back().eval_acc;
  return result;
}

}  // namespace lidiff
