#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lidiff/data.hpp"
#include "lidiff/model.hpp"

namespace lidiff {

/// Decoupled-weight-decay Adam with bias correction. Moments are kept per
/// parameter in registration order.
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor>> params, float lr, float beta1 = 0.9f,
        float beta2 = 0.999f, float eps = 1e-8f, float weight_decay = 0.0f);

  // Applies one update from the gradients currently held by the parameters.
  // Parameters with no accumulated gradient are treated as zero-gradient
  // (weight decay still applies). Non-finite gradients abort, naming the
  // parameter.
  void step();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  int64_t step_count() const { return t_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<float>> m_, v_;
  float lr_, beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

// Scales all parameter gradients so their global L2 norm is at most
// max_norm; returns the pre-clip norm.
double clip_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params,
                      double max_norm);

struct TrainRecipe {
  int64_t epochs = 30;
  int64_t batch_size = 32;
  float base_lr = 1e-3f;
  float weight_decay = 6e-2f;
  std::string schedule = "cosine";  // or "constant"
  int64_t warmup_epochs = 0;
  float alpha = 0.5f;
  uint64_t seed = 0;
  float grad_clip = 5.0f;
  bool augment = false;  // horizontal flip + crop-pad pair

  void validate() const;
};

// Cosine decay: base_lr * (1 + cos(pi * e / epochs)) / 2 after an optional
// linear warmup. epoch must lie in [0, epochs).
float cosine_lr(int64_t epoch, const TrainRecipe& recipe);
float schedule_lr(int64_t epoch, const TrainRecipe& recipe);

struct EpochMetrics {
  int64_t epoch = 0;
  float lr = 0.0f;
  double train_loss = 0.0;
  double loss1 = 0.0;
  double loss2 = 0.0;
  double eval_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double final_eval_acc = 0.0;
};

// Seeded shuffling, dual-loss backward, gradient clipping, AdamW, per-epoch
// evaluation. Deterministic under (recipe.seed, single thread). Aborts on a
// non-finite loss. When metrics_csv is non-empty the history is streamed
// there as "epoch,lr,train_loss,loss1,loss2,eval_acc".
TrainResult train_loop(Network& net, const Dataset& train, const Dataset& eval,
                       const TrainRecipe& recipe, const std::string& metrics_csv = "");

double evaluate(const Network& net, const Dataset& ds, int64_t batch_size = 64);

}  // namespace lidiff
