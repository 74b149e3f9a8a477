#pragma once

#include <string>
#include <vector>

#include "lidiff/data.hpp"
#include "lidiff/model.hpp"

namespace lidiff {

struct AttackConfig {
  std::string kind = "fgsm";  // fgsm | pgd
  float epsilon = 0.0f;       // L-inf budget in input units
  float step_size = 0.0f;     // pgd step
  int64_t iterations = 1;
  bool random_start = false;
  uint64_t seed = 0;

  void validate() const;
};

// Gradient of the deployed loss (cross-entropy on the prediction-path logits)
// with respect to the input batch. Model parameters receive no gradient and
// are left untouched.
Tensor input_gradient(const Network& net, const Tensor& batch, const std::vector<int>& labels);

// x_adv = clip_[0,1](x + eps * sign(grad)); sign(0) := 0.
Tensor fgsm(const Network& net, const Tensor& batch, const std::vector<int>& labels,
            float eps);

// Iterated FGSM with projection onto the L-inf ball of radius eps around the
// clean input and onto [0,1] after every step.
Tensor pgd(const Network& net, const Tensor& batch, const std::vector<int>& labels,
           const AttackConfig& cfg);

struct AttackSweepRow {
  std::string kind;
  float epsilon = 0.0f;
  float step_size = 0.0f;
  int64_t iterations = 0;
  double clean_acc = 0.0;
  double adv_acc = 0.0;
};

// Clean vs adversarial accuracy over a dataset for each configuration.
std::vector<AttackSweepRow> attack_sweep(const Network& net, const Dataset& ds,
                                         const std::vector<AttackConfig>& configs,
                                         int64_t batch_size = 32);

void write_attack_csv(const std::string& path, const std::vector<AttackSweepRow>& rows);

}  // namespace lidiff
