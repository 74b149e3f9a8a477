#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lidiff/tensor.hpp"

namespace lidiff {

struct GradCheckReport {
  float max_rel_err = 0.0f;
  std::string worst_param;
  int64_t worst_index = -1;
  float worst_tape = 0.0f;
  float worst_fd = 0.0f;
  int64_t elements_checked = 0;

  bool pass(float tol) const { return max_rel_err < tol; }
};

// Compares tape gradients of the scalar computation f against central finite
// differences for every element of every listed parameter, or a seeded random
// subsample of max_per_param elements when a parameter is larger than that.
//
// f must be deterministic and re-evaluable; when it contains spiking layers
// the caller is expected to run them in smooth (surrogate-valued) mode so the
// finite differences probe the same function the tape differentiates.
//
// Error metric per element: |tape - fd| / max(|tape|, |fd|, 1). The unit floor
// makes the comparison absolute for vanishing gradients, where float32
// forward rounding dominates the quotient.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           float eps, float tol, int64_t max_per_param = -1,
                           uint64_t seed = 0);

}  // namespace lidiff
