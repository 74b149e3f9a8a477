#include "lidiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lidiff {

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           float eps, float tol, int64_t max_per_param, uint64_t seed) {
  LIDIFF_CHECK(eps > 0.0f, "grad_check: eps must be positive");
  (void)tol;

  for (const auto& [name, p] : params) {
    LIDIFF_CHECK(p.requires_grad(), "grad_check: parameter ", name, " does not require grad");
    const_cast<Tensor&>(p).zero_grad();
  }

  // One taped evaluation for the analytic gradients.
  std::vector<std::vector<float>> tape_grads;
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    Tensor loss = f();
    LIDIFF_CHECK(loss.numel() == 1, "grad_check: f must produce a scalar");
    LIDIFF_CHECK(all_finite(loss), "grad_check: non-finite loss value");
    tape.backward(loss);
  }
  for (const auto& [name, p] : params) {
    Tensor g = p.grad_tensor();
    LIDIFF_CHECK(all_finite(g), "grad_check: non-finite tape gradient in parameter ", name);
    tape_grads.push_back(g.values());
  }

  auto eval = [&]() -> double {
    Tensor v = f();
    LIDIFF_CHECK(v.numel() == 1, "grad_check: f must produce a scalar");
    double hv = v.scalar_hi();
    LIDIFF_CHECK(std::isfinite(hv), "grad_check: non-finite value during finite differences");
    return hv;
  };

  GradCheckReport report;
  Rng rng(seed ^ 0xA5A5A5A5ull);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto& name = params[pi].first;
    Tensor p = params[pi].second;
    float* w = p.data();
    int64_t n = p.numel();

    std::vector<int64_t> picks;
    if (max_per_param > 0 && n > max_per_param) {
      for (int64_t k = 0; k < max_per_param; ++k) picks.push_back(rng.randint(0, n - 1));
      std::sort(picks.begin(), picks.end());
      picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    } else {
      picks.resize(static_cast<size_t>(n));
      for (int64_t k = 0; k < n; ++k) picks[static_cast<size_t>(k)] = k;
    }

    for (int64_t idx : picks) {
      float saved = w[idx];
      w[idx] = saved + eps;
      double f_plus = eval();
      w[idx] = saved - eps;
      double f_minus = eval();
      w[idx] = saved;

      float fd = static_cast<float>((f_plus - f_minus) / (2.0 * static_cast<double>(eps)));
      float tg = tape_grads[pi][static_cast<size_t>(idx)];
      LIDIFF_CHECK(std::isfinite(fd), "grad_check: non-finite finite-difference in parameter ",
                   name, " at element ", idx);
      float denom = std::max({std::fabs(tg), std::fabs(fd), 1.0f});
      float rel = std::fabs(tg - fd) / denom;
      report.elements_checked += 1;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = idx;
        report.worst_tape = tg;
        report.worst_fd = fd;
      }
    }
  }
  return report;
}

}  // namespace lidiff
