#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lidiff/tensor.hpp"

namespace lidiff {

class Profiler;

/// Collects named attention-map tensors during a forward pass (values only,
/// detached). Used by the export-attn CLI path and by unit tests that need
/// to observe intermediate attention signals.
struct AttnRecorder {
  std::vector<std::pair<std::string, Tensor>> records;
  void add(const std::string& name, const Tensor& t) {
    records.emplace_back(name, t.clone_values());
  }
  const Tensor* find(const std::string& name) const {
    for (const auto& [k, v] : records)
      if (k == name) return &v;
    return nullptr;
  }
};

/// Per-forward execution context threaded through every layer.
struct FwdCtx {
  bool training = true;
  // Replace the Heaviside spike with its surrogate sigmoid in the forward
  // pass; turns the whole network into the smooth function that finite
  // differences can probe.
  bool smooth = false;
  // Batch-norm running statistics advance only when this is set (pass 1);
  // the second propagation re-normalizes without moving the EMA.
  bool update_bn = true;
  int pass = 1;
  int64_t t_steps = 1;
  int stage = 0;       // current stage tag for profiling
  int64_t tokens = 0;  // tokens per sample at the current stage
  bool strict_spikes = false;  // reject non-binary module inputs
  Profiler* profiler = nullptr;
  AttnRecorder* recorder = nullptr;
  std::string scope;  // name prefix for recorder and profiler entries
};

/// Temporarily extends ctx.scope; restores on destruction.
class ScopeGuard {
 public:
  ScopeGuard(FwdCtx& ctx, const std::string& suffix) : ctx_(ctx), saved_(ctx.scope) {
    ctx_.scope = saved_.empty() ? suffix : saved_ + "." + suffix;
  }
  ~ScopeGuard() { ctx_.scope = saved_; }

 private:
  FwdCtx& ctx_;
  std::string saved_;
};

}  // namespace lidiff
