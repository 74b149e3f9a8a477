#pragma once

#include <string>
#include <vector>

#include "lidiff/tensor.hpp"

namespace lidiff {

enum class LayerKind { ConvFirst, Conv, LinearLayer, AttentionFf, AttentionFb };

std::string layer_kind_name(LayerKind k);

/// Wiring of one layer, sufficient to derive its multiply-accumulate count.
struct LayerDescriptor {
  LayerKind kind = LayerKind::Conv;
  // conv kinds
  int64_t kernel = 0, c_in = 0, c_out = 0, h_out = 0, w_out = 0;
  // linear / attention kinds
  int64_t tokens = 0, d_in = 0, d_out = 0;
  int64_t heads = 1;
};

// Closed forms, per sample and per time step:
//   conv / conv-first:  K^2 * C_in * C_out * H_out * W_out
//   linear:             N * D_in * D_out
//   attention-ff:       2*N*D^2 (Q,K projections) + N*D (token mask)
//   attention-fb:       4*N*D^2 (Q,K,V,out projections) + 2*N*D*(D/heads)
//                       (the two spike matmuls of the linear kernel)
double count_flops(const LayerDescriptor& d);

// Full-precision MAC work of the feedback path of one FB attention block:
// two prompt dot products, two clamps, and the 1->D alignment transform.
double feedback_mac_flops(int64_t tokens, int64_t dim);

/// One instrumented layer observation: static FLOPs plus the measured input
/// spike activity. sops = firing_rate * T * flops.
struct LayerProfile {
  std::string id;
  LayerKind kind = LayerKind::Conv;
  int stage = 0;
  int pass = 1;
  double flops = 0.0;      // spike-gated (AC-countable) MACs per step
  double mac_flops = 0.0;  // full-precision MACs (feedback path)
  double spike_sum = 0.0;  // nonzero input elements seen
  double spike_count = 0.0;

  double firing_rate() const { return spike_count > 0.0 ? spike_sum / spike_count : 0.0; }
  double sops(int64_t t_steps) const {
    return firing_rate() * static_cast<double>(t_steps) * flops;
  }
};

/// Accumulates layer observations during instrumented forward passes.
class Profiler {
 public:
  void record(const std::string& id, LayerKind kind, int stage, int pass, double flops,
              double mac_flops, const Tensor& input);
  const std::vector<LayerProfile>& layers() const { return layers_; }
  double stage_flops(int stage, int pass) const;
  void clear() { layers_.clear(); }

 private:
  std::vector<LayerProfile> layers_;
};

constexpr double kEnergyMacPj = 4.6;
constexpr double kEnergyAcPj = 0.9;

struct EnergyReport {
  std::vector<LayerProfile> layers;
  int64_t t_steps = 1;
  double e_mac_pj = kEnergyMacPj;
  double e_ac_pj = kEnergyAcPj;
  double total_sops = 0.0;
  double first_conv_flops = 0.0;
  double total_mac_flops = 0.0;  // first conv + feedback work
  double snn_energy_mj = 0.0;
  double ann_energy_mj = 0.0;  // same wiring at full precision, single pass
  double pass1_energy_mj = 0.0;
  double pass2_energy_mj = 0.0;

  double layer_energy_pj(const LayerProfile& p) const;
};

// Spiking total: E_AC * sum of SOPs over spike-driven layers plus E_MAC for
// the first convolution (which sees the raw image) and any full-precision
// feedback work. Requires exactly the first-conv layer to carry kind
// ConvFirst. The ANN figure prices every pass-1 layer at E_MAC with no
// spike gating and no time factor.
EnergyReport estimate_energy(const std::vector<LayerProfile>& profiles, int64_t t_steps,
                             double e_mac_pj = kEnergyMacPj, double e_ac_pj = kEnergyAcPj);

std::string energy_table(const EnergyReport& r, const std::string& unit = "mJ");
void write_energy_csv(const std::string& path, const EnergyReport& r);

double energy_unit_scale(const std::string& unit);  // pJ -> chosen unit

}  // namespace lidiff
