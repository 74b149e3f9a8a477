#include "lidiff/energy.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace lidiff {

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::ConvFirst: return "conv-first";
    case LayerKind::Conv: return "conv";
    case LayerKind::LinearLayer: return "linear";
    case LayerKind::AttentionFf: return "attention-ff";
    case LayerKind::AttentionFb: return "attention-fb";
  }
  throw Error("unknown layer kind");
}

double count_flops(const LayerDescriptor& d) {
  switch (d.kind) {
    case LayerKind::ConvFirst:
    case LayerKind::Conv: {
      LIDIFF_CHECK(d.kernel >= 0 && d.c_in >= 0 && d.c_out >= 0 && d.h_out >= 0 && d.w_out >= 0,
                   "count_flops: negative conv dimension");
      return static_cast<double>(d.kernel) * d.kernel * d.c_in * d.c_out * d.h_out * d.w_out;
    }
    case LayerKind::LinearLayer: {
      LIDIFF_CHECK(d.tokens >= 0 && d.d_in >= 0 && d.d_out >= 0,
                   "count_flops: negative linear dimension");
      return static_cast<double>(d.tokens) * d.d_in * d.d_out;
    }
    case LayerKind::AttentionFf: {
      double n = static_cast<double>(d.tokens), dim = static_cast<double>(d.d_in);
      return 2.0 * n * dim * dim + n * dim;
    }
    case LayerKind::AttentionFb: {
      LIDIFF_CHECK(d.heads >= 1 && d.d_in % d.heads == 0,
                   "count_flops: attention dim not divisible by heads");
      double n = static_cast<double>(d.tokens), dim = static_cast<double>(d.d_in);
      double dh = dim / static_cast<double>(d.heads);
      return 4.0 * n * dim * dim + 2.0 * n * dim * dh;
    }
  }
  throw Error("count_flops: unknown layer kind");
}

double feedback_mac_flops(int64_t tokens, int64_t dim) {
  double n = static_cast<double>(tokens), d = static_cast<double>(dim);
  return 2.0 * n * d + 2.0 * n + n * d;
}

void Profiler::record(const std::string& id, LayerKind kind, int stage, int pass, double flops,
                      double mac_flops, const Tensor& input) {
  LayerProfile p;
  p.id = id;
  p.kind = kind;
  p.stage = stage;
  p.pass = pass;
  p.flops = flops;
  p.mac_flops = mac_flops;
  const float* px = input.data();
  int64_t n = input.numel();
  int64_t nz = 0;
  for (int64_t i = 0; i < n; ++i)
    if (px[i] != 0.0f) ++nz;
  p.spike_sum = static_cast<double>(nz);
  p.spike_count = static_cast<double>(n);
  layers_.push_back(std::move(p));
}

double Profiler::stage_flops(int stage, int pass) const {
  double total = 0.0;
  for (const auto& p : layers_)
    if (p.stage == stage && p.pass == pass) total += p.flops + p.mac_flops;
  return total;
}

double EnergyReport::layer_energy_pj(const LayerProfile& p) const {
  if (p.kind == LayerKind::ConvFirst) return e_mac_pj * p.flops;
  return e_ac_pj * p.sops(t_steps) + e_mac_pj * p.mac_flops;
}

EnergyReport estimate_energy(const std::vector<LayerProfile>& profiles, int64_t t_steps,
                             double e_mac_pj, double e_ac_pj) {
  EnergyReport r;
  r.layers = profiles;
  r.t_steps = t_steps;
  r.e_mac_pj = e_mac_pj;
  r.e_ac_pj = e_ac_pj;

  int first_conv_seen = 0;
  double snn_pj = 0.0, pass1_pj = 0.0, pass2_pj = 0.0, ann_flops = 0.0;
  for (const auto& p : r.layers) {
    double e = 0.0;
    if (p.kind == LayerKind::ConvFirst) {
      ++first_conv_seen;
      r.first_conv_flops = p.flops;
      r.total_mac_flops += p.flops;
      e = e_mac_pj * p.flops;
    } else {
      r.total_sops += p.sops(t_steps);
      r.total_mac_flops += p.mac_flops;
      e = e_ac_pj * p.sops(t_steps) + e_mac_pj * p.mac_flops;
    }
    snn_pj += e;
    if (p.pass == 1) {
      pass1_pj += e;
      ann_flops += p.flops + p.mac_flops;
    } else {
      pass2_pj += e;
    }
  }
  LIDIFF_CHECK(first_conv_seen == 1, "estimate_energy: expected exactly one conv-first layer, saw ",
               first_conv_seen);
  constexpr double pj_to_mj = 1e-9;
  r.snn_energy_mj = snn_pj * pj_to_mj;
  r.pass1_energy_mj = pass1_pj * pj_to_mj;
  r.pass2_energy_mj = pass2_pj * pj_to_mj;
  r.ann_energy_mj = e_mac_pj * ann_flops * pj_to_mj;
  return r;
}

double energy_unit_scale(const std::string& unit) {
  if (unit == "pJ") return 1.0;
  if (unit == "uJ") return 1e-6;
  if (unit == "mJ") return 1e-9;
  throw UsageError("unknown energy unit '" + unit + "', expected pJ, uJ or mJ");
}

std::string energy_table(const EnergyReport& r, const std::string& unit) {
  double s = energy_unit_scale(unit);
  std::ostringstream os;
  os << std::left << std::setw(34) << "layer" << std::setw(14) << "kind" << std::setw(7)
     << "stage" << std::setw(6) << "pass" << std::right << std::setw(14) << "flops"
     << std::setw(12) << "rate" << std::setw(16) << "sops" << std::setw(16)
     << ("energy/" + unit) << "\n";
  for (const auto& p : r.layers) {
    os << std::left << std::setw(34) << p.id << std::setw(14) << layer_kind_name(p.kind)
       << std::setw(7) << p.stage << std::setw(6) << p.pass << std::right << std::fixed
       << std::setw(14) << std::setprecision(0) << p.flops << std::setw(12)
       << std::setprecision(4) << p.firing_rate() << std::setw(16) << std::setprecision(0)
       << p.sops(r.t_steps) << std::setw(16) << std::setprecision(6)
       << r.layer_energy_pj(p) * s << "\n";
  }
  os << std::setprecision(6);
  os << "total sops: " << r.total_sops << "\n";
  os << "snn energy: " << r.snn_energy_mj * 1e9 * s << " " << unit
     << " (pass1 " << r.pass1_energy_mj * 1e9 * s << ", pass2 " << r.pass2_energy_mj * 1e9 * s
     << ")\n";
  os << "ann energy: " << r.ann_energy_mj * 1e9 * s << " " << unit << "\n";
  return os.str();
}

void write_energy_csv(const std::string& path, const EnergyReport& r) {
  std::ofstream f(path, std::ios::trunc);
  LIDIFF_CHECK(f.good(), "cannot open ", path, " for writing");
  f << "layer,kind,stage,pass,flops,mac_flops,firing_rate,sops,energy_pj\n";
  f << std::setprecision(12);
  for (const auto& p : r.layers) {
    f << p.id << "," << layer_kind_name(p.kind) << "," << p.stage << "," << p.pass << ","
      << p.flops << "," << p.mac_flops << "," << p.firing_rate() << "," << p.sops(r.t_steps)
      << "," << r.layer_energy_pj(p) << "\n";
  }
  f << "total,,,," << "" << ",," << "," << r.total_sops << ","
    << r.snn_energy_mj * 1e9 << "\n";
  LIDIFF_CHECK(f.good(), "write failed for ", path);
}

}  // namespace lidiff
