#include "lidiff/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lidiff/ltf.hpp"

namespace fs = std::filesystem;

namespace lidiff {

uint64_t tensor_payload_hash(const Tensor& t) {
  return fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(float));
}

namespace {
std::string shape_key(const Tensor& t) {
  std::string s;
  for (int i = 0; i < t.rank(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.dim(i));
  }
  return s;
}

std::vector<std::pair<std::string, Tensor>> all_tensors(const Network& net) {
  std::vector<std::pair<std::string, Tensor>> out = net.registry().params;
  for (const auto& b : net.registry().buffers) out.push_back(b);
  return out;
}
}  // namespace

void save_checkpoint(const std::string& dir, const Network& net, const RunConfig& rc) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "format=1\n";
  std::istringstream cfg(serialize_config(rc));
  std::string line;
  while (std::getline(cfg, line)) manifest << "config." << line << "\n";
  for (const auto& [name, t] : all_tensors(net)) {
    write_ltf((fs::path(dir) / (name + ".ltf")).string(), t);
    manifest << "tensor=" << name << ";shape=" << shape_key(t) << ";hash=" << std::hex
             << tensor_payload_hash(t) << std::dec << "\n";
  }
  std::ofstream mf(fs::path(dir) / "manifest.txt", std::ios::trunc);
  LIDIFF_CHECK(mf.good(), "cannot write checkpoint manifest in ", dir);
  mf << manifest.str();
  LIDIFF_CHECK(mf.good(), "manifest write failed in ", dir);
}

RunConfig read_checkpoint_config(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.txt");
  if (!mf.good()) throw UsageError("checkpoint manifest not found: " + dir + "/manifest.txt");
  std::string line, cfg_text;
  while (std::getline(mf, line)) {
    if (line.rfind("config.", 0) == 0) cfg_text += line.substr(7) + "\n";
  }
  LIDIFF_CHECK(!cfg_text.empty(), "checkpoint manifest in ", dir, " carries no config");
  return parse_config_text(cfg_text);
}

void load_checkpoint_into(const std::string& dir, Network& net) {
  std::ifstream mf(fs::path(dir) / "manifest.txt");
  if (!mf.good()) throw UsageError("checkpoint manifest not found: " + dir + "/manifest.txt");

  std::vector<std::pair<std::string, Tensor>> tensors = all_tensors(net);
  auto find = [&](const std::string& name) -> Tensor* {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  };

  std::string line;
  size_t loaded = 0;
  while (std::getline(mf, line)) {
    if (line.rfind("tensor=", 0) != 0) continue;
    size_t semi1 = line.find(';');
    size_t semi2 = line.find(';', semi1 + 1);
    LIDIFF_CHECK(semi1 != std::string::npos && semi2 != std::string::npos,
                 "malformed manifest line: ", line);
    std::string name = line.substr(7, semi1 - 7);
    std::string hash_hex = line.substr(semi2 + 6);
    Tensor* dst = find(name);
    LIDIFF_CHECK(dst != nullptr, "checkpoint tensor '", name,
                 "' has no destination in this model (config mismatch?)");
    Tensor loaded_t = read_ltf((fs::path(dir) / (name + ".ltf")).string());
    LIDIFF_CHECK(loaded_t.shape() == dst->shape(), "checkpoint tensor '", name, "' has shape ",
                 shape_str(loaded_t.shape()), ", model expects ", shape_str(dst->shape()));
    uint64_t expect = std::stoull(hash_hex, nullptr, 16);
    uint64_t got = tensor_payload_hash(loaded_t);
    LIDIFF_CHECK(got == expect, "checkpoint tensor '", name, "' failed its payload hash");
    std::copy(loaded_t.data(), loaded_t.data() + loaded_t.numel(), dst->data());
    ++loaded;
  }
  LIDIFF_CHECK(loaded == tensors.size(), "checkpoint in ", dir, " loaded ", loaded, " of ",
               tensors.size(), " model tensors");
}

}  // namespace lidiff
