#pragma once

#include <string>
#include <vector>

#include "lidiff/model.hpp"
#include "lidiff/train.hpp"

namespace lidiff {

/// Everything a run needs: architecture, recipe and dataset selection.
/// Serialized as plain key=value lines ('#' comments allowed).
struct RunConfig {
  ModelConfig model;
  TrainRecipe recipe;
  std::string dataset = "blobs";  // blobs | bars | cifar10
  std::string data_path;          // cifar binary batches (comma separated)
  int64_t train_samples = 512;
  int64_t eval_samples = 256;

  void validate() const;
};

std::vector<std::string> config_keys();  // documented key list

void set_config_key(RunConfig& rc, const std::string& key, const std::string& value);
RunConfig parse_config_file(const std::string& path);
// overrides: "k=v[,k=v...]", applied on top of the file values
void apply_overrides(RunConfig& rc, const std::string& overrides);
std::string serialize_config(const RunConfig& rc);
RunConfig parse_config_text(const std::string& text);

}  // namespace lidiff
