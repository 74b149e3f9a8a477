#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lidiff/tensor.hpp"

namespace lidiff {

/// Labeled sample collection; every input shares one [C, H, W] shape with
/// values in [0, 1].
struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  int64_t class_count = 0;
  int64_t channels = 0, height = 0, width = 0;
  std::string split;

  size_t size() const { return inputs.size(); }
  void validate() const;
};

struct Event {
  uint32_t t_us = 0;
  uint16_t x = 0, y = 0;
  uint8_t polarity = 0;  // 0 or 1
};

using EventStream = std::vector<Event>;

// CIFAR-10 binary batches: 3073-byte records (1 label byte + 3*32*32 pixels).
// Pixels scale to [0,1]. Truncated records and labels >= 10 are errors.
Dataset read_cifar10_batches(const std::vector<std::string>& paths);

// Little-endian event records: u32 t_us, u16 x, u16 y, u8 polarity.
EventStream read_event_stream(const std::string& path);
void write_event_stream(const std::string& path, const EventStream& events);

// Splits the stream's time span into T equal windows; per window and polarity
// accumulates per-pixel event counts, binarized unless counts=true. An empty
// stream yields an all-zero tensor.
Tensor rasterize_events(const EventStream& stream, int64_t t_steps, int64_t h, int64_t w,
                        bool counts = false);

// Synthetic datasets. "blobs": 16x16 single-channel, class 0 carries a bright
// 4x4 square top-left, class 1 bottom-right, additive Gaussian noise sigma
// 0.1, clamped to [0,1]. "bars": horizontal vs vertical bright bar. Balanced
// and deterministic under seed.
Dataset make_toy_dataset(const std::string& kind, int64_t n, uint64_t seed);

// Nearest-centroid oracle on flattened pixels; the sanity classifier that
// shows a toy dataset is separable.
double centroid_classifier_accuracy(const Dataset& train, const Dataset& eval);

// Stacks samples [first, first+count) into a time-major [T*count, C, H, W]
// batch, repeating static frames across the T steps (direct coding).
Tensor make_batch(const Dataset& ds, const std::vector<int64_t>& order, size_t first,
                  size_t count, int64_t t_steps);
std::vector<int> batch_labels(const Dataset& ds, const std::vector<int64_t>& order,
                              size_t first, size_t count);

}  // namespace lidiff
