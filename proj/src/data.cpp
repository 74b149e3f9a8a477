#include "lidiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lidiff {

void Dataset::validate() const {
  LIDIFF_CHECK(inputs.size() == labels.size(), "dataset: ", inputs.size(), " inputs vs ",
               labels.size(), " labels");
  for (size_t i = 0; i < inputs.size(); ++i) {
    LIDIFF_CHECK(labels[i] >= 0 && labels[i] < class_count, "dataset: label ", labels[i],
                 " out of range at sample ", i);
    const Tensor& t = inputs[i];
    LIDIFF_CHECK(t.rank() == 3 && t.dim(0) == channels && t.dim(1) == height &&
                     t.dim(2) == width,
                 "dataset: sample ", i, " has shape ", shape_str(t.shape()));
  }
}

Dataset read_cifar10_batches(const std::vector<std::string>& paths) {
  constexpr int64_t kRecord = 3073;  // 1 label + 3*32*32
  constexpr int64_t kPixels = 3 * 32 * 32;
  Dataset ds;
  ds.class_count = 10;
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  for (const auto& path : paths) {
    std::ifstream f(path, std::ios::binary);
    LIDIFF_CHECK(f.good(), "cannot open ", path);
    std::vector<unsigned char> record(static_cast<size_t>(kRecord));
    int64_t offset = 0;
    while (true) {
      f.read(reinterpret_cast<char*>(record.data()), kRecord);
      std::streamsize got = f.gcount();
      if (got == 0) break;
      LIDIFF_CHECK(got == kRecord, path, ": truncated record at byte offset ", offset,
                   " (got ", got, " of ", kRecord, " bytes)");
      int label = record[0];
      LIDIFF_CHECK(label < 10, path, ": label byte ", label, " >= 10 at byte offset ", offset);
      std::vector<float> pix(static_cast<size_t>(kPixels));
      for (int64_t i = 0; i < kPixels; ++i)
        pix[static_cast<size_t>(i)] = static_cast<float>(record[static_cast<size_t>(1 + i)]) / 255.0f;
      ds.inputs.push_back(Tensor::from({3, 32, 32}, std::move(pix)));
      ds.labels.push_back(label);
      offset += kRecord;
    }
  }
  ds.validate();
  return ds;
}

EventStream read_event_stream(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  LIDIFF_CHECK(f.good(), "cannot open ", path);
  EventStream out;
  while (true) {
    unsigned char rec[9];
    f.read(reinterpret_cast<char*>(rec), 9);
    std::streamsize got = f.gcount();
    if (got == 0) break;
    LIDIFF_CHECK(got == 9, path, ": truncated event record");
    Event e;
    e.t_us = static_cast<uint32_t>(rec[0]) | (static_cast<uint32_t>(rec[1]) << 8) |
             (static_cast<uint32_t>(rec[2]) << 16) | (static_cast<uint32_t>(rec[3]) << 24);
    e.x = static_cast<uint16_t>(rec[4] | (rec[5] << 8));
    e.y = static_cast<uint16_t>(rec[6] | (rec[7] << 8));
    e.polarity = rec[8];
    LIDIFF_CHECK(e.polarity <= 1, path, ": polarity byte ", int(e.polarity));
    LIDIFF_CHECK(out.empty() || e.t_us >= out.back().t_us, path,
                 ": timestamps must be non-decreasing");
    out.push_back(e);
  }
  return out;
}

void write_event_stream(const std::string& path, const EventStream& events) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  LIDIFF_CHECK(f.good(), "cannot open ", path, " for writing");
  for (const Event& e : events) {
    unsigned char rec[9];
    rec[0] = static_cast<unsigned char>(e.t_us & 0xff);
    rec[1] = static_cast<unsigned char>((e.t_us >> 8) & 0xff);
    rec[2] = static_cast<unsigned char>((e.t_us >> 16) & 0xff);
    rec[3] = static_cast<unsigned char>((e.t_us >> 24) & 0xff);
    rec[4] = static_cast<unsigned char>(e.x & 0xff);
    rec[5] = static_cast<unsigned char>((e.x >> 8) & 0xff);
    rec[6] = static_cast<unsigned char>(e.y & 0xff);
    rec[7] = static_cast<unsigned char>((e.y >> 8) & 0xff);
    rec[8] = e.polarity;
    f.write(reinterpret_cast<const char*>(rec), 9);
  }
  LIDIFF_CHECK(f.good(), "write failed for ", path);
}

Tensor rasterize_events(const EventStream& stream, int64_t t_steps, int64_t h, int64_t w,
                        bool counts) {
  LIDIFF_CHECK(t_steps >= 1, "rasterize_events: T must be >= 1");
  Tensor out = Tensor::zeros({t_steps, 2, h, w});
  if (stream.empty()) return out;
  // Window assignment depends only on the observed time span, not on event
  // order, so unsorted streams rasterize identically to sorted ones.
  uint32_t t0 = stream.front().t_us, t1 = stream.front().t_us;
  for (const Event& e : stream) {
    t0 = std::min(t0, e.t_us);
    t1 = std::max(t1, e.t_us);
  }
  double span = std::max<double>(1.0, static_cast<double>(t1) - static_cast<double>(t0));
  float* p = out.data();
  for (const Event& e : stream) {
    LIDIFF_CHECK(e.x < w && e.y < h, "rasterize_events: event at (", e.x, ",", e.y,
                 ") outside sensor ", h, "x", w);
    int64_t win = static_cast<int64_t>(
        std::floor((static_cast<double>(e.t_us) - t0) / span * static_cast<double>(t_steps)));
    win = std::min(win, t_steps - 1);
    int64_t idx = ((win * 2 + e.polarity) * h + e.y) * w + e.x;
    if (counts)
      p[idx] += 1.0f;
    else
      p[idx] = 1.0f;
  }
  return out;
}

Dataset make_toy_dataset(const std::string& kind, int64_t n, uint64_t seed) {
  LIDIFF_CHECK(n >= 2, "make_toy_dataset: need at least 2 samples");
  LIDIFF_CHECK(kind == "blobs" || kind == "bars", "make_toy_dataset: unknown kind '", kind,
               "' (expected blobs or bars)");
  constexpr int64_t kSide = 16;
  Dataset ds;
  ds.class_count = 2;
  ds.channels = 1;
  ds.height = kSide;
  ds.width = kSide;
  ds.split = kind;
  Rng rng(seed);
  for (int64_t i = 0; i < n; ++i) {
    int label = static_cast<int>(i % 2);  // alternating keeps classes balanced
    std::vector<float> img(kSide * kSide, 0.0f);
    if (kind == "blobs") {
      int64_t r0 = label == 0 ? 1 : kSide - 5;
      int64_t c0 = label == 0 ? 1 : kSide - 5;
      for (int64_t r = r0; r < r0 + 4; ++r)
        for (int64_t c = c0; c < c0 + 4; ++c) img[static_cast<size_t>(r * kSide + c)] = 1.0f;
    } else {
      int64_t pos = rng.randint(2, kSide - 3);
      for (int64_t k = 2; k < kSide - 2; ++k) {
        int64_t idx = label == 0 ? pos * kSide + k : k * kSide + pos;
        img[static_cast<size_t>(idx)] = 1.0f;
      }
    }
    for (auto& v : img) {
      v += rng.normal(0.0f, 0.1f);
      v = std::min(std::max(v, 0.0f), 1.0f);
    }
    ds.inputs.push_back(Tensor::from({1, kSide, kSide}, std::move(img)));
    ds.labels.push_back(label);
  }
  ds.validate();
  return ds;
}

double centroid_classifier_accuracy(const Dataset& train, const Dataset& eval) {
  LIDIFF_CHECK(!train.inputs.empty() && !eval.inputs.empty(),
               "centroid classifier: empty split");
  int64_t dim = train.channels * train.height * train.width;
  std::vector<std::vector<double>> centroid(static_cast<size_t>(train.class_count),
                                            std::vector<double>(static_cast<size_t>(dim), 0.0));
  std::vector<int64_t> count(static_cast<size_t>(train.class_count), 0);
  for (size_t i = 0; i < train.inputs.size(); ++i) {
    const float* p = train.inputs[i].data();
    auto& c = centroid[static_cast<size_t>(train.labels[i])];
    for (int64_t j = 0; j < dim; ++j) c[static_cast<size_t>(j)] += p[j];
    ++count[static_cast<size_t>(train.labels[i])];
  }
  for (int64_t k = 0; k < train.class_count; ++k) {
    LIDIFF_CHECK(count[static_cast<size_t>(k)] > 0, "centroid classifier: empty class ", k);
    for (auto& v : centroid[static_cast<size_t>(k)])
      v /= static_cast<double>(count[static_cast<size_t>(k)]);
  }
  int64_t correct = 0;
  for (size_t i = 0; i < eval.inputs.size(); ++i) {
    const float* p = eval.inputs[i].data();
    int best = 0;
    double best_d = 0.0;
    for (int64_t k = 0; k < train.class_count; ++k) {
      double d = 0.0;
      for (int64_t j = 0; j < dim; ++j) {
        double diff = static_cast<double>(p[j]) - centroid[static_cast<size_t>(k)][static_cast<size_t>(j)];
        d += diff * diff;
      }
      if (k == 0 || d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    correct += best == eval.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.inputs.size());
}

Tensor make_batch(const Dataset& ds, const std::vector<int64_t>& order, size_t first,
                  size_t count, int64_t t_steps) {
  LIDIFF_CHECK(first + count <= order.size(), "make_batch: range exceeds dataset");
  int64_t c = ds.channels, h = ds.height, w = ds.width;
  int64_t per = c * h * w;
  Tensor out = Tensor::zeros({t_steps * static_cast<int64_t>(count), c, h, w});
  float* po = out.data();
  for (int64_t t = 0; t < t_steps; ++t)
    for (size_t b = 0; b < count; ++b) {
      const Tensor& s = ds.inputs[static_cast<size_t>(order[first + b])];
      std::copy(s.data(), s.data() + per,
                po + (t * static_cast<int64_t>(count) + static_cast<int64_t>(b)) * per);
    }
  return out;
}

std::vector<int> batch_labels(const Dataset& ds, const std::vector<int64_t>& order,
                              size_t first, size_t count) {
  std::vector<int> out(count);
  for (size_t b = 0; b < count; ++b)
    out[b] = ds.labels[static_cast<size_t>(order[first + b])];
  return out;
}

}  // namespace lidiff
