#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "lidiff/data.hpp"
#include "lidiff/ltf.hpp"

using namespace lidiff;
namespace fs = std::filesystem;

TEST_CASE("toy datasets are deterministic under seed") {
  Dataset a = make_toy_dataset("blobs", 32, 7);
  Dataset b = make_toy_dataset("blobs", 32, 7);
  Dataset c = make_toy_dataset("blobs", 32, 8);
  REQUIRE(a.size() == 32);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.labels[i] == b.labels[i]);
    CHECK(a.inputs[i].values() == b.inputs[i].values());
  }
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a.inputs[i].values() != c.inputs[i].values()) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("toy datasets are balanced and in range") {
  for (const char* kind : {"blobs", "bars"}) {
    for (int64_t n : {10L, 33L}) {
      Dataset ds = make_toy_dataset(kind, n, 3);
      int64_t c0 = std::count(ds.labels.begin(), ds.labels.end(), 0);
      int64_t c1 = std::count(ds.labels.begin(), ds.labels.end(), 1);
      CHECK(std::abs(c0 - c1) <= 1);
      for (const Tensor& t : ds.inputs)
        for (int64_t i = 0; i < t.numel(); ++i) {
          CHECK(t.data()[i] >= 0.0f);
          CHECK(t.data()[i] <= 1.0f);
        }
    }
  }
  CHECK_THROWS_AS(make_toy_dataset("circles", 10, 1), Error);
  CHECK_THROWS_AS(make_toy_dataset("blobs", 1, 1), Error);
}

TEST_CASE("blobs are separable by the centroid oracle") {
  Dataset train = make_toy_dataset("blobs", 256, 11);
  Dataset eval = make_toy_dataset("blobs", 128, 12);
  CHECK(centroid_classifier_accuracy(train, eval) >= 0.99);
}

TEST_CASE("cifar reader handles records, bad labels and truncation") {
  fs::path dir = fs::temp_directory_path() / "lidiff_cifar_test";
  fs::create_directories(dir);

  // A canonical batch file holds exactly 10000 records of 3073 bytes.
  CHECK(30730000 / 3073 == 10000);

  auto write_records = [&](const std::string& name, int count, int bad_label_at) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    for (int r = 0; r < count; ++r) {
      unsigned char label = r == bad_label_at ? 255 : static_cast<unsigned char>(r % 10);
      f.put(static_cast<char>(label));
      for (int i = 0; i < 3072; ++i) f.put(static_cast<char>((r + i) % 256));
    }
    return (dir / name).string();
  };

  std::string good = write_records("good.bin", 3, -1);
  Dataset ds = read_cifar10_batches({good});
  CHECK(ds.size() == 3);
  CHECK(ds.labels[2] == 2);
  CHECK(ds.inputs[0].shape() == Shape{3, 32, 32});
  for (int64_t i = 0; i < ds.inputs[0].numel(); ++i) {
    CHECK(ds.inputs[0].data()[i] >= 0.0f);
    CHECK(ds.inputs[0].data()[i] <= 1.0f);
  }
  // Pixel scaling: first pixel of record 1 is byte value 1 -> 1/255.
  CHECK(ds.inputs[1].data()[0] == doctest::Approx(1.0f / 255.0f));

  std::string bad_label = write_records("bad_label.bin", 2, 1);
  CHECK_THROWS_WITH_AS(read_cifar10_batches({bad_label}),
                       doctest::Contains("label byte 255"), Error);

  std::string truncated = write_records("trunc.bin", 2, -1);
  fs::resize_file(truncated, 3073 + 100);
  try {
    read_cifar10_batches({truncated});
    FAIL("expected truncation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  CHECK_THROWS_AS(read_cifar10_batches({(dir / "missing.bin").string()}), Error);
  fs::remove_all(dir);
}

TEST_CASE("event rasterizer: empty stream gives zeros, not an error") {
  Tensor t = rasterize_events({}, 4, 8, 8);
  CHECK(t.shape() == Shape{4, 2, 8, 8});
  for (int64_t i = 0; i < t.numel(); ++i) CHECK(t.data()[i] == 0.0f);
}

TEST_CASE("event rasterizer places a single event in the right voxel") {
  EventStream s = {{0, 0, 0, 0}, {500, 3, 5, 1}, {1000, 7, 7, 0}};
  Tensor t = rasterize_events(s, 2, 8, 8);
  // Event at mid-span lands in window 1 of 2, polarity channel 1, (y=5, x=3).
  CHECK(t.data()[((1 * 2 + 1) * 8 + 5) * 8 + 3] == 1.0f);
  double nonzero = 0;
  for (int64_t i = 0; i < t.numel(); ++i) nonzero += t.data()[i] != 0.0f ? 1 : 0;
  CHECK(nonzero <= 3.0);  // bounded by the event count
  CHECK(is_binary(t));
}

TEST_CASE("event rasterizer is permutation invariant within windows") {
  Rng rng(21);
  EventStream s;
  for (int i = 0; i < 200; ++i)
    s.push_back({static_cast<uint32_t>(i * 17), static_cast<uint16_t>(rng.randint(0, 7)),
                 static_cast<uint16_t>(rng.randint(0, 7)),
                 static_cast<uint8_t>(rng.randint(0, 1))});
  Tensor a = rasterize_events(s, 4, 8, 8);
  // Shuffle events within each quarter of the span (same windows).
  EventStream shuffled = s;
  for (int w = 0; w < 4; ++w) {
    auto lo = shuffled.begin() + w * 50;
    std::reverse(lo, lo + 50);
    std::sort(lo, lo + 50, [](const Event& x, const Event& y) { return x.t_us > y.t_us; });
  }
  // Re-sorting descending inside a window changes order; counts must not care.
  // (rasterize_events itself never assumes ordering beyond the span.)
  Tensor b = rasterize_events(shuffled, 4, 8, 8);
  CHECK(a.values() == b.values());
}

TEST_CASE("event rasterizer counts mode accumulates") {
  EventStream s = {{0, 1, 1, 1}, {1, 1, 1, 1}, {2, 1, 1, 1}};
  Tensor t = rasterize_events(s, 1, 4, 4);
  CHECK(t.data()[((0 * 2 + 1) * 4 + 1) * 4 + 1] == 1.0f);  // binarized by default
  Tensor c = rasterize_events(s, 1, 4, 4, /*counts=*/true);
  CHECK(c.data()[((0 * 2 + 1) * 4 + 1) * 4 + 1] == 3.0f);
}

TEST_CASE("event rasterizer rejects out-of-bounds coordinates") {
  EventStream s = {{0, 9, 0, 0}};
  CHECK_THROWS_AS(rasterize_events(s, 1, 8, 8), Error);
}

TEST_CASE("event stream file round trip") {
  fs::path dir = fs::temp_directory_path() / "lidiff_events_test";
  fs::create_directories(dir);
  EventStream s = {{0, 1, 2, 0}, {10, 3, 4, 1}, {4000000000u, 65535, 0, 1}};
  std::string path = (dir / "events.bin").string();
  write_event_stream(path, s);
  EventStream back = read_event_stream(path);
  REQUIRE(back.size() == s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    CHECK(back[i].t_us == s[i].t_us);
    CHECK(back[i].x == s[i].x);
    CHECK(back[i].y == s[i].y);
    CHECK(back[i].polarity == s[i].polarity);
  }
  // Truncated record.
  fs::resize_file(path, 9 * 3 - 2);
  CHECK_THROWS_AS(read_event_stream(path), Error);
  fs::remove_all(dir);
}

TEST_CASE("dataset tensors survive an ltf round trip bit-exactly") {
  fs::path dir = fs::temp_directory_path() / "lidiff_dataset_ltf";
  fs::create_directories(dir);
  Dataset ds = make_toy_dataset("bars", 8, 5);
  for (size_t i = 0; i < ds.size(); ++i) {
    std::string p = (dir / ("s" + std::to_string(i) + ".ltf")).string();
    write_ltf(p, ds.inputs[i]);
    Tensor back = read_ltf(p);
    CHECK(back.values() == ds.inputs[i].values());
    CHECK(back.shape() == ds.inputs[i].shape());
  }
  fs::remove_all(dir);
}

TEST_CASE("batching repeats static frames across time steps") {
  Dataset ds = make_toy_dataset("blobs", 4, 9);
  std::vector<int64_t> order = {2, 0, 3, 1};
  Tensor batch = make_batch(ds, order, 0, 3, /*t_steps=*/2);
  CHECK(batch.shape() == Shape{6, 1, 16, 16});
  int64_t per = 16 * 16;
  for (int64_t b = 0; b < 3; ++b) {
    const float* t0 = batch.data() + b * per;
    const float* t1 = batch.data() + (3 + b) * per;
    for (int64_t i = 0; i < per; ++i) CHECK(t0[i] == t1[i]);
    const float* src = ds.inputs[static_cast<size_t>(order[static_cast<size_t>(b)])].data();
    for (int64_t i = 0; i < per; ++i) CHECK(t0[i] == src[i]);
  }
  std::vector<int> labels = batch_labels(ds, order, 0, 3);
  CHECK(labels == std::vector<int>{ds.labels[2], ds.labels[0], ds.labels[3]});
}
