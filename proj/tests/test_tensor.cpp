#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "lidiff/gradcheck.hpp"
#include "lidiff/layers.hpp"
#include "lidiff/ltf.hpp"
#include "lidiff/tensor.hpp"

using namespace lidiff;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, float lo = -2.0f, float hi = 2.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

Tensor random_spikes(Shape shape, uint64_t seed, float p = 0.5f) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(0.f, 1.f) < p ? 1.f : 0.f;
  return t;
}

// Independent triple-loop product in double precision.
std::vector<double> matmul_oracle(const Tensor& a, const Tensor& b) {
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t p = 0; p < k; ++p)
        out[static_cast<size_t>(i * n + j)] += static_cast<double>(a.data()[i * k + p]) *
                                               static_cast<double>(b.data()[p * n + j]);
  return out;
}

}  // namespace

TEST_CASE("matmul identity and permutation") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor c = matmul(eye, eye);
  CHECK(c.values() == std::vector<float>{1, 0, 0, 1});

  Tensor a = Tensor::from({2, 2}, {1, 0, 0, 0});
  Tensor p = Tensor::from({2, 2}, {0, 1, 1, 0});
  Tensor r = matmul(a, p);
  CHECK(r.values() == std::vector<float>{0, 1, 0, 0});
}

TEST_CASE("matmul matches triple-loop oracle") {
  Tensor a = random_tensor({3, 4}, 11);
  Tensor b = random_tensor({4, 2}, 12);
  Tensor c = matmul(a, b);
  auto oracle = matmul_oracle(a, b);
  for (int64_t i = 0; i < c.numel(); ++i)
    CHECK(std::fabs(static_cast<double>(c.data()[i]) - oracle[static_cast<size_t>(i)]) < 1e-6);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5, 2});
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("[3x4]") != std::string::npos);
    CHECK(msg.find("[5x2]") != std::string::npos);
  }
}

TEST_CASE("forward ops match naive loop references across seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng shapes(seed * 7 + 1);
    int64_t m = shapes.randint(1, 8), k = shapes.randint(1, 8), n = shapes.randint(1, 8);
    Tensor a = random_tensor({m, k}, seed * 3 + 1);
    Tensor b = random_tensor({k, n}, seed * 3 + 2);
    Tensor c = matmul(a, b);
    auto oracle = matmul_oracle(a, b);
    for (int64_t i = 0; i < c.numel(); ++i)
      CHECK(std::fabs(static_cast<double>(c.data()[i]) - oracle[static_cast<size_t>(i)]) <
            1e-6);

    // reduce_sum against a loop accumulator
    Tensor x = random_tensor({m, k}, seed * 3 + 3);
    Tensor rows = reduce_sum(x, 1);
    for (int64_t i = 0; i < m; ++i) {
      double acc = 0;
      for (int64_t j = 0; j < k; ++j) acc += static_cast<double>(x.data()[i * k + j]);
      CHECK(std::fabs(static_cast<double>(rows.data()[i]) - acc) < 1e-6);
    }
  }
}

TEST_CASE("batchnorm zero variance yields zeros") {
  Tensor x = Tensor::from({4, 2}, {3, -1, 3, -1, 3, -1, 3, -1});
  Tensor gamma = Tensor::ones({2});
  Tensor beta = Tensor::zeros({2});
  Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
  Tensor out = batchnorm(x, gamma, beta, rm, rv, /*training=*/true);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(0.0f));
}

TEST_CASE("batchnorm gamma zero gives beta broadcast") {
  Tensor x = random_tensor({5, 3}, 21);
  Tensor gamma = Tensor::zeros({3});
  Tensor beta = Tensor::from({3}, {0.5f, -1.0f, 2.0f});
  Tensor rm = Tensor::zeros({3}), rv = Tensor::ones({3});
  Tensor out = batchnorm(x, gamma, beta, rm, rv, true);
  for (int64_t i = 0; i < 5; ++i) {
    CHECK(out.data()[i * 3 + 0] == 0.5f);
    CHECK(out.data()[i * 3 + 1] == -1.0f);
    CHECK(out.data()[i * 3 + 2] == 2.0f);
  }
}

TEST_CASE("batchnorm normalizes statistics") {
  Tensor x = random_tensor({8, 4}, 31);
  Tensor gamma = Tensor::ones({4});
  Tensor beta = Tensor::zeros({4});
  Tensor rm = Tensor::zeros({4}), rv = Tensor::ones({4});
  Tensor out = batchnorm(x, gamma, beta, rm, rv, true);
  for (int64_t c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (int64_t i = 0; i < 8; ++i) mean += out.data()[i * 4 + c];
    mean /= 8;
    for (int64_t i = 0; i < 8; ++i) {
      double d = out.data()[i * 4 + c] - mean;
      var += d * d;
    }
    var /= 8;
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm training with one row errors") {
  Tensor x = Tensor::zeros({1, 3});
  Tensor gamma = Tensor::ones({3}), beta = Tensor::zeros({3});
  Tensor rm = Tensor::zeros({3}), rv = Tensor::ones({3});
  CHECK_THROWS_AS(batchnorm(x, gamma, beta, rm, rv, true), Error);
}

TEST_CASE("batchnorm running stats update and eval path") {
  Tensor x = Tensor::from({2, 1}, {0.0f, 2.0f});  // mean 1, var 1
  Tensor gamma = Tensor::ones({1}), beta = Tensor::zeros({1});
  Tensor rm = Tensor::zeros({1}), rv = Tensor::ones({1});
  batchnorm(x, gamma, beta, rm, rv, true, /*update_stats=*/true, 0.1f);
  CHECK(rm.data()[0] == doctest::Approx(0.1f));
  CHECK(rv.data()[0] == doctest::Approx(1.0f));  // 0.9*1 + 0.1*1
  // update_stats=false leaves them alone
  batchnorm(x, gamma, beta, rm, rv, true, false, 0.1f);
  CHECK(rm.data()[0] == doctest::Approx(0.1f));
  Tensor out = batchnorm(x, gamma, beta, rm, rv, false);
  CHECK(out.data()[0] == doctest::Approx((0.0f - 0.1f) / std::sqrt(1.0f + 1e-5f)));
}

TEST_CASE("clamp01 forward and gradient") {
  Tensor x = Tensor::from({3, 1}, {0.5f, -3.0f, 7.0f});
  Tensor out = clamp01(x);
  CHECK(out.data()[0] == 0.5f);
  CHECK(out.data()[1] == 0.0f);
  CHECK(out.data()[2] == 1.0f);

  Tensor y = Tensor::from({2, 1}, {0.5f, 1.5f});
  y.set_requires_grad(true);
  GradTape tape;
  {
    GradTape::Scope scope(tape);
    Tensor loss = sum_all(scale(clamp01(y), 3.0f));
    tape.backward(loss);
  }
  Tensor g = y.grad_tensor();
  CHECK(g.data()[0] == 3.0f);  // interior: upstream grad passes
  CHECK(g.data()[1] == 0.0f);  // saturated: zero

  // Finite difference of the clamp forward agrees at the interior point.
  float eps = 1e-3f;
  auto f = [](float v) { return std::min(std::max(v, 0.0f), 1.0f); };
  float fd = (f(0.5f + eps) - f(0.5f - eps)) / (2 * eps);
  CHECK(fd == doctest::Approx(1.0f));
  float fd_out = (f(1.5f + eps) - f(1.5f - eps)) / (2 * eps);
  CHECK(fd_out == doctest::Approx(0.0f));
}

TEST_CASE("reduce_sum examples and errors") {
  Tensor ones = Tensor::ones({3, 4});
  Tensor r = reduce_sum(ones, 1);
  CHECK(r.shape() == Shape{3, 1});
  for (int64_t i = 0; i < 3; ++i) CHECK(r.data()[i] == 4.0f);

  Tensor zeros = Tensor::zeros({2, 5});
  Tensor rz = reduce_sum(zeros, 0);
  CHECK(rz.shape() == Shape{1, 5});
  for (int64_t i = 0; i < 5; ++i) CHECK(rz.data()[i] == 0.0f);

  CHECK_THROWS_AS(reduce_sum(ones, 2), Error);
}

TEST_CASE("grad_check analytic quadratic") {
  Tensor w = Tensor::from({2}, {1.0f, 2.0f});
  w.mark_param();
  auto f = [&] { return sum_all(hadamard(w, w)); };
  // Tape gradient should be [2, 4].
  w.zero_grad();
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
  }
  Tensor g = w.grad_tensor();
  CHECK(g.data()[0] == doctest::Approx(2.0f));
  CHECK(g.data()[1] == doctest::Approx(4.0f));

  auto report = grad_check(f, {{"w", w}}, 1e-3f, 1e-3f);
  CHECK(report.pass(1e-3f));
}

TEST_CASE("grad_check on a matmul chain") {
  Tensor a = random_tensor({3, 4}, 41);
  Tensor b = random_tensor({4, 2}, 42);
  a.mark_param();
  b.mark_param();
  auto f = [&] { return sum_all(matmul(a, b)); };
  auto report = grad_check(f, {{"a", a}, {"b", b}}, 1e-3f, 1e-3f);
  CHECK(report.max_rel_err < 1e-3f);
}

TEST_CASE("grad_check with surrogate spike uses the smoothed forward") {
  Tensor v = random_tensor({4, 3}, 43, -1.5f, 1.5f);
  v.mark_param();
  // Smooth mode makes the checked function the sigmoid itself, so finite
  // differences probe exactly what the tape differentiates.
  auto f = [&] { return sum_all(spike_threshold(v, 2.0f, /*smooth=*/true)); };
  auto report = grad_check(f, {{"v", v}}, 1e-3f, 1e-3f);
  CHECK(report.max_rel_err < 1e-3f);
}

TEST_CASE("per-op gradients match finite differences over 20 seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng shapes(seed + 100);
    int64_t m = shapes.randint(2, 8), k = shapes.randint(2, 8), n = shapes.randint(2, 8);

    SUBCASE("") {}  // keep doctest quiet about empty case names

    {
      Tensor a = random_tensor({m, k}, seed * 11 + 1);
      Tensor b = random_tensor({k, n}, seed * 11 + 2);
      a.mark_param();
      b.mark_param();
      auto f = [&] { return sum_all(matmul(a, b)); };
      CHECK(grad_check(f, {{"a", a}, {"b", b}}, 1e-3f, 1e-3f).max_rel_err < 1e-3f);
    }
    {
      Tensor a = random_tensor({m, k}, seed * 11 + 3);
      Tensor b = random_tensor({m, n}, seed * 11 + 4);
      a.mark_param();
      b.mark_param();
      auto f = [&] { return sum_all(matmul_ta(a, b)); };
      CHECK(grad_check(f, {{"a", a}, {"b", b}}, 1e-3f, 1e-3f).max_rel_err < 1e-3f);
    }
    {
      Tensor a = random_tensor({m, k}, seed * 11 + 5);
      Tensor b = random_tensor({n, k}, seed * 11 + 6);
      a.mark_param();
      b.mark_param();
      auto f = [&] { return sum_all(matmul_tb(a, b)); };
      CHECK(grad_check(f, {{"a", a}, {"b", b}}, 1e-3f, 1e-3f).max_rel_err < 1e-3f);
    }
    {
      Tensor x = random_tensor({m, k}, seed * 11 + 7);
      Tensor y = random_tensor({m, k}, seed * 11 + 8);
      x.mark_param();
      y.mark_param();
      auto f = [&] { return sum_all(hadamard(sub(scale(x, 1.7f), y), add(x, y))); };
      CHECK(grad_check(f, {{"x", x}, {"y", y}}, 1e-3f, 1e-3f).max_rel_err < 1e-3f);
    }
    {
      Tensor x = random_tensor({m, k}, seed * 11 + 9);
      x.mark_param();
      auto f = [&] { return sum_all(reduce_sum(x, static_cast<int>(seed % 2))); };
      CHECK(grad_check(f, {{"x", x}}, 1e-3f, 1e-3f).max_rel_err < 1e-3f);
    }
    {
      Tensor x = random_tensor({m, k}, seed * 11 + 10);
      Tensor v = random_tensor({m, 1}, seed * 11 + 11);
      Tensor bias = random_tensor({k}, seed * 11 + 12);
      x.mark_param();
      v.mark_param();
      bias.mark_param();
      auto f = [&] { return sum_all(mul_colvec(add_bias(x, bias), v)); };
      CHECK(grad_check(f, {{"x", x}, {"v", v}, {"b", bias}}, 1e-3f, 1e-3f).max_rel_err <
            1e-3f);
    }
    {
      // batchnorm training-mode gradient
      Tensor x = random_tensor({m, k}, seed * 11 + 13);
      Tensor gamma = random_tensor({k}, seed * 11 + 14, 0.5f, 1.5f);
      Tensor beta = random_tensor({k}, seed * 11 + 15, -0.5f, 0.5f);
      x.mark_param();
      gamma.mark_param();
      beta.mark_param();
      Tensor rm = Tensor::zeros({k}), rv = Tensor::ones({k});
      Tensor probe = random_tensor({m, k}, seed * 11 + 99);  // fixed weighting
      auto f = [&] {
        return sum_all(hadamard(batchnorm(x, gamma, beta, rm, rv, true, false), probe));
      };
      CHECK(grad_check(f, {{"x", x}, {"g", gamma}, {"b", beta}}, 1e-3f, 1e-3f).max_rel_err <
            1e-3f);
    }
    {
      // conv2d
      Tensor x = random_tensor({2, 2, 5, 5}, seed * 11 + 16);
      Tensor w = random_tensor({3, 2, 3, 3}, seed * 11 + 17, -0.5f, 0.5f);
      x.mark_param();
      w.mark_param();
      auto f = [&] { return sum_all(reshape(conv2d(x, w, 1, 1), {2 * 3 * 25, 1})); };
      CHECK(grad_check(f, {{"x", x}, {"w", w}}, 1e-3f, 1e-3f).max_rel_err < 1e-3f);
    }
    {
      // shape plumbing: slices, concats, token permutes
      Tensor x = random_tensor({2, 3, 4, 4}, seed * 11 + 18);
      x.mark_param();
      auto f = [&] {
        Tensor t = nchw_to_tokens(x);
        Tensor left = slice_cols(t, 0, 2);
        Tensor right = slice_cols(t, 2, 3);
        Tensor glued = concat_cols({right, left});
        Tensor top = slice_rows(glued, 0, 16);
        Tensor bottom = slice_rows(glued, 16, 32);
        return sum_all(hadamard(concat_rows({bottom, top}),
                                nchw_to_tokens(tokens_to_nchw(glued, 3, 4, 4))));
      };
      CHECK(grad_check(f, {{"x", x}}, 1e-3f, 1e-3f).max_rel_err < 1e-3f);
    }
    {
      // softmax cross-entropy + pooling
      Tensor x = random_tensor({8, 3}, seed * 11 + 19);
      x.mark_param();
      std::vector<int> labels = {0, 2, 1, 0};
      auto f = [&] {
        Tensor pooled = mean_time_tokens(x, 2, 4, 1);
        return softmax_cross_entropy(pooled, labels);
      };
      CHECK(grad_check(f, {{"x", x}}, 1e-3f, 1e-3f).max_rel_err < 1e-3f);
    }
    {
      // clamp01 away from its kinks
      Tensor x = Tensor::zeros({m, k});
      Rng rng(seed * 11 + 20);
      for (int64_t i = 0; i < x.numel(); ++i) {
        float v = rng.uniform(-1.5f, 1.5f);
        while (std::fabs(v) < 0.05f || std::fabs(v - 1.0f) < 0.05f) v = rng.uniform(-1.5f, 1.5f);
        x.data()[i] = v;
      }
      x.mark_param();
      auto f = [&] { return sum_all(hadamard(clamp01(x), x)); };
      CHECK(grad_check(f, {{"x", x}}, 1e-3f, 1e-3f).max_rel_err < 1e-3f);
    }
  }
}

TEST_CASE("spike values survive masking compositions") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Tensor s1 = random_spikes({6, 8}, seed * 5 + 1);
    Tensor s2 = random_spikes({6, 8}, seed * 5 + 2);
    Tensor mask = random_spikes({6, 1}, seed * 5 + 3);
    Tensor out = hadamard(mul_colvec(s1, mask), s2);
    CHECK(is_binary(out));
    CHECK(is_binary(hadamard(out, s1)));
  }
}

TEST_CASE("tape refuses a second backward") {
  Tensor w = Tensor::from({2}, {1.0f, 2.0f});
  w.mark_param();
  GradTape tape;
  Tensor loss;
  {
    GradTape::Scope scope(tape);
    loss = sum_all(hadamard(w, w));
  }
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("backward requires a scalar") {
  Tensor w = Tensor::from({2}, {1.0f, 2.0f});
  w.mark_param();
  GradTape tape;
  Tensor out;
  {
    GradTape::Scope scope(tape);
    out = hadamard(w, w);
  }
  CHECK_THROWS_AS(tape.backward(out), Error);
}

TEST_CASE("gradients accumulate across reuse of one tensor") {
  Tensor w = Tensor::from({1}, {3.0f});
  w.mark_param();
  GradTape tape;
  Tensor loss;
  {
    GradTape::Scope scope(tape);
    loss = sum_all(add(hadamard(w, w), scale(w, 2.0f)));  // w^2 + 2w -> d/dw = 2w + 2
  }
  tape.backward(loss);
  CHECK(w.grad_tensor().data()[0] == doctest::Approx(8.0f));
}

TEST_CASE("ltf round trip is bit exact") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "lidiff_ltf_test";
  fs::create_directories(dir);
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 7);
    Shape shape;
    int rank = static_cast<int>(rng.randint(1, 4));
    for (int i = 0; i < rank; ++i) shape.push_back(rng.randint(1, 6));
    Tensor t = random_tensor(shape, seed + 70, -100.0f, 100.0f);
    std::string path = (dir / ("t" + std::to_string(seed) + ".ltf")).string();
    write_ltf(path, t);
    Tensor back = read_ltf(path);
    CHECK(back.shape() == t.shape());
    CHECK(back.values() == t.values());  // exact float comparison
  }
  fs::remove_all(dir);
}

TEST_CASE("ltf rejects corrupt files") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "lidiff_ltf_bad";
  fs::create_directories(dir);

  std::string bad_magic = (dir / "bad_magic.ltf").string();
  {
    std::ofstream f(bad_magic, std::ios::binary);
    f << "NOPE1234";
  }
  CHECK_THROWS_AS(read_ltf(bad_magic), Error);

  std::string truncated = (dir / "truncated.ltf").string();
  write_ltf(truncated, Tensor::ones({4, 4}));
  fs::resize_file(truncated, 24);  // chop the payload
  CHECK_THROWS_AS(read_ltf(truncated), Error);

  CHECK_THROWS_AS(read_ltf((dir / "missing.ltf").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("sat_add1 keeps sums binary and gates gradient") {
  Tensor a = Tensor::from({4, 1}, {0, 0, 1, 1});
  Tensor b = Tensor::from({4, 1}, {0, 1, 0, 1});
  a.set_requires_grad(true);
  GradTape tape;
  Tensor out;
  {
    GradTape::Scope scope(tape);
    out = sat_add1(a, b);
    tape.backward(sum_all(out));
  }
  CHECK(out.values() == std::vector<float>{0, 1, 1, 1});
  CHECK(is_binary(out));
  Tensor g = a.grad_tensor();
  CHECK(g.data()[0] == 1.0f);
  CHECK(g.data()[1] == 1.0f);
  CHECK(g.data()[2] == 1.0f);
  CHECK(g.data()[3] == 0.0f);  // saturated pair blocks gradient
}
