#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lidiff/train.hpp"

using namespace lidiff;

namespace {

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.time_steps = 2;
  cfg.in_channels = 1;
  cfg.img_h = 16;
  cfg.img_w = 16;
  cfg.base_channels = 8;
  cfg.depth1 = 1;
  cfg.depth2 = 1;
  cfg.depth3 = 1;
  cfg.num_classes = 2;
  return cfg;
}

TrainRecipe micro_recipe(int64_t epochs) {
  TrainRecipe r;
  r.epochs = epochs;
  r.batch_size = 16;
  r.base_lr = 2e-3f;
  r.weight_decay = 6e-2f;
  r.seed = 3;
  return r;
}

}  // namespace

TEST_CASE("adamw: zero gradient and zero decay leave parameters alone") {
  Tensor w = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
  w.mark_param();
  AdamW opt({{"w", w}}, 0.1f);
  opt.step();
  CHECK(w.values() == std::vector<float>{1.0f, -2.0f, 0.5f});
}

TEST_CASE("adamw: first step moves by about minus lr") {
  Tensor w = Tensor::from({1}, {1.0f});
  w.mark_param();
  w.grad_buffer()[0] = 1.0f;
  AdamW opt({{"w", w}}, 0.1f, 0.9f, 0.999f, 1e-8f, 0.0f);
  opt.step();
  // mhat = 1, vhat = 1: step = -lr / (1 + eps)
  CHECK(w.data()[0] == doctest::Approx(1.0f - 0.1f).epsilon(1e-6));
}

TEST_CASE("adamw: pure weight decay shrinks by lr*wd per step") {
  Tensor w = Tensor::from({1}, {2.0f});
  w.mark_param();
  AdamW opt({{"w", w}}, 0.1f, 0.9f, 0.999f, 1e-8f, 0.05f);
  float expect = 2.0f;
  for (int i = 0; i < 5; ++i) {
    opt.step();
    expect -= 0.1f * 0.05f * expect;
    CHECK(w.data()[0] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("adamw rejects non-finite gradients by name") {
  Tensor w = Tensor::from({2}, {1.0f, 1.0f});
  w.mark_param();
  w.grad_buffer()[1] = std::numeric_limits<float>::quiet_NaN();
  AdamW opt({{"prompts", w}}, 0.1f);
  try {
    opt.step();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("prompts") != std::string::npos);
  }
}

TEST_CASE("gradient clipping scales to the requested norm") {
  Tensor a = Tensor::from({2}, {0.0f, 0.0f});
  a.mark_param();
  a.grad_buffer()[0] = 3.0f;
  a.grad_buffer()[1] = 4.0f;  // norm 5
  double norm = clip_grad_norm({{"a", a}}, 2.5);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(a.grad_tensor().data()[0] == doctest::Approx(1.5f));
  CHECK(a.grad_tensor().data()[1] == doctest::Approx(2.0f));
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  TrainRecipe r;
  r.epochs = 10;
  r.base_lr = 1.0f;
  r.warmup_epochs = 0;
  CHECK(cosine_lr(0, r) == doctest::Approx(1.0f));
  CHECK(cosine_lr(5, r) == doctest::Approx(0.5f));
  CHECK_THROWS_AS(cosine_lr(10, r), Error);
  CHECK_THROWS_AS(cosine_lr(-1, r), Error);
}

TEST_CASE("cosine schedule is non-increasing after warmup") {
  TrainRecipe r;
  r.epochs = 40;
  r.base_lr = 5e-3f;
  r.warmup_epochs = 5;
  float prev = std::numeric_limits<float>::max();
  for (int64_t e = r.warmup_epochs; e < r.epochs; ++e) {
    float lr = cosine_lr(e, r);
    CHECK(lr <= prev);
    prev = lr;
  }
  // And warmup rises to the base rate.
  CHECK(cosine_lr(0, r) == doctest::Approx(5e-3f / 5));
  CHECK(cosine_lr(5, r) == doctest::Approx(5e-3f));
}

TEST_CASE("zero learning rate freezes parameters and metrics") {
  ModelConfig cfg = micro_config();
  Dataset train = make_toy_dataset("blobs", 32, 5);
  Dataset eval = make_toy_dataset("blobs", 16, 6);
  Network net(cfg, 7);
  std::vector<std::vector<float>> before;
  for (const auto& [n, p] : net.registry().params) before.push_back(p.values());
  TrainRecipe r = micro_recipe(3);
  r.base_lr = 0.0f;
  r.weight_decay = 0.0f;
  r.batch_size = 32;  // one full batch: loss becomes order-invariant too
  TrainResult res = train_loop(net, train, eval, r);
  size_t i = 0;
  for (const auto& [n, p] : net.registry().params) CHECK(p.values() == before[i++]);
  CHECK(res.history[0].eval_acc == res.history[2].eval_acc);
  CHECK(res.history[0].train_loss == doctest::Approx(res.history[2].train_loss));
}

TEST_CASE("training is deterministic under a fixed seed") {
  ModelConfig cfg = micro_config();
  Dataset train = make_toy_dataset("blobs", 48, 15);
  Dataset eval = make_toy_dataset("blobs", 16, 16);
  TrainRecipe r = micro_recipe(3);

  Network a(cfg, 11);
  TrainResult ra = train_loop(a, train, eval, r);
  Network b(cfg, 11);
  TrainResult rb = train_loop(b, train, eval, r);
  REQUIRE(ra.history.size() == rb.history.size());
  for (size_t e = 0; e < ra.history.size(); ++e) {
    CHECK(ra.history[e].train_loss == rb.history[e].train_loss);  // exact
    CHECK(ra.history[e].loss1 == rb.history[e].loss1);
    CHECK(ra.history[e].loss2 == rb.history[e].loss2);
    CHECK(ra.history[e].eval_acc == rb.history[e].eval_acc);
  }
  for (size_t i = 0; i < a.registry().params.size(); ++i)
    CHECK(a.registry().params[i].second.values() == b.registry().params[i].second.values());
}

TEST_CASE("loss falls over the first epochs on the toy task") {
  ModelConfig cfg = micro_config();
  Dataset train = make_toy_dataset("blobs", 64, 25);
  Dataset eval = make_toy_dataset("blobs", 16, 26);
  Network net(cfg, 13);
  TrainRecipe r = micro_recipe(10);
  TrainResult res = train_loop(net, train, eval, r);
  double head = 0, tail = 0;
  for (int e = 0; e < 3; ++e) head += res.history[static_cast<size_t>(e)].train_loss;
  for (int e = 7; e < 10; ++e) tail += res.history[static_cast<size_t>(e)].train_loss;
  CHECK(tail / 3.0 < head / 3.0);
}

TEST_CASE("metrics csv carries the expected header and rows") {
  namespace fs = std::filesystem;
  ModelConfig cfg = micro_config();
  Dataset train = make_toy_dataset("blobs", 32, 35);
  Dataset eval = make_toy_dataset("blobs", 8, 36);
  Network net(cfg, 17);
  TrainRecipe r = micro_recipe(2);
  fs::path csv = fs::temp_directory_path() / "lidiff_metrics_test.csv";
  train_loop(net, train, eval, r, csv.string());
  std::ifstream f(csv);
  std::string header;
  std::getline(f, header);
  CHECK(header == "epoch,lr,train_loss,loss1,loss2,eval_acc");
  int rows = 0;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  fs::remove(csv);
}

TEST_CASE("alpha=1 with frozen equal prompts matches the no-feedback trajectory bit-exactly") {
  Dataset train = make_toy_dataset("blobs", 48, 45);
  Dataset eval = make_toy_dataset("blobs", 16, 46);

  ModelConfig fb_cfg = micro_config();
  fb_cfg.alpha = 1.0f;
  Network fb_net(fb_cfg, 21);
  for (auto& attn : fb_net.stage3_attn()) {
    std::copy(attn->w_p1.data(), attn->w_p1.data() + attn->w_p1.numel(), attn->w_p2.data());
    attn->w_p1.set_requires_grad(false);
    attn->w_p2.set_requires_grad(false);
  }

  ModelConfig ab_cfg = micro_config();
  ab_cfg.no_fb_lidiff = true;
  Network ab_net(ab_cfg, 21);

  TrainRecipe r = micro_recipe(3);
  r.alpha = 1.0f;
  TrainResult rf = train_loop(fb_net, train, eval, r);
  TrainResult ra = train_loop(ab_net, train, eval, r);

  REQUIRE(rf.history.size() == ra.history.size());
  for (size_t e = 0; e < rf.history.size(); ++e) {
    CHECK(rf.history[e].loss1 == ra.history[e].loss1);  // bitwise equal doubles
    CHECK(rf.history[e].train_loss == ra.history[e].train_loss);
    CHECK(rf.history[e].eval_acc == ra.history[e].eval_acc);
  }
  // Shared parameters end bit-identical.
  for (const auto& [name, pa] : ab_net.registry().params) {
    for (const auto& [nf, pf] : fb_net.registry().params)
      if (nf == name) CHECK(pa.values() == pf.values());
  }
  // And the buffers (running statistics) too.
  for (const auto& [name, ba] : ab_net.registry().buffers) {
    for (const auto& [nf, bf] : fb_net.registry().buffers)
      if (nf == name) CHECK(ba.values() == bf.values());
  }
}

TEST_CASE("augmentation keeps inputs valid and trains") {
  ModelConfig cfg = micro_config();
  Dataset train = make_toy_dataset("blobs", 32, 55);
  Dataset eval = make_toy_dataset("blobs", 8, 56);
  Network net(cfg, 23);
  TrainRecipe r = micro_recipe(2);
  r.augment = true;
  TrainResult res = train_loop(net, train, eval, r);
  CHECK(res.history.size() == 2);
  CHECK(std::isfinite(res.history.back().train_loss));
}

TEST_CASE("recipe validation") {
  TrainRecipe r;
  r.epochs = 0;
  CHECK_THROWS_AS(r.validate(), Error);
  r = TrainRecipe{};
  r.alpha = 1.5f;
  CHECK_THROWS_AS(r.validate(), Error);
  r = TrainRecipe{};
  r.schedule = "exponential";
  CHECK_THROWS_AS(r.validate(), Error);
  r = TrainRecipe{};
  r.warmup_epochs = 99;
  CHECK_THROWS_AS(r.validate(), Error);
}
