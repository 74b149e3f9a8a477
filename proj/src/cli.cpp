#include "lidiff/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <thread>

#include "lidiff/adversarial.hpp"
#include "lidiff/checkpoint.hpp"
#include "lidiff/energy.hpp"
#include "lidiff/log.hpp"
#include "lidiff/ltf.hpp"

namespace fs = std::filesystem;

namespace lidiff {

Dataset load_dataset_split(const RunConfig& rc, bool eval_split) {
  if (rc.dataset == "cifar10") {
    LIDIFF_CHECK(!rc.data_path.empty(), "cifar10 dataset needs data_path");
    std::vector<std::string> paths;
    std::string item;
    std::istringstream in(rc.data_path);
    while (std::getline(in, item, ',')) paths.push_back(item);
    if (paths.size() > 1) {
      if (eval_split) return read_cifar10_batches({paths.back()});
      paths.pop_back();
      return read_cifar10_batches(paths);
    }
    return read_cifar10_batches(paths);
  }
  uint64_t seed = name_seed(eval_split ? "eval-split" : "train-split", rc.recipe.seed);
  int64_t n = eval_split ? rc.eval_samples : rc.train_samples;
  Dataset ds = make_toy_dataset(rc.dataset, n, seed);
  ds.split = eval_split ? "eval" : "train";
  return ds;
}

namespace {

struct CommonArgs {
  std::string config_path;
  std::string checkpoint;
  std::string out_dir = ".";
  int64_t seed = -1;  // -1: keep config value
  int threads = 1;
  std::string overrides;
};

RunConfig resolve_config(const CommonArgs& a, bool need_config, bool need_checkpoint) {
  RunConfig rc;
  if (!a.checkpoint.empty()) {
    rc = read_checkpoint_config(a.checkpoint);
  } else if (!a.config_path.empty()) {
    rc = parse_config_file(a.config_path);
  } else if (need_config || need_checkpoint) {
    throw UsageError(need_checkpoint ? "this command needs --checkpoint"
                                     : "this command needs --config");
  }
  if (need_checkpoint && a.checkpoint.empty())
    throw UsageError("this command needs --checkpoint");
  apply_overrides(rc, a.overrides);
  if (a.seed >= 0) rc.recipe.seed = static_cast<uint64_t>(a.seed);
  rc.validate();
  return rc;
}

Network restore_network(const CommonArgs& a, const RunConfig& rc) {
  Network net(rc.model, rc.recipe.seed);
  if (!a.checkpoint.empty()) load_checkpoint_into(a.checkpoint, net);
  return net;
}

double threaded_accuracy(const Network& net, const Dataset& ds, int threads) {
  if (threads <= 1) return evaluate(net, ds);
  std::vector<int64_t> correct(static_cast<size_t>(threads), 0);
  std::vector<std::thread> pool;
  size_t per = (ds.size() + static_cast<size_t>(threads) - 1) / static_cast<size_t>(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      size_t lo = static_cast<size_t>(t) * per;
      size_t hi = std::min(ds.size(), lo + per);
      if (lo >= hi) return;
      std::vector<int64_t> order;
      for (size_t i = lo; i < hi; ++i) order.push_back(static_cast<int64_t>(i));
      FwdCtx ctx;
      ctx.training = false;
      ctx.update_bn = false;
      for (size_t first = 0; first < order.size(); first += 64) {
        size_t count = std::min<size_t>(64, order.size() - first);
        Tensor batch = make_batch(ds, order, first, count, net.config().time_steps);
        std::vector<int> labels = batch_labels(ds, order, first, count);
        std::vector<int> pred = net.predict(batch, ctx);
        for (size_t i = 0; i < count; ++i)
          correct[static_cast<size_t>(t)] += pred[i] == labels[i] ? 1 : 0;
      }
    });
  }
  for (auto& th : pool) th.join();
  int64_t total_correct = 0;
  for (int64_t c : correct) total_correct += c;
  return static_cast<double>(total_correct) / static_cast<double>(ds.size());
}

int cmd_train(const CommonArgs& a) {
  RunConfig rc = resolve_config(a, /*need_config=*/true, /*need_checkpoint=*/false);
  Dataset train = load_dataset_split(rc, false);
  Dataset eval = load_dataset_split(rc, true);
  Network net(rc.model, rc.recipe.seed);
  fs::create_directories(a.out_dir);
  std::string metrics = (fs::path(a.out_dir) / "metrics.csv").string();
  LIDIFF_INFO("training: ", train.size(), " train / ", eval.size(), " eval samples, ",
              rc.recipe.epochs, " epochs");
  TrainResult res = train_loop(net, train, eval, rc.recipe, metrics);
  save_checkpoint((fs::path(a.out_dir) / "checkpoint").string(), net, rc);
  std::cout << "final_eval_acc=" << res.final_eval_acc << "\n";
  std::cout << "metrics=" << metrics << "\n";
  std::cout << "checkpoint=" << (fs::path(a.out_dir) / "checkpoint").string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& a) {
  RunConfig rc = resolve_config(a, false, /*need_checkpoint=*/true);
  Network net = restore_network(a, rc);
  Dataset eval = load_dataset_split(rc, true);
  double acc = threaded_accuracy(net, eval, a.threads);
  std::cout << "eval_acc=" << acc << "\n";
  return 0;
}

int cmd_attack(const CommonArgs& a, const std::string& kind, const std::string& eps_list,
               float step, int64_t iters, const std::string& dataset_override) {
  RunConfig rc = resolve_config(a, false, /*need_checkpoint=*/true);
  if (!dataset_override.empty()) rc.dataset = dataset_override;
  rc.validate();
  Network net = restore_network(a, rc);
  Dataset eval = load_dataset_split(rc, true);

  std::vector<AttackConfig> configs;
  std::istringstream in(eps_list);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    AttackConfig cfg;
    cfg.kind = kind;
    cfg.epsilon = std::stof(tok);
    cfg.step_size = step;
    cfg.iterations = iters;
    configs.push_back(cfg);
  }
  LIDIFF_CHECK(!configs.empty(), "attack: empty --eps list");
  auto rows = attack_sweep(net, eval, configs);
  fs::create_directories(a.out_dir);
  std::string csv = (fs::path(a.out_dir) / "attack.csv").string();
  write_attack_csv(csv, rows);
  for (const auto& r : rows)
    std::cout << r.kind << " eps=" << r.epsilon << " clean=" << r.clean_acc
              << " adv=" << r.adv_acc << "\n";
  std::cout << "csv=" << csv << "\n";
  return 0;
}

int cmd_energy(const CommonArgs& a, const std::string& unit, int64_t batch) {
  RunConfig rc = resolve_config(a, false, /*need_checkpoint=*/true);
  Network net = restore_network(a, rc);
  Dataset eval = load_dataset_split(rc, true);
  std::vector<int64_t> order;
  for (size_t i = 0; i < std::min<size_t>(eval.size(), static_cast<size_t>(batch)); ++i)
    order.push_back(static_cast<int64_t>(i));
  Tensor sample = make_batch(eval, order, 0, order.size(), rc.model.time_steps);

  Profiler prof;
  FwdCtx ctx;
  ctx.training = false;
  ctx.update_bn = false;
  ctx.profiler = &prof;
  auto p1 = net.forward_pass1(sample, ctx);
  if (!rc.model.no_fb_lidiff) net.forward_pass2(p1, ctx);
  EnergyReport report = estimate_energy(prof.layers(), rc.model.time_steps);
  std::cout << energy_table(report, unit);
  fs::create_directories(a.out_dir);
  std::string csv = (fs::path(a.out_dir) / "energy.csv").string();
  write_energy_csv(csv, report);
  std::cout << "csv=" << csv << "\n";
  return 0;
}

ModelConfig gradcheck_config() {
  ModelConfig cfg;
  cfg.time_steps = 2;
  cfg.in_channels = 1;
  cfg.img_h = 8;
  cfg.img_w = 8;
  cfg.base_channels = 8;
  cfg.depth1 = 1;
  cfg.depth2 = 1;
  cfg.depth3 = 1;
  cfg.num_classes = 2;
  return cfg;
}

int cmd_gradcheck(const CommonArgs& a, float eps, int64_t samples) {
  uint64_t seed = a.seed >= 0 ? static_cast<uint64_t>(a.seed) : 0;
  ModelConfig cfg = gradcheck_config();
  Network net(cfg, seed);
  Rng rng(name_seed("gradcheck-batch", seed));
  int64_t batch_n = 2;
  Tensor batch = Tensor::zeros({cfg.time_steps * batch_n, 1, 8, 8});
  for (int64_t i = 0; i < batch.numel(); ++i) batch.data()[i] = rng.uniform(0.0f, 1.0f);
  std::vector<int> labels;
  for (int64_t b = 0; b < batch_n; ++b)
    labels.push_back(static_cast<int>(rng.randint(0, cfg.num_classes - 1)));

  GradCheckReport rep = model_grad_check(net, batch, labels, eps, samples, seed);
  std::cout << "max_rel_err=" << rep.max_rel_err << " elements=" << rep.elements_checked
            << " worst=" << rep.worst_param << "[" << rep.worst_index << "]"
            << " tape=" << rep.worst_tape << " fd=" << rep.worst_fd << "\n";
  bool ok = rep.pass(1e-2f);
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << " (tolerance 1e-2)\n";
  return ok ? 0 : 1;
}

int cmd_export_attn(const CommonArgs& a, int64_t batch) {
  RunConfig rc = resolve_config(a, false, /*need_checkpoint=*/true);
  Network net = restore_network(a, rc);
  Dataset eval = load_dataset_split(rc, true);
  std::vector<int64_t> order;
  for (size_t i = 0; i < std::min<size_t>(eval.size(), static_cast<size_t>(batch)); ++i)
    order.push_back(static_cast<int64_t>(i));
  Tensor sample = make_batch(eval, order, 0, order.size(), rc.model.time_steps);

  AttnRecorder rec;
  FwdCtx ctx;
  ctx.training = false;
  ctx.update_bn = false;
  ctx.recorder = &rec;
  auto p1 = net.forward_pass1(sample, ctx);
  if (!rc.model.no_fb_lidiff) net.forward_pass2(p1, ctx);

  fs::create_directories(a.out_dir);
  int64_t t_steps = rc.model.time_steps;
  size_t written = 0;
  for (const auto& [name, t] : rec.records) {
    int64_t rows_per_t = t.dim(0) / t_steps;
    for (int64_t step = 0; step < t_steps; ++step) {
      Tensor slice = slice_rows(t, step * rows_per_t, (step + 1) * rows_per_t);
      std::string file =
          (fs::path(a.out_dir) / (name + ".t" + std::to_string(step) + ".ltf")).string();
      write_ltf(file, slice);
      ++written;
    }
  }
  std::cout << "wrote " << written << " attention-map tensors to " << a.out_dir << "\n";
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"lidiff: lateral-inhibition spiking transformer toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string attack_kind = "fgsm", attack_eps = "0.05", energy_unit = "mJ";
  std::string attack_dataset;
  float attack_step = 0.0f;
  int64_t attack_iters = 1;
  float gc_eps = 1e-3f;
  int64_t gc_samples = 64;
  int64_t sample_batch = 16;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config_path, "key=value config file");
    cmd->add_option("--checkpoint", common.checkpoint, "checkpoint directory");
    cmd->add_option("--out", common.out_dir, "output directory");
    cmd->add_option("--seed", common.seed, "seed override");
    cmd->add_option("--threads", common.threads, "worker threads (eval sharding)");
    cmd->add_option("--overrides", common.overrides, "config overrides k=v[,k=v...]");
  };

  CLI::App* train = app.add_subcommand("train", "train a model from a config");
  add_common(train);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  CLI::App* attack = app.add_subcommand("attack", "adversarial accuracy sweep");
  add_common(attack);
  attack->add_option("--kind", attack_kind, "fgsm or pgd");
  attack->add_option("--eps", attack_eps, "epsilon or comma list");
  attack->add_option("--step", attack_step, "pgd step size");
  attack->add_option("--iters", attack_iters, "pgd iterations");
  attack->add_option("--dataset", attack_dataset, "dataset override");
  CLI::App* energy = app.add_subcommand("energy", "theoretical energy report");
  add_common(energy);
  energy->add_option("--unit", energy_unit, "pJ, uJ or mJ");
  energy->add_option("--batch", sample_batch, "samples for firing-rate measurement");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "tiny-config full-model gradient check");
  add_common(gradcheck);
  gradcheck->add_option("--eps", gc_eps, "finite-difference step");
  gradcheck->add_option("--samples", gc_samples, "parameter elements to probe");
  CLI::App* export_attn = app.add_subcommand("export-attn", "write attention maps as LTF");
  add_common(export_attn);
  export_attn->add_option("--batch", sample_batch, "samples to push through");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(common);
    if (eval->parsed()) return cmd_eval(common);
    if (attack->parsed())
      return cmd_attack(common, attack_kind, attack_eps, attack_step, attack_iters,
                        attack_dataset);
    if (energy->parsed()) return cmd_energy(common, energy_unit, sample_batch);
    if (gradcheck->parsed()) return cmd_gradcheck(common, gc_eps, gc_samples);
    if (export_attn->parsed()) return cmd_export_attn(common, sample_batch);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace lidiff
