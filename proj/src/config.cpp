#include "lidiff/config.hpp"

#include <fstream>
#include <sstream>

namespace lidiff {

void RunConfig::validate() const {
  model.validate();
  recipe.validate();
  LIDIFF_CHECK(dataset == "blobs" || dataset == "bars" || dataset == "cifar10",
               "config: unknown dataset '", dataset, "'");
  LIDIFF_CHECK(train_samples >= 2 && eval_samples >= 1, "config: dataset sizes too small");
}

std::vector<std::string> config_keys() {
  return {"time_steps",     "in_channels",     "img_h",
          "img_w",          "base_channels",   "depth1",
          "depth2",         "depth3",          "heads1",
          "heads2",         "heads3",          "mlp_ratio",
          "num_classes",    "tau",             "u_th",
          "u_reset",        "surrogate_width", "no_ff_lidiff",
          "no_fb_lidiff",   "cross_block_sharing", "residual_style",
          "alpha",          "epochs",          "batch_size",
          "base_lr",        "weight_decay",    "schedule",
          "warmup_epochs",  "seed",            "grad_clip",
          "augment",        "dataset",         "data_path",
          "train_samples",  "eval_samples"};
}

namespace {

int64_t to_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    LIDIFF_CHECK(pos == v.size(), "");
    return r;
  } catch (...) {
    throw UsageError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

float to_f32(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    float r = std::stof(v, &pos);
    LIDIFF_CHECK(pos == v.size(), "");
    return r;
  } catch (...) {
    throw UsageError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void set_config_key(RunConfig& rc, const std::string& key, const std::string& value) {
  ModelConfig& m = rc.model;
  TrainRecipe& r = rc.recipe;
  if (key == "time_steps") m.time_steps = to_i64(key, value);
  else if (key == "in_channels") m.in_channels = to_i64(key, value);
  else if (key == "img_h") m.img_h = to_i64(key, value);
  else if (key == "img_w") m.img_w = to_i64(key, value);
  else if (key == "base_channels") m.base_channels = to_i64(key, value);
  else if (key == "depth1") m.depth1 = to_i64(key, value);
  else if (key == "depth2") m.depth2 = to_i64(key, value);
  else if (key == "depth3") m.depth3 = to_i64(key, value);
  else if (key == "heads1") m.heads1 = static_cast<int>(to_i64(key, value));
  else if (key == "heads2") m.heads2 = static_cast<int>(to_i64(key, value));
  else if (key == "heads3") m.heads3 = static_cast<int>(to_i64(key, value));
  else if (key == "mlp_ratio") m.mlp_ratio = to_i64(key, value);
  else if (key == "num_classes") m.num_classes = to_i64(key, value);
  else if (key == "tau") m.tau = to_f32(key, value);
  else if (key == "u_th") m.u_th = to_f32(key, value);
  else if (key == "u_reset") m.u_reset = to_f32(key, value);
  else if (key == "surrogate_width") m.surrogate_width = to_f32(key, value);
  else if (key == "no_ff_lidiff") m.no_ff_lidiff = to_bool(key, value);
  else if (key == "no_fb_lidiff") m.no_fb_lidiff = to_bool(key, value);
  else if (key == "cross_block_sharing") m.cross_block_sharing = to_bool(key, value);
  else if (key == "residual_style") m.residual = residual_style_from_string(value);
  else if (key == "alpha") {
    m.alpha = to_f32(key, value);
    r.alpha = m.alpha;
  } else if (key == "epochs") r.epochs = to_i64(key, value);
  else if (key == "batch_size") r.batch_size = to_i64(key, value);
  else if (key == "base_lr") r.base_lr = to_f32(key, value);
  else if (key == "weight_decay") r.weight_decay = to_f32(key, value);
  else if (key == "schedule") r.schedule = value;
  else if (key == "warmup_epochs") r.warmup_epochs = to_i64(key, value);
  else if (key == "seed") r.seed = static_cast<uint64_t>(to_i64(key, value));
  else if (key == "grad_clip") r.grad_clip = to_f32(key, value);
  else if (key == "augment") r.augment = to_bool(key, value);
  else if (key == "dataset") rc.dataset = value;
  else if (key == "data_path") rc.data_path = value;
  else if (key == "train_samples") rc.train_samples = to_i64(key, value);
  else if (key == "eval_samples") rc.eval_samples = to_i64(key, value);
  else {
    std::ostringstream os;
    os << "config: unknown key '" << key << "'. Valid keys:";
    for (const auto& k : config_keys()) os << " " << k;
    throw UsageError(os.str());
  }
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig rc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: line " + std::to_string(lineno) + " is not key=value: " + s);
    set_config_key(rc, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return rc;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw UsageError("config file not found: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse_config_text(os.str());
}

void apply_overrides(RunConfig& rc, const std::string& overrides) {
  if (overrides.empty()) return;
  std::istringstream in(overrides);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::string s = trim(item);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw UsageError("override '" + s + "' is not key=value");
    set_config_key(rc, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

std::string serialize_config(const RunConfig& rc) {
  const ModelConfig& m = rc.model;
  const TrainRecipe& r = rc.recipe;
  std::ostringstream os;
  os << "time_steps=" << m.time_steps << "\n";
  os << "in_channels=" << m.in_channels << "\n";
  os << "img_h=" << m.img_h << "\n";
  os << "img_w=" << m.img_w << "\n";
  os << "base_channels=" << m.base_channels << "\n";
  os << "depth1=" << m.depth1 << "\n";
  os << "depth2=" << m.depth2 << "\n";
  os << "depth3=" << m.depth3 << "\n";
  os << "heads1=" << m.heads1 << "\n";
  os << "heads2=" << m.heads2 << "\n";
  os << "heads3=" << m.heads3 << "\n";
  os << "mlp_ratio=" << m.mlp_ratio << "\n";
  os << "num_classes=" << m.num_classes << "\n";
  os << "tau=" << m.tau << "\n";
  os << "u_th=" << m.u_th << "\n";
  os << "u_reset=" << m.u_reset << "\n";
  os << "surrogate_width=" << m.surrogate_width << "\n";
  os << "no_ff_lidiff=" << (m.no_ff_lidiff ? "true" : "false") << "\n";
  os << "no_fb_lidiff=" << (m.no_fb_lidiff ? "true" : "false") << "\n";
  os << "cross_block_sharing=" << (m.cross_block_sharing ? "true" : "false") << "\n";
  os << "residual_style=" << residual_style_name(m.residual) << "\n";
  os << "alpha=" << m.alpha << "\n";
  os << "epochs=" << r.epochs << "\n";
  os << "batch_size=" << r.batch_size << "\n";
  os << "base_lr=" << r.base_lr << "\n";
  os << "weight_decay=" << r.weight_decay << "\n";
  os << "schedule=" << r.schedule << "\n";
  os << "warmup_epochs=" << r.warmup_epochs << "\n";
  os << "seed=" << r.seed << "\n";
  os << "grad_clip=" << r.grad_clip << "\n";
  os << "augment=" << (r.augment ? "true" : "false") << "\n";
  os << "dataset=" << rc.dataset << "\n";
  if (!rc.data_path.empty()) os << "data_path=" << rc.data_path << "\n";
  os << "train_samples=" << rc.train_samples << "\n";
  os << "eval_samples=" << rc.eval_samples << "\n";
  return os.str();
}

}  // namespace lidiff
