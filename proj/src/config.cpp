#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mtl/config.hpp"
#include "mtl/errors.hpp"

namespace mtl {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::profile_defaults(const std::string& profile) {
  RunConfig cfg;
  auto& v = cfg.values_;
  // synthetic dataset
  v["data.classes"] = "100";
  v["data.samples_per_class"] = "60";
  v["data.channels"] = "3";
  v["data.height"] = "16";
  v["data.width"] = "16";
  v["data.bumps"] = "3";
  v["data.noise_lo"] = "0.04";
  v["data.noise_hi"] = "0.30";
  v["data.jitter"] = "1";
  v["data.amplitude_wobble"] = "0.15";
  // backbone
  v["arch.blocks"] = "4";
  v["arch.filters"] = "16";
  v["arch.kernel"] = "3";
  v["arch.mean_pool"] = "false";
  // pre-training
  v["pretrain.lr_init"] = "0.001";
  v["pretrain.lr_period"] = "5000";
  v["pretrain.lr_floor"] = "0.0001";
  v["pretrain.batch_size"] = "64";
  v["pretrain.dropout_keep"] = "0.9";
  // meta-training
  v["meta.base_lr"] = "0.01";
  v["meta.lr_init"] = "0.001";
  v["meta.lr_period"] = "1000";
  v["meta.lr_floor"] = "0.0001";
  v["meta.batch"] = "2";
  v["meta.second_order"] = "false";
  v["meta.way"] = "5";
  v["meta.shot"] = "1";
  v["meta.query"] = "15";
  // hard-task curriculum
  v["ht.enabled"] = "true";
  v["ht.cadence"] = "10";
  v["ht.hard_tasks"] = "10";
  v["ht.method"] = "fresh_samples";
  // training drive
  v["train.snapshot_every"] = "500";

  if (profile == "quickstart") {
    v["pretrain.iterations"] = "2000";
    v["meta.inner_epochs"] = "5";
    v["train.total_tasks"] = "2000";
    v["train.val_tasks"] = "100";
    v["test.tasks"] = "100";
  } else if (profile == "paper") {
    v["pretrain.iterations"] = "10000";
    v["meta.inner_epochs"] = "20";
    v["train.total_tasks"] = "12000";  // 6000 two-task meta-batches
    v["train.val_tasks"] = "600";
    v["test.tasks"] = "600";
  } else {
    throw ConfigError("unknown profile '" + profile + "' (quickstart | paper)");
  }
  v["profile"] = profile;
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "profile") {
    // switching profiles re-bases the defaults; explicit keys set afterwards
    // still win.
    *this = profile_defaults(value);
    return;
  }
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config '" + path + "' line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config '" + path + "' line " + std::to_string(lineno) +
                        ": empty key or value");
    pairs.emplace_back(key, value);
  }
  // A profile switch re-bases every default, so it is applied before the
  // file's other keys regardless of where the line sits.
  for (const auto& [key, value] : pairs)
    if (key == "profile") set(key, value);
  for (const auto& [key, value] : pairs)
    if (key != "profile") set(key, value);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::get_i64(const std::string& key) const {
  const std::string& s = get(key);
  try {
    std::size_t used = 0;
    const long long n = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not an integer");
  }
}

double RunConfig::get_f64(const std::string& key) const {
  const std::string& s = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
}

SyntheticConfig RunConfig::data() const {
  SyntheticConfig d;
  d.num_classes = static_cast<int>(get_i64("data.classes"));
  d.samples_per_class = static_cast<int>(get_i64("data.samples_per_class"));
  d.channels = get_i64("data.channels");
  d.height = get_i64("data.height");
  d.width = get_i64("data.width");
  d.bumps = static_cast<int>(get_i64("data.bumps"));
  d.noise_lo = get_f64("data.noise_lo");
  d.noise_hi = get_f64("data.noise_hi");
  d.jitter = static_cast<int>(get_i64("data.jitter"));
  d.amplitude_wobble = get_f64("data.amplitude_wobble");
  return d;
}

ExtractorConfig RunConfig::arch() const {
  ExtractorConfig a;
  a.num_blocks = static_cast<int>(get_i64("arch.blocks"));
  a.filters = get_i64("arch.filters");
  a.kernel = get_i64("arch.kernel");
  a.in_channels = get_i64("data.channels");
  a.input_hw = get_i64("data.height");
  if (get_i64("data.height") != get_i64("data.width"))
    throw ConfigError("the backbone expects square images (data.height == data.width)");
  // pool every block while the spatial size is even and > 1
  a.pool_flags.assign(static_cast<std::size_t>(a.num_blocks), 0);
  std::int64_t hw = a.input_hw;
  for (int b = 0; b < a.num_blocks; ++b) {
    if (hw >= 2 && hw % 2 == 0) {
      a.pool_flags[static_cast<std::size_t>(b)] = 1;
      hw /= 2;
    }
  }
  a.mean_pool = get_bool("arch.mean_pool");
  return a;
}

PretrainConfig RunConfig::pretrain_cfg() const {
  PretrainConfig p;
  p.arch = arch();
  p.lr_init = get_f64("pretrain.lr_init");
  p.lr_period = get_i64("pretrain.lr_period");
  p.lr_floor = get_f64("pretrain.lr_floor");
  p.batch_size = static_cast<int>(get_i64("pretrain.batch_size"));
  p.dropout_keep = get_f64("pretrain.dropout_keep");
  p.max_iterations = get_i64("pretrain.iterations");
  return p;
}

MetaConfig RunConfig::meta_cfg() const {
  MetaConfig m;
  m.base_lr = get_f64("meta.base_lr");
  m.inner_epochs = static_cast<int>(get_i64("meta.inner_epochs"));
  m.meta_lr_init = get_f64("meta.lr_init");
  m.meta_lr_period = get_i64("meta.lr_period");
  m.meta_lr_floor = get_f64("meta.lr_floor");
  m.meta_batch = static_cast<int>(get_i64("meta.batch"));
  m.second_order = get_bool("meta.second_order");
  m.way = static_cast<int>(get_i64("meta.way"));
  m.shot = static_cast<int>(get_i64("meta.shot"));
  m.query = static_cast<int>(get_i64("meta.query"));
  return m;
}

CurriculumConfig RunConfig::curriculum_cfg() const {
  CurriculumConfig c;
  c.enabled = get_bool("ht.enabled");
  c.cadence = static_cast<int>(get_i64("ht.cadence"));
  c.hard_tasks = static_cast<int>(get_i64("ht.hard_tasks"));
  const std::string& m = get("ht.method");
  if (m == "fresh_samples")
    c.method = CurriculumConfig::Resample::FreshSamples;
  else if (m == "reuse_samples")
    c.method = CurriculumConfig::Resample::ReuseSamples;
  else
    throw ConfigError("ht.method must be fresh_samples or reuse_samples, got '" + m + "'");
  return c;
}

MetaTrainConfig RunConfig::trainer_cfg() const {
  MetaTrainConfig t;
  t.meta = meta_cfg();
  t.curriculum = curriculum_cfg();
  t.total_tasks = get_i64("train.total_tasks");
  t.snapshot_every = get_i64("train.snapshot_every");
  t.val_tasks = static_cast<int>(get_i64("train.val_tasks"));
  return t;
}

int RunConfig::test_tasks() const { return static_cast<int>(get_i64("test.tasks")); }

std::string RunConfig::profile() const { return get("profile"); }

}  // namespace mtl
