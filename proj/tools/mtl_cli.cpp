// Command-line surface for the few-shot meta-transfer engine.
//
// Subcommands: gen-data, pretrain, meta-train, meta-test, bench,
// eval-convergence, replay. Every run writes a JSON manifest holding the
// resolved configuration, content hashes of inputs/outputs, timings, and the
// exact argument list `replay` needs to reproduce it byte for byte.
//
// Configuration precedence, lowest to highest: profile defaults (--profile),
// config file (--config), individual overrides (--set key=value), then the
// subcommand's dedicated flags (--seed, --ht, ...). MTL_THREADS caps the
// worker count of any --threads request.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mtl/checkpoint.hpp"
#include "mtl/config.hpp"
#include "mtl/errors.hpp"
#include "mtl/manifest.hpp"
#include "mtl/meta.hpp"
#include "mtl/pretrain.hpp"
#include "mtl/trainer.hpp"

namespace {

using Clock = std::chrono::steady_clock;
using FlagList = std::vector<std::pair<std::string, std::string>>;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int run_cli(const std::vector<std::string>& args);  // forward (replay recurses)

// ---- shared option plumbing -------------------------------------------------------

struct ConfigArgs {
  std::string profile = "quickstart";
  std::string config_file;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--profile", args.profile, "Config profile: quickstart | paper")
      ->capture_default_str();
  cmd->add_option("--config", args.config_file, "Flat key = value config file");
  cmd->add_option("--set", args.sets, "Override one config key, e.g. --set meta.shot=5")
      ->expected(-1);
}

mtl::RunConfig resolve_config(const ConfigArgs& args) {
  mtl::RunConfig cfg = mtl::RunConfig::profile_defaults(args.profile);
  if (!args.config_file.empty()) cfg.apply_file(args.config_file);
  // profile overrides re-base the defaults, so honor them before other keys
  auto split_kv = [](const std::string& kv) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw mtl::ConfigError("--set expects key=value, got '" + kv + "'");
    return std::pair<std::string, std::string>{kv.substr(0, eq), kv.substr(eq + 1)};
  };
  for (const std::string& kv : args.sets) {
    const auto [k, v] = split_kv(kv);
    if (k == "profile") cfg.set(k, v);
  }
  for (const std::string& kv : args.sets) {
    const auto [k, v] = split_kv(kv);
    if (k != "profile") cfg.set(k, v);
  }
  return cfg;
}

// The replay argument list pins the whole resolved configuration, so a replay
// needs neither the profile defaults nor the original config file.
void record_config(FlagList& flags, const mtl::RunConfig& cfg) {
  flags.emplace_back("--profile", cfg.profile());
  for (const auto& [key, value] : cfg.resolved())
    if (key != "profile") flags.emplace_back("--set", key + "=" + value);
}

int effective_threads(int requested) {
  if (requested < 1) throw mtl::ConfigError("--threads must be >= 1");
  if (const char* env = std::getenv("MTL_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1)
      throw mtl::ConfigError(std::string("MTL_THREADS must be a positive integer, got '") +
                             env + "'");
    if (cap < requested) return static_cast<int>(cap);
  }
  return requested;
}

// The dataset file, not the config, is authoritative for its own geometry;
// echo its dimensions back so the derived architecture and the manifest agree
// with the data actually used.
void sync_data_keys(mtl::RunConfig& cfg, const mtl::Dataset& ds) {
  cfg.set("data.classes", std::to_string(ds.num_classes()));
  cfg.set("data.channels", std::to_string(ds.channels()));
  cfg.set("data.height", std::to_string(ds.height()));
  cfg.set("data.width", std::to_string(ds.width()));
}

// Meta-test episodes come from a stream derived from the base seed, so every
// evaluation with the same seed scores the same task sequence.
mtl::EvalSummary test_model(const mtl::Dataset& ds, const mtl::MetaModel& model,
                            const mtl::MetaConfig& meta, int tasks, std::uint64_t seed) {
  mtl::Rng rng(mtl::Rng::derive_seed(seed, "meta_test_tasks", 0));
  return mtl::meta_test(ds, mtl::MetaSplit::Test, model, meta, tasks, rng);
}

mtl::EvalSummary test_baseline(const mtl::Dataset& ds, const mtl::FeatureExtractor& ext,
                               const mtl::VariantSpec& variant, const mtl::MetaConfig& meta,
                               int tasks, std::uint64_t seed) {
  mtl::Rng rng(mtl::Rng::derive_seed(seed, "meta_test_tasks", 0));
  return mtl::evaluate_baseline(ds, mtl::MetaSplit::Test, ext, variant, meta, tasks, rng);
}

// ---- gen-data ---------------------------------------------------------------------

struct GenDataArgs {
  ConfigArgs config;
  std::string out;
  std::uint64_t seed = 1;
  std::int64_t classes = -1;  // -1: take from config
  std::int64_t samples = -1;
};

int cmd_gen_data(const GenDataArgs& a) {
  mtl::RunConfig cfg = resolve_config(a.config);
  if (a.classes >= 0) cfg.set("data.classes", std::to_string(a.classes));
  if (a.samples >= 0) cfg.set("data.samples_per_class", std::to_string(a.samples));

  const auto start = Clock::now();
  mtl::Rng rng(a.seed);
  const mtl::Dataset ds = mtl::Dataset::generate_synthetic(cfg.data(), rng);
  ds.save(a.out);
  const double gen_sec = seconds_since(start);

  FlagList flags;
  flags.emplace_back("--out", a.out);
  flags.emplace_back("--seed", std::to_string(a.seed));
  record_config(flags, cfg);
  mtl::RunManifest manifest("gen-data", flags);
  manifest.set_config(cfg);
  manifest.add_output("dataset", a.out);
  manifest.add_output("splits", a.out + ".splits");
  manifest.add_timing("generate", gen_sec);
  manifest.add_summary("num_classes", static_cast<double>(ds.num_classes()));
  manifest.add_summary("num_samples", static_cast<double>(ds.num_samples()));
  manifest.save(a.out + ".manifest.json");

  std::cout << "wrote " << a.out << ": " << ds.num_classes() << " classes, "
            << ds.num_samples() << " samples ("
            << ds.classes(mtl::MetaSplit::Train).size() << "/"
            << ds.classes(mtl::MetaSplit::Val).size() << "/"
            << ds.classes(mtl::MetaSplit::Test).size() << " train/val/test)\n";
  return 0;
}

// ---- pretrain ---------------------------------------------------------------------

struct PretrainArgs {
  ConfigArgs config;
  std::string data, out, metrics;
  std::uint64_t seed = 1;
};

int cmd_pretrain(const PretrainArgs& a) {
  mtl::RunConfig cfg = resolve_config(a.config);
  const std::string metrics = a.metrics.empty() ? a.out + ".curve.csv" : a.metrics;

  const mtl::Dataset ds = mtl::Dataset::load(a.data);
  sync_data_keys(cfg, ds);
  const auto start = Clock::now();
  mtl::Rng rng(a.seed);
  const mtl::PretrainedModel model = mtl::pretrain(ds, cfg.pretrain_cfg(), rng);
  const double train_sec = seconds_since(start);
  mtl::save_pretrained(model, a.out);
  mtl::write_pretrain_csv(model.curve, metrics);

  FlagList flags;
  flags.emplace_back("--data", a.data);
  flags.emplace_back("--out", a.out);
  flags.emplace_back("--metrics", metrics);
  flags.emplace_back("--seed", std::to_string(a.seed));
  record_config(flags, cfg);
  mtl::RunManifest manifest("pretrain", flags);
  manifest.set_config(cfg);
  manifest.add_input("dataset", a.data);
  manifest.add_output("checkpoint", a.out);
  manifest.add_output("metrics", metrics);
  manifest.add_timing("pretrain", train_sec);
  if (!model.curve.empty()) {
    manifest.add_summary("final_loss", model.curve.back().loss);
    manifest.add_summary("final_acc", model.curve.back().acc);
  }
  manifest.save(a.out + ".manifest.json");

  std::cout << "pretrained " << cfg.get("pretrain.iterations") << " iterations in "
            << train_sec << "s";
  if (!model.curve.empty())
    std::cout << "; final batch loss " << model.curve.back().loss << ", acc "
              << model.curve.back().acc;
  std::cout << "\nwrote " << a.out << " and " << metrics << "\n";
  return 0;
}

// ---- meta-train -------------------------------------------------------------------

struct MetaTrainArgs {
  ConfigArgs config;
  std::string data, pretrained, out, metrics;
  std::string variant = "ss_full";
  std::string ht = "on";
  std::uint64_t seed = 1;
  int threads = 1;
};

int cmd_meta_train(const MetaTrainArgs& a) {
  mtl::RunConfig cfg = resolve_config(a.config);
  cfg.set("ht.enabled", a.ht == "on" ? "true" : "false");
  const std::string metrics = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
  const mtl::VariantSpec variant = mtl::VariantSpec::parse(a.variant);
  const int threads = effective_threads(a.threads);

  const mtl::Dataset ds = mtl::Dataset::load(a.data);
  sync_data_keys(cfg, ds);
  const mtl::PretrainedModel pre = mtl::load_pretrained(a.pretrained);

  mtl::MetaTrainConfig tcfg = cfg.trainer_cfg();
  tcfg.threads = threads;
  const auto start = Clock::now();
  const mtl::MetaTrainResult result =
      mtl::run_meta_training(ds, pre.extractor, variant, tcfg, a.seed, &std::cout);
  const double train_sec = seconds_since(start);

  // the checkpoint that goes to meta-test: highest validation accuracy
  const mtl::SnapshotRecord& best =
      result.snapshots[static_cast<std::size_t>(result.best_snapshot)];
  best.model.save(a.out);
  mtl::write_meta_csv(result.metrics, metrics);

  FlagList flags;
  flags.emplace_back("--data", a.data);
  flags.emplace_back("--pretrained", a.pretrained);
  flags.emplace_back("--variant", a.variant);
  flags.emplace_back("--ht", a.ht);
  flags.emplace_back("--out", a.out);
  flags.emplace_back("--metrics", metrics);
  flags.emplace_back("--seed", std::to_string(a.seed));
  flags.emplace_back("--threads", std::to_string(threads));
  record_config(flags, cfg);
  mtl::RunManifest manifest("meta-train", flags);
  manifest.set_config(cfg);
  manifest.add_input("dataset", a.data);
  manifest.add_input("pretrained", a.pretrained);
  manifest.add_output("checkpoint", a.out);
  manifest.add_output("metrics", metrics);
  manifest.add_timing("meta_train", train_sec);
  manifest.add_summary("best_val_acc", best.val_acc);
  manifest.add_summary("best_snapshot_tasks", static_cast<double>(best.task_idx));
  manifest.add_summary("final_val_acc", result.snapshots.back().val_acc);
  manifest.add_summary("hard_phases", static_cast<double>(result.hard_phases.size()));
  manifest.add_summary_text("variant", a.variant);
  manifest.save(a.out + ".manifest.json");

  std::cout << "meta-trained " << a.variant << " (ht " << a.ht << ") over "
            << result.metrics.size() << " tasks in " << train_sec << "s; best val acc "
            << best.val_acc << " at task " << best.task_idx << "\nwrote " << a.out << " and "
            << metrics << "\n";
  return 0;
}

// ---- meta-test --------------------------------------------------------------------

struct MetaTestArgs {
  ConfigArgs config;
  std::string ckpt, data, metrics;
  int tasks = -1;  // -1: take from config
  std::uint64_t seed = 1;
};

int cmd_meta_test(const MetaTestArgs& a) {
  mtl::RunConfig cfg = resolve_config(a.config);
  if (a.tasks >= 0) cfg.set("test.tasks", std::to_string(a.tasks));
  const int tasks = cfg.test_tasks();

  const mtl::Dataset ds = mtl::Dataset::load(a.data);
  sync_data_keys(cfg, ds);
  const mtl::MetaModel model = mtl::MetaModel::load(a.ckpt);
  const auto start = Clock::now();
  const mtl::EvalSummary summary = test_model(ds, model, cfg.meta_cfg(), tasks, a.seed);
  const double test_sec = seconds_since(start);

  FlagList flags;
  flags.emplace_back("--ckpt", a.ckpt);
  flags.emplace_back("--data", a.data);
  flags.emplace_back("--tasks", std::to_string(tasks));
  flags.emplace_back("--seed", std::to_string(a.seed));
  if (!a.metrics.empty()) flags.emplace_back("--metrics", a.metrics);
  record_config(flags, cfg);
  mtl::RunManifest manifest("meta-test", flags);
  manifest.set_config(cfg);
  manifest.add_input("checkpoint", a.ckpt);
  manifest.add_input("dataset", a.data);
  if (!a.metrics.empty()) {
    const std::string tmp = a.metrics + ".tmp";
    {
      std::ofstream os(tmp);
      if (!os) throw mtl::IoError("cannot open '" + tmp + "' for writing");
      os << "task,acc\n";
      char buf[64];
      for (std::size_t i = 0; i < summary.per_task_acc.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, summary.per_task_acc[i]);
        os << buf;
      }
      if (!os) throw mtl::IoError("write to '" + tmp + "' failed");
    }
    if (std::rename(tmp.c_str(), a.metrics.c_str()) != 0)
      throw mtl::IoError("cannot move '" + tmp + "' to '" + a.metrics + "'");
    manifest.add_output("metrics", a.metrics);
  }
  manifest.add_timing("meta_test", test_sec);
  manifest.add_summary("mean_acc", summary.mean_acc);
  manifest.add_summary("ci95", summary.ci95);
  manifest.add_summary("tasks", static_cast<double>(summary.tasks));
  manifest.save(a.ckpt + ".test.manifest.json");

  char line[160];
  std::snprintf(line, sizeof(line), "accuracy %.4f +/- %.4f over %d tasks\n",
                summary.mean_acc, summary.ci95, summary.tasks);
  std::cout << line;
  return 0;
}

// ---- bench ------------------------------------------------------------------------

struct BenchArgs {
  ConfigArgs config;
  std::string data, pretrained, out = "bench.csv";
  std::string variants = "update_head,ft_full,ss_full";
  std::string ht = "both";  // both | on | off (meta-trained variants only)
  int tasks = 100;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct BenchRow {
  std::string variant, ht;
  double acc, ci;
};

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_bench(const BenchArgs& a) {
  mtl::RunConfig cfg = resolve_config(a.config);
  const int threads = effective_threads(a.threads);
  if (a.ht != "both" && a.ht != "on" && a.ht != "off")
    throw mtl::ConfigError("--ht must be both, on, or off; got '" + a.ht + "'");

  const mtl::Dataset ds = mtl::Dataset::load(a.data);
  sync_data_keys(cfg, ds);
  const mtl::PretrainedModel pre = mtl::load_pretrained(a.pretrained);
  const mtl::MetaConfig meta = cfg.meta_cfg();

  std::vector<BenchRow> rows;
  const auto start = Clock::now();
  for (const std::string& name : split_csv_list(a.variants)) {
    const mtl::VariantSpec variant = mtl::VariantSpec::parse(name);
    if (variant.baseline != mtl::Baseline::None) {
      const mtl::EvalSummary s =
          test_baseline(ds, pre.extractor, variant, meta, a.tasks, a.seed);
      rows.push_back({name, "off", s.mean_acc, s.ci95});
      std::cout << "bench " << name << " (no meta-training): " << s.mean_acc << "\n";
      continue;
    }
    std::vector<bool> ht_modes;
    if (a.ht == "both")
      ht_modes = {false, true};
    else
      ht_modes = {a.ht == "on"};
    for (bool ht : ht_modes) {
      mtl::MetaTrainConfig tcfg = cfg.trainer_cfg();
      tcfg.curriculum.enabled = ht;
      tcfg.threads = threads;
      const mtl::MetaTrainResult result =
          mtl::run_meta_training(ds, pre.extractor, variant, tcfg, a.seed, nullptr);
      const mtl::SnapshotRecord& best =
          result.snapshots[static_cast<std::size_t>(result.best_snapshot)];
      const mtl::EvalSummary s = test_model(ds, best.model, meta, a.tasks, a.seed);
      rows.push_back({name, ht ? "on" : "off", s.mean_acc, s.ci95});
      std::cout << "bench " << name << " (ht " << (ht ? "on" : "off")
                << "): " << s.mean_acc << "\n";
    }
  }
  const double bench_sec = seconds_since(start);

  // CSV
  const std::string tmp = a.out + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw mtl::IoError("cannot open '" + tmp + "' for writing");
    os << "variant,ht,1shot_acc,ci\n";
    char buf[160];
    for (const BenchRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g\n", r.variant.c_str(), r.ht.c_str(),
                    r.acc, r.ci);
      os << buf;
    }
    if (!os) throw mtl::IoError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), a.out.c_str()) != 0)
    throw mtl::IoError("cannot move '" + tmp + "' to '" + a.out + "'");

  // aligned table
  std::cout << "\n  variant      ht    acc      ci\n  ------------ ----  -------  ------\n";
  char buf[160];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "  %-12s %-4s  %6.4f   %6.4f\n", r.variant.c_str(),
                  r.ht.c_str(), r.acc, r.ci);
    std::cout << buf;
  }

  FlagList flags;
  flags.emplace_back("--data", a.data);
  flags.emplace_back("--pretrained", a.pretrained);
  flags.emplace_back("--variants", a.variants);
  flags.emplace_back("--ht", a.ht);
  flags.emplace_back("--tasks", std::to_string(a.tasks));
  flags.emplace_back("--out", a.out);
  flags.emplace_back("--seed", std::to_string(a.seed));
  flags.emplace_back("--threads", std::to_string(threads));
  record_config(flags, cfg);
  mtl::RunManifest manifest("bench", flags);
  manifest.set_config(cfg);
  manifest.add_input("dataset", a.data);
  manifest.add_input("pretrained", a.pretrained);
  manifest.add_output("table", a.out);
  manifest.add_timing("bench", bench_sec);
  for (const BenchRow& r : rows)
    manifest.add_summary(r.variant + "_ht_" + r.ht + "_acc", r.acc);
  manifest.save(a.out + ".manifest.json");
  return 0;
}

// ---- eval-convergence -------------------------------------------------------------

struct ConvergenceArgs {
  ConfigArgs config;
  std::string data, pretrained, out = "convergence.csv";
  std::string variants = "ft_full,ss_full";
  std::string ht = "both";
  std::uint64_t seed = 1;
  int threads = 1;
};

int cmd_eval_convergence(const ConvergenceArgs& a) {
  mtl::RunConfig cfg = resolve_config(a.config);
  const int threads = effective_threads(a.threads);
  if (a.ht != "both" && a.ht != "on" && a.ht != "off")
    throw mtl::ConfigError("--ht must be both, on, or off; got '" + a.ht + "'");

  const mtl::Dataset ds = mtl::Dataset::load(a.data);
  sync_data_keys(cfg, ds);
  const mtl::PretrainedModel pre = mtl::load_pretrained(a.pretrained);

  struct CurveRow {
    std::int64_t iteration;
    std::string variant, ht;
    double val_acc;
  };
  std::vector<CurveRow> rows;
  const auto start = Clock::now();
  for (const std::string& name : split_csv_list(a.variants)) {
    const mtl::VariantSpec variant = mtl::VariantSpec::parse(name);
    std::vector<bool> ht_modes;
    if (a.ht == "both")
      ht_modes = {false, true};
    else
      ht_modes = {a.ht == "on"};
    for (bool ht : ht_modes) {
      mtl::MetaTrainConfig tcfg = cfg.trainer_cfg();
      tcfg.curriculum.enabled = ht;
      tcfg.threads = threads;
      const mtl::MetaTrainResult result =
          mtl::run_meta_training(ds, pre.extractor, variant, tcfg, a.seed, nullptr);
      for (const mtl::SnapshotRecord& snap : result.snapshots)
        rows.push_back({snap.task_idx, name, ht ? "on" : "off", snap.val_acc});
      std::cout << "eval-convergence " << name << " (ht " << (ht ? "on" : "off") << "): "
                << result.snapshots.size() << " checkpoints\n";
    }
  }
  const double total_sec = seconds_since(start);

  const std::string tmp = a.out + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw mtl::IoError("cannot open '" + tmp + "' for writing");
    os << "iteration,variant,ht,val_acc\n";
    char buf[160];
    for (const CurveRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%lld,%s,%s,%.17g\n",
                    static_cast<long long>(r.iteration), r.variant.c_str(), r.ht.c_str(),
                    r.val_acc);
      os << buf;
    }
    if (!os) throw mtl::IoError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), a.out.c_str()) != 0)
    throw mtl::IoError("cannot move '" + tmp + "' to '" + a.out + "'");

  FlagList flags;
  flags.emplace_back("--data", a.data);
  flags.emplace_back("--pretrained", a.pretrained);
  flags.emplace_back("--variants", a.variants);
  flags.emplace_back("--ht", a.ht);
  flags.emplace_back("--out", a.out);
  flags.emplace_back("--seed", std::to_string(a.seed));
  flags.emplace_back("--threads", std::to_string(threads));
  record_config(flags, cfg);
  mtl::RunManifest manifest("eval-convergence", flags);
  manifest.set_config(cfg);
  manifest.add_input("dataset", a.data);
  manifest.add_input("pretrained", a.pretrained);
  manifest.add_output("curve", a.out);
  manifest.add_timing("eval_convergence", total_sec);
  manifest.save(a.out + ".manifest.json");

  std::cout << "wrote " << a.out << " (" << rows.size() << " rows) in " << total_sec << "s\n";
  return 0;
}

// ---- replay -----------------------------------------------------------------------

int cmd_replay(const std::string& manifest_path) {
  const mtl::RunManifest manifest = mtl::RunManifest::load(manifest_path);
  if (manifest.subcommand() == "replay")
    throw mtl::ConfigError("refusing to replay a replay manifest");
  std::vector<std::string> args;
  args.push_back(manifest.subcommand());
  for (const auto& [flag, value] : manifest.flags()) {
    args.push_back(flag);
    args.push_back(value);
  }
  std::cout << "replaying " << manifest.subcommand() << " from " << manifest_path << "\n";
  return run_cli(args);
}

// ---- driver -----------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Few-shot meta-transfer engine: pre-train a convolutional backbone, "
               "meta-train scale/shift modulation with a hard-task curriculum, and "
               "benchmark the variant ladder on synthetic episodes.\n"
               "Config precedence: --profile defaults < --config file < --set overrides "
               "< dedicated flags."};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset file");
  gen_cmd->add_option("--out", gen.out, "Output dataset path (.mtld)")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--classes", gen.classes, "Class count (overrides data.classes)");
  gen_cmd->add_option("--samples", gen.samples,
                      "Samples per class (overrides data.samples_per_class)");
  add_config_options(gen_cmd, gen.config);

  PretrainArgs pre;
  CLI::App* pre_cmd =
      app.add_subcommand("pretrain", "Train the backbone on all meta-train classes");
  pre_cmd->add_option("--data", pre.data, "Dataset path")->required();
  pre_cmd->add_option("--out", pre.out, "Output checkpoint path")->required();
  pre_cmd->add_option("--metrics", pre.metrics, "Curve CSV path (default <out>.curve.csv)");
  pre_cmd->add_option("--seed", pre.seed, "Training seed")->capture_default_str();
  add_config_options(pre_cmd, pre.config);

  MetaTrainArgs mt;
  CLI::App* mt_cmd = app.add_subcommand(
      "meta-train", "Meta-train a variant on episodes from the meta-train split");
  mt_cmd->add_option("--data", mt.data, "Dataset path")->required();
  mt_cmd->add_option("--pretrained", mt.pretrained, "Pretrained backbone checkpoint")
      ->required();
  mt_cmd->add_option("--variant", mt.variant,
                     "ss_full|ss_b4|ss_b34|ft_full|ft_b4|ft_b34|ft_head")
      ->capture_default_str();
  mt_cmd->add_option("--ht", mt.ht, "Hard-task curriculum: on | off")->capture_default_str();
  mt_cmd->add_option("--out", mt.out, "Output checkpoint (best validation snapshot)")
      ->required();
  mt_cmd->add_option("--metrics", mt.metrics, "Metrics CSV path (default <out>.metrics.csv)");
  mt_cmd->add_option("--seed", mt.seed, "Training seed")->capture_default_str();
  mt_cmd->add_option("--threads", mt.threads, "Meta-batch workers (capped by MTL_THREADS)")
      ->capture_default_str();
  add_config_options(mt_cmd, mt.config);

  MetaTestArgs mtest;
  CLI::App* mtest_cmd =
      app.add_subcommand("meta-test", "Evaluate a meta-trained checkpoint on unseen classes");
  mtest_cmd->add_option("--ckpt", mtest.ckpt, "Meta-trained checkpoint")->required();
  mtest_cmd->add_option("--data", mtest.data, "Dataset path")->required();
  mtest_cmd->add_option("--tasks", mtest.tasks, "Task count (default: config test.tasks)");
  mtest_cmd->add_option("--metrics", mtest.metrics, "Optional per-task accuracy CSV");
  mtest_cmd->add_option("--seed", mtest.seed, "Episode seed")->capture_default_str();
  add_config_options(mtest_cmd, mtest.config);

  BenchArgs bench;
  CLI::App* bench_cmd = app.add_subcommand(
      "bench", "Meta-train and score a list of variants into a comparison table");
  bench_cmd->add_option("--data", bench.data, "Dataset path")->required();
  bench_cmd->add_option("--pretrained", bench.pretrained, "Pretrained backbone checkpoint")
      ->required();
  bench_cmd->add_option("--variants", bench.variants, "Comma-separated variant list")
      ->capture_default_str();
  bench_cmd->add_option("--ht", bench.ht, "Curriculum modes: both | on | off")
      ->capture_default_str();
  bench_cmd->add_option("--tasks", bench.tasks, "Meta-test tasks per row")
      ->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "Output CSV path")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Shared seed for every row")
      ->capture_default_str();
  bench_cmd->add_option("--threads", bench.threads, "Meta-batch workers (capped by MTL_THREADS)")
      ->capture_default_str();
  add_config_options(bench_cmd, bench.config);

  ConvergenceArgs conv;
  CLI::App* conv_cmd = app.add_subcommand(
      "eval-convergence", "Validation-accuracy curve per snapshot for variant/curriculum mixes");
  conv_cmd->add_option("--data", conv.data, "Dataset path")->required();
  conv_cmd->add_option("--pretrained", conv.pretrained, "Pretrained backbone checkpoint")
      ->required();
  conv_cmd->add_option("--variants", conv.variants, "Comma-separated variant list")
      ->capture_default_str();
  conv_cmd->add_option("--ht", conv.ht, "Curriculum modes: both | on | off")
      ->capture_default_str();
  conv_cmd->add_option("--out", conv.out, "Output CSV path")->capture_default_str();
  conv_cmd->add_option("--seed", conv.seed, "Training seed")->capture_default_str();
  conv_cmd->add_option("--threads", conv.threads, "Meta-batch workers (capped by MTL_THREADS)")
      ->capture_default_str();
  add_config_options(conv_cmd, conv.config);

  std::string replay_manifest;
  CLI::App* replay_cmd =
      app.add_subcommand("replay", "Re-run a command exactly as its manifest records it");
  replay_cmd->add_option("--manifest", replay_manifest, "Manifest JSON path")->required();

  // CLI11 parses back to front; feed it a reversed copy.
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (gen_cmd->parsed()) return cmd_gen_data(gen);
  if (pre_cmd->parsed()) return cmd_pretrain(pre);
  if (mt_cmd->parsed()) return cmd_meta_train(mt);
  if (mtest_cmd->parsed()) return cmd_meta_test(mtest);
  if (bench_cmd->parsed()) return cmd_bench(bench);
  if (conv_cmd->parsed()) return cmd_eval_convergence(conv);
  if (replay_cmd->parsed()) return cmd_replay(replay_manifest);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run_cli(args);
  } catch (const mtl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
