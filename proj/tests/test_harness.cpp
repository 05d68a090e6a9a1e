// Tests for the experiment harness: layered run configuration, the JSON run
// manifest, and the command-line binary end to end (dataset generation,
// training pipeline, evaluation, byte-exact replay, thread capping, and
// failure exits).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mtl/config.hpp"
#include "mtl/episodes.hpp"
#include "mtl/errors.hpp"
#include "mtl/manifest.hpp"
#include "mtl/sha256.hpp"

namespace fs = std::filesystem;
using namespace mtl;
using doctest::Approx;

namespace {

// Fresh scratch directory per process so concurrent test runs cannot collide.
const fs::path& scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("mtl_harness_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path_in(const std::string& name) { return (scratch_dir() / name).string(); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  REQUIRE(os.good());
  os << text;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE_MESSAGE(is.good(), "cannot read " << path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

// Runs the command-line binary through the shell with combined stdout/stderr
// captured; returns the exit code (-1 if the shell failed outright).
int run_cli(const std::string& args, std::string* output = nullptr,
            const std::string& env_prefix = "") {
  const std::string log = path_in("last_run.log");
  std::string cmd = env_prefix.empty() ? "" : env_prefix + " ";
  cmd += std::string(MTL_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output != nullptr) *output = slurp(log);
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool has_flag(const RunManifest& m, const std::string& flag, const std::string& value) {
  for (const auto& [k, v] : m.flags())
    if (k == flag && v == value) return true;
  return false;
}

}  // namespace

TEST_CASE("config profiles expose the documented scale knobs") {
  const RunConfig quick = RunConfig::profile_defaults("quickstart");
  CHECK(quick.profile() == "quickstart");
  CHECK(quick.get_i64("pretrain.iterations") == 2000);
  CHECK(quick.get_i64("meta.inner_epochs") == 5);
  CHECK(quick.get_i64("train.total_tasks") == 2000);
  CHECK(quick.get_i64("train.val_tasks") == 100);
  CHECK(quick.test_tasks() == 100);

  const RunConfig paper = RunConfig::profile_defaults("paper");
  CHECK(paper.profile() == "paper");
  CHECK(paper.get_i64("pretrain.iterations") == 10000);
  CHECK(paper.get_i64("meta.inner_epochs") == 20);
  CHECK(paper.get_i64("train.total_tasks") == 12000);
  CHECK(paper.get_i64("train.val_tasks") == 600);
  CHECK(paper.test_tasks() == 600);

  SUBCASE("scale-independent defaults are shared") {
    for (const RunConfig* cfg : {&quick, &paper}) {
      CHECK(cfg->get_i64("data.classes") == 100);
      CHECK(cfg->get_i64("data.samples_per_class") == 60);
      CHECK(cfg->get_i64("arch.blocks") == 4);
      CHECK(cfg->get_i64("arch.filters") == 16);
      CHECK(cfg->get_f64("pretrain.lr_init") == 0.001);
      CHECK(cfg->get_i64("pretrain.batch_size") == 64);
      CHECK(cfg->get_f64("meta.base_lr") == 0.01);
      CHECK(cfg->get_i64("meta.way") == 5);
      CHECK(cfg->get_i64("meta.shot") == 1);
      CHECK(cfg->get_i64("meta.query") == 15);
      CHECK(cfg->get_bool("ht.enabled"));
      CHECK(cfg->get_i64("ht.cadence") == 10);
      CHECK(cfg->get("ht.method") == "fresh_samples");
    }
    // both profiles define exactly the same key set
    CHECK(quick.resolved().size() == paper.resolved().size());
    for (const auto& [key, _] : quick.resolved()) CHECK(paper.resolved().count(key) == 1);
  }

  SUBCASE("unknown profile is rejected") {
    CHECK_THROWS_AS(RunConfig::profile_defaults("fast"), ConfigError);
  }
}

TEST_CASE("config set and file application follow documented precedence") {
  SUBCASE("set replaces a known key and rejects unknown ones") {
    RunConfig cfg = RunConfig::profile_defaults("quickstart");
    cfg.set("meta.way", "7");
    CHECK(cfg.get_i64("meta.way") == 7);
    CHECK_THROWS_WITH_AS(cfg.set("meta.ways", "7"),
                         doctest::Contains("unknown config key"), ConfigError);
    CHECK_THROWS_AS(cfg.get("meta.ways"), ConfigError);
  }

  SUBCASE("setting the profile key re-bases every default") {
    RunConfig cfg = RunConfig::profile_defaults("quickstart");
    cfg.set("meta.way", "7");
    cfg.set("profile", "paper");
    CHECK(cfg.profile() == "paper");
    CHECK(cfg.get_i64("meta.way") == 5);  // re-based; earlier override discarded
    CHECK(cfg.get_i64("pretrain.iterations") == 10000);
  }

  SUBCASE("file keys override profile defaults, later sets override the file") {
    const std::string path = path_in("cfg_a.txt");
    write_text(path,
               "# experiment overrides\n"
               "  meta.way = 9   # trailing comment\n"
               "\n"
               "pretrain.iterations=777\n");
    RunConfig cfg = RunConfig::profile_defaults("quickstart");
    cfg.apply_file(path);
    CHECK(cfg.get_i64("meta.way") == 9);
    CHECK(cfg.get_i64("pretrain.iterations") == 777);
    CHECK(cfg.get_i64("meta.inner_epochs") == 5);  // untouched default
    cfg.set("meta.way", "11");
    CHECK(cfg.get_i64("meta.way") == 11);
  }

  SUBCASE("a profile line anywhere in the file is applied before other keys") {
    const std::string path = path_in("cfg_b.txt");
    write_text(path,
               "pretrain.iterations = 123\n"
               "profile = paper\n");
    RunConfig cfg = RunConfig::profile_defaults("quickstart");
    cfg.apply_file(path);
    CHECK(cfg.profile() == "paper");
    CHECK(cfg.get_i64("pretrain.iterations") == 123);   // survives the re-base
    CHECK(cfg.get_i64("train.total_tasks") == 12000);   // re-based default
  }

  SUBCASE("malformed lines report their line number") {
    const std::string path = path_in("cfg_bad.txt");
    write_text(path, "meta.way = 5\nthis line has no equals sign\n");
    RunConfig cfg = RunConfig::profile_defaults("quickstart");
    CHECK_THROWS_WITH_AS(cfg.apply_file(path), doctest::Contains("line 2"), ConfigError);

    write_text(path, "meta.way =\n");
    CHECK_THROWS_WITH_AS(cfg.apply_file(path), doctest::Contains("empty key or value"),
                         ConfigError);
  }

  SUBCASE("missing config file") {
    RunConfig cfg = RunConfig::profile_defaults("quickstart");
    CHECK_THROWS_AS(cfg.apply_file(path_in("no_such_config.txt")), IoError);
  }
}

TEST_CASE("config typed getters validate their formats") {
  RunConfig cfg = RunConfig::profile_defaults("quickstart");

  SUBCASE("integer") {
    cfg.set("meta.way", "5x");
    CHECK_THROWS_WITH_AS(cfg.get_i64("meta.way"), doctest::Contains("not an integer"),
                         ConfigError);
    cfg.set("meta.way", "12");
    CHECK(cfg.get_i64("meta.way") == 12);
  }

  SUBCASE("floating point accepts integers, rejects trailing junk") {
    CHECK(cfg.get_f64("meta.way") == 5.0);
    cfg.set("meta.base_lr", "0.5.2");
    CHECK_THROWS_WITH_AS(cfg.get_f64("meta.base_lr"), doctest::Contains("not a number"),
                         ConfigError);
  }

  SUBCASE("boolean spellings") {
    for (const char* t : {"true", "on", "1"}) {
      cfg.set("ht.enabled", t);
      CHECK(cfg.get_bool("ht.enabled"));
    }
    for (const char* f : {"false", "off", "0"}) {
      cfg.set("ht.enabled", f);
      CHECK_FALSE(cfg.get_bool("ht.enabled"));
    }
    cfg.set("ht.enabled", "yes");
    CHECK_THROWS_WITH_AS(cfg.get_bool("ht.enabled"), doctest::Contains("not a boolean"),
                         ConfigError);
  }
}

TEST_CASE("config derives the dataset, architecture, and trainer structures") {
  RunConfig cfg = RunConfig::profile_defaults("quickstart");

  SUBCASE("synthetic dataset fields") {
    cfg.set("data.classes", "24");
    cfg.set("data.noise_hi", "0.5");
    const SyntheticConfig d = cfg.data();
    CHECK(d.num_classes == 24);
    CHECK(d.samples_per_class == 60);
    CHECK(d.channels == 3);
    CHECK(d.height == 16);
    CHECK(d.width == 16);
    CHECK(d.noise_lo == 0.04);
    CHECK(d.noise_hi == 0.5);
    CHECK(d.jitter == 1);
    CHECK(d.amplitude_wobble == 0.15);
  }

  SUBCASE("architecture pools while the spatial size stays even") {
    const ExtractorConfig a16 = cfg.arch();
    CHECK(a16.num_blocks == 4);
    CHECK(a16.filters == 16);
    CHECK(a16.kernel == 3);
    CHECK(a16.in_channels == 3);
    CHECK(a16.input_hw == 16);
    CHECK(a16.pool_flags == std::vector<int>{1, 1, 1, 1});  // 16->8->4->2->1
    CHECK_FALSE(a16.mean_pool);

    cfg.set("data.height", "12");
    cfg.set("data.width", "12");
    const ExtractorConfig a12 = cfg.arch();
    CHECK(a12.pool_flags == std::vector<int>{1, 1, 0, 0});  // 12->6->3, then odd

    cfg.set("data.height", "7");
    cfg.set("data.width", "7");
    const ExtractorConfig a7 = cfg.arch();
    CHECK(a7.pool_flags == std::vector<int>{0, 0, 0, 0});

    cfg.set("data.width", "9");
    CHECK_THROWS_WITH_AS(cfg.arch(), doctest::Contains("square"), ConfigError);

    cfg.set("data.width", "7");
    cfg.set("arch.mean_pool", "on");
    CHECK(cfg.arch().mean_pool);
  }

  SUBCASE("training structures carry the profile values") {
    const PretrainConfig p = cfg.pretrain_cfg();
    CHECK(p.lr_init == 0.001);
    CHECK(p.lr_period == 5000);
    CHECK(p.lr_floor == 0.0001);
    CHECK(p.batch_size == 64);
    CHECK(p.dropout_keep == 0.9);
    CHECK(p.max_iterations == 2000);

    cfg.set("meta.second_order", "on");
    const MetaConfig m = cfg.meta_cfg();
    CHECK(m.base_lr == 0.01);
    CHECK(m.inner_epochs == 5);
    CHECK(m.meta_lr_init == 0.001);
    CHECK(m.meta_lr_period == 1000);
    CHECK(m.meta_batch == 2);
    CHECK(m.second_order);
    CHECK(m.way == 5);
    CHECK(m.shot == 1);
    CHECK(m.query == 15);

    const MetaTrainConfig t = cfg.trainer_cfg();
    CHECK(t.total_tasks == 2000);
    CHECK(t.snapshot_every == 500);
    CHECK(t.val_tasks == 100);
    CHECK(t.curriculum.enabled);
    CHECK(t.curriculum.cadence == 10);
    CHECK(t.curriculum.hard_tasks == 10);
    CHECK(t.curriculum.method == CurriculumConfig::Resample::FreshSamples);
  }

  SUBCASE("curriculum resample method parsing") {
    cfg.set("ht.method", "reuse_samples");
    CHECK(cfg.curriculum_cfg().method == CurriculumConfig::Resample::ReuseSamples);
    cfg.set("ht.method", "sometimes");
    CHECK_THROWS_WITH_AS(cfg.curriculum_cfg(), doctest::Contains("ht.method"), ConfigError);
  }
}

TEST_CASE("manifest records a run and reloads it from disk") {
  const std::string in_path = path_in("manifest_input.txt");
  const std::string out_path = path_in("manifest_output.txt");
  write_text(in_path, "alpha\n");
  write_text(out_path, "beta\n");

  RunConfig cfg = RunConfig::profile_defaults("quickstart");
  cfg.set("meta.way", "3");

  RunManifest m("meta-train", {{"--profile", "quickstart"},
                               {"--set", "meta.way=3"},
                               {"--set", "meta.shot=1"},
                               {"--data", in_path}});
  m.set_config(cfg);
  m.add_input("dataset", in_path);
  m.add_output("metrics", out_path);
  m.add_timing("meta_train", 1.5);
  m.add_summary("best_val_acc", 0.75);
  m.add_summary_text("variant", "ss_full");

  const std::string path = path_in("run.manifest.json");
  m.save(path);
  CHECK_FALSE(fs::exists(path + ".tmp"));  // atomic: temp file renamed away

  const std::string raw = slurp(path);
  CHECK(raw.find("\"meta_train\": 1.5") != std::string::npos);
  CHECK(raw.find("\"variant\": \"ss_full\"") != std::string::npos);

  const RunManifest r = RunManifest::load(path);
  CHECK(r.subcommand() == "meta-train");
  REQUIRE(r.flags().size() == 4);
  CHECK(r.flags()[0] == std::pair<std::string, std::string>{"--profile", "quickstart"});
  CHECK(r.flags()[1] == std::pair<std::string, std::string>{"--set", "meta.way=3"});
  CHECK(r.flags()[2] == std::pair<std::string, std::string>{"--set", "meta.shot=1"});
  CHECK(r.flags()[3] == std::pair<std::string, std::string>{"--data", in_path});

  CHECK(r.input_hash("dataset") == sha256_file(in_path));
  CHECK(r.input_hash("dataset").size() == 64);
  CHECK(r.output_hash("metrics") == sha256_file(out_path));
  CHECK(r.input_hash("no_such_role").empty());
  CHECK(r.output_hash("no_such_role").empty());

  CHECK(r.summary("best_val_acc") == 0.75);
  CHECK_THROWS_AS(r.summary("missing_metric"), ContractError);
  // text metrics live beside the numbers but are not numeric summaries
  CHECK_THROWS_AS(r.summary("variant"), ContractError);
}

TEST_CASE("manifest load rejects malformed files") {
  SUBCASE("missing file") {
    CHECK_THROWS_AS(RunManifest::load(path_in("no_such.manifest.json")), IoError);
  }

  SUBCASE("invalid json") {
    const std::string path = path_in("broken.manifest.json");
    write_text(path, "{ this is not json");
    CHECK_THROWS_AS(RunManifest::load(path), FormatError);
  }

  SUBCASE("missing replay section") {
    const std::string path = path_in("no_replay.manifest.json");
    write_text(path, "{\"subcommand\": \"pretrain\"}");
    CHECK_THROWS_AS(RunManifest::load(path), FormatError);
  }

  SUBCASE("argv entries must be flag/value pairs") {
    const std::string path = path_in("bad_argv.manifest.json");
    write_text(path,
               "{\"replay\": {\"subcommand\": \"pretrain\", \"argv\": [[\"--data\"]]}}");
    CHECK_THROWS_WITH_AS(RunManifest::load(path),
                         doctest::Contains("malformed replay argv entry"), FormatError);
  }
}

TEST_CASE("cli end-to-end: generate, train, evaluate, replay") {
  // --- gen-data: split proportions, determinism, manifest -----------------
  const std::string ds10 = path_in("ds10.mtld");
  std::string out;
  REQUIRE(run_cli("gen-data --out " + ds10 +
                      " --seed 3 --classes 10 --samples 6"
                      " --set data.channels=1 --set data.height=8 --set data.width=8"
                      " --set data.bumps=2",
                  &out) == 0);
  CHECK(fs::exists(ds10));
  CHECK(fs::exists(ds10 + ".splits"));
  {
    const Dataset ds = Dataset::load(ds10);
    CHECK(ds.num_classes() == 10);
    CHECK(ds.num_samples() == 60);
    CHECK(ds.channels() == 1);
    CHECK(ds.height() == 8);
    CHECK(ds.classes(MetaSplit::Train).size() == 6);  // 64/16/20 class split
    CHECK(ds.classes(MetaSplit::Val).size() == 2);
    CHECK(ds.classes(MetaSplit::Test).size() == 2);

    const RunManifest gm = RunManifest::load(ds10 + ".manifest.json");
    CHECK(gm.subcommand() == "gen-data");
    CHECK(gm.summary("num_classes") == 10.0);
    CHECK(gm.summary("num_samples") == 60.0);
    CHECK(gm.output_hash("dataset") == sha256_file(ds10));
    CHECK(gm.output_hash("splits") == sha256_file(ds10 + ".splits"));
  }

  const std::string ds10b = path_in("ds10b.mtld");
  REQUIRE(run_cli("gen-data --out " + ds10b +
                  " --seed 3 --classes 10 --samples 6"
                  " --set data.channels=1 --set data.height=8 --set data.width=8"
                  " --set data.bumps=2") == 0);
  CHECK(slurp(ds10) == slurp(ds10b));  // same seed: byte-identical payload
  CHECK(slurp(ds10 + ".splits") == slurp(ds10b + ".splits"));

  const std::string ds10c = path_in("ds10c.mtld");
  REQUIRE(run_cli("gen-data --out " + ds10c +
                  " --seed 4 --classes 10 --samples 6"
                  " --set data.channels=1 --set data.height=8 --set data.width=8"
                  " --set data.bumps=2") == 0);
  CHECK(slurp(ds10) != slurp(ds10c));  // different seed: different samples

  // --- the pipeline dataset: 20 classes so every split can host 3-way tasks
  const std::string ds = path_in("ds.mtld");
  REQUIRE(run_cli("gen-data --out " + ds +
                  " --seed 3 --classes 20 --samples 6"
                  " --set data.channels=1 --set data.height=8 --set data.width=8"
                  " --set data.bumps=2") == 0);

  // --- pretrain ------------------------------------------------------------
  const std::string pre = path_in("pre.mtlc");
  REQUIRE(run_cli("pretrain --data " + ds + " --out " + pre +
                      " --seed 5 --set arch.blocks=2 --set arch.filters=4"
                      " --set pretrain.iterations=20 --set pretrain.batch_size=8",
                  &out) == 0);
  CHECK(fs::exists(pre));
  {
    const std::string curve = slurp(pre + ".curve.csv");
    CHECK(curve.rfind("iteration,lr,loss,acc\n", 0) == 0);
    CHECK(count_lines(curve) == 21);  // header + one row per iteration

    const RunManifest pm = RunManifest::load(pre + ".manifest.json");
    CHECK(pm.subcommand() == "pretrain");
    CHECK(pm.input_hash("dataset") == sha256_file(ds));
    CHECK(pm.output_hash("checkpoint") == sha256_file(pre));
    CHECK(pm.summary("final_loss") >= 0.0);
  }

  // --- meta-train ----------------------------------------------------------
  const std::string model = path_in("model.mtlc");
  const std::string train_sets =
      " --set meta.way=3 --set meta.shot=1 --set meta.query=2"
      " --set meta.inner_epochs=1 --set meta.batch=2"
      " --set ht.cadence=5 --set ht.hard_tasks=2"
      " --set train.total_tasks=24 --set train.snapshot_every=12 --set train.val_tasks=2";
  REQUIRE(run_cli("meta-train --data " + ds + " --pretrained " + pre + " --out " + model +
                      " --seed 7 --variant ss_full --ht on" + train_sets,
                  &out) == 0);
  CHECK(fs::exists(model));
  const std::string metrics_path = model + ".metrics.csv";
  {
    const std::string metrics = slurp(metrics_path);
    CHECK(metrics.rfind("iteration,phase,task_idx,test_loss,mean_acc,hardest_class\n", 0) == 0);
    CHECK(count_lines(metrics) == 25);  // header + one row per task, hard included

    const RunManifest mm = RunManifest::load(model + ".manifest.json");
    CHECK(mm.subcommand() == "meta-train");
    CHECK(mm.summary("best_val_acc") >= 0.0);
    CHECK(mm.summary("best_val_acc") <= 1.0);
    CHECK(mm.summary("hard_phases") == static_cast<double>(count_occurrences(out, "HARD_PHASE")));
    CHECK(mm.summary("hard_phases") >= 1.0);
    CHECK(mm.output_hash("checkpoint") == sha256_file(model));
    CHECK(mm.output_hash("metrics") == sha256_file(metrics_path));
    CHECK(mm.input_hash("pretrained") == sha256_file(pre));

    // the replay argv pins the dedicated flags and the full resolved config
    CHECK(has_flag(mm, "--data", ds));
    CHECK(has_flag(mm, "--seed", "7"));
    CHECK(has_flag(mm, "--threads", "1"));
    CHECK(has_flag(mm, "--profile", "quickstart"));
    CHECK(has_flag(mm, "--set", "meta.way=3"));
    CHECK(has_flag(mm, "--set", "train.total_tasks=24"));
    CHECK(has_flag(mm, "--set", "pretrain.batch_size=64"));  // untouched default, still pinned
  }

  // --- meta-test -----------------------------------------------------------
  const std::string per_task = path_in("per_task.csv");
  std::string test_out;
  REQUIRE(run_cli("meta-test --ckpt " + model + " --data " + ds + " --tasks 4 --seed 9" +
                      " --metrics " + per_task +
                      " --set meta.way=3 --set meta.shot=1 --set meta.query=2"
                      " --set meta.inner_epochs=1",
                  &test_out) == 0);
  CHECK(test_out.rfind("accuracy ", 0) == 0);
  CHECK(test_out.find("over 4 tasks") != std::string::npos);
  {
    const std::string per = slurp(per_task);
    CHECK(per.rfind("task,acc\n", 0) == 0);
    CHECK(count_lines(per) == 5);

    const RunManifest tm = RunManifest::load(model + ".test.manifest.json");
    CHECK(tm.subcommand() == "meta-test");
    CHECK(tm.summary("tasks") == 4.0);
    CHECK(tm.summary("mean_acc") >= 0.0);
    CHECK(tm.summary("mean_acc") <= 1.0);
    CHECK(tm.summary("ci95") >= 0.0);
  }
  std::string test_out2;
  REQUIRE(run_cli("meta-test --ckpt " + model + " --data " + ds + " --tasks 4 --seed 9" +
                      " --set meta.way=3 --set meta.shot=1 --set meta.query=2"
                      " --set meta.inner_epochs=1",
                  &test_out2) == 0);
  CHECK(test_out == test_out2);  // same seed scores the same task sequence

  // --- replay: byte-identical artifacts -------------------------------------
  const std::string model_bytes = slurp(model);
  const std::string metrics_bytes = slurp(metrics_path);
  REQUIRE(run_cli("replay --manifest " + model + ".manifest.json", &out) == 0);
  CHECK(out.find("replaying meta-train") != std::string::npos);
  CHECK(slurp(model) == model_bytes);
  CHECK(slurp(metrics_path) == metrics_bytes);

  // --- MTL_THREADS caps the requested worker count ---------------------------
  const std::string model_t4 = path_in("model_t4.mtlc");
  REQUIRE(run_cli("meta-train --data " + ds + " --pretrained " + pre + " --out " + model_t4 +
                      " --seed 7 --variant ss_full --ht on --threads 4" + train_sets,
                  &out, "MTL_THREADS=1") == 0);
  // capped to one worker: the trajectory matches the sequential run exactly
  CHECK(slurp(model_t4 + ".metrics.csv") == metrics_bytes);
  {
    const RunManifest tm4 = RunManifest::load(model_t4 + ".manifest.json");
    CHECK(has_flag(tm4, "--threads", "1"));  // the effective count is what replays
  }
}

TEST_CASE("cli rejects bad invocations with nonzero exits") {
  std::string out;

  SUBCASE("unknown subcommand") { CHECK(run_cli("frobnicate", &out) != 0); }

  SUBCASE("missing required flag") { CHECK(run_cli("gen-data", &out) != 0); }

  SUBCASE("missing input file") {
    CHECK(run_cli("pretrain --data " + path_in("nowhere.mtld") + " --out " +
                      path_in("x.mtlc"),
                  &out) == 1);
    CHECK(out.find("error:") != std::string::npos);
  }

  SUBCASE("malformed --set") {
    CHECK(run_cli("gen-data --out " + path_in("z.mtld") + " --set data.height", &out) == 1);
    CHECK(out.find("--set expects key=value") != std::string::npos);
  }

  SUBCASE("unknown config key") {
    CHECK(run_cli("gen-data --out " + path_in("z.mtld") + " --set bogus.key=1", &out) == 1);
    CHECK(out.find("unknown config key") != std::string::npos);
  }

  SUBCASE("invalid MTL_THREADS value") {
    // commands that never read the cap ignore it entirely
    CHECK(run_cli("gen-data --out " + path_in("z.mtld"), &out, "MTL_THREADS=zebra") == 0);
    // a training command validates it before touching any input
    CHECK(run_cli("meta-train --data d --pretrained p --out m", &out, "MTL_THREADS=zebra") == 1);
    CHECK(out.find("MTL_THREADS") != std::string::npos);
  }

  SUBCASE("replaying a replay manifest is refused") {
    const std::string path = path_in("loop.manifest.json");
    RunManifest loop("replay", {{"--manifest", "x"}});
    loop.save(path);
    CHECK(run_cli("replay --manifest " + path, &out) == 1);
    CHECK(out.find("refusing to replay a replay manifest") != std::string::npos);
  }
}
