#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mtl/episodes.hpp"
#include "mtl/pretrain.hpp"
#include "mtl/trainer.hpp"

namespace mtl {

// Flat key = value experiment configuration with two documented profiles.
//
//   quickstart  desk-scale sizes: 2000 pre-training iterations, 2000
//               meta-training tasks, 5 inner epochs, 100 meta-test tasks.
//   paper       published sizes: 10000 pre-training iterations, 12000
//               meta-training tasks (6000 two-task batches), 20 inner
//               epochs, 600 meta-validation / meta-test tasks.
//
// Precedence, lowest to highest: profile defaults, then a config file's
// `key = value` lines, then individual overrides (CLI --set flags). Unknown
// keys are rejected everywhere, and every resolved value is echoed into the
// run manifest.
class RunConfig {
 public:
  // The named profile's defaults ("quickstart" | "paper").
  static RunConfig profile_defaults(const std::string& profile);

  // Applies `key = value` lines ('#' comments and blank lines skipped). A
  // `profile` key switches defaults first, so later keys override it.
  void apply_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::int64_t get_i64(const std::string& key) const;
  double get_f64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Typed views over the flat map.
  SyntheticConfig data() const;
  ExtractorConfig arch() const;
  PretrainConfig pretrain_cfg() const;
  MetaConfig meta_cfg() const;
  CurriculumConfig curriculum_cfg() const;
  MetaTrainConfig trainer_cfg() const;
  int test_tasks() const;
  std::string profile() const;

  // Alphabetical key -> value echo for the manifest.
  const std::map<std::string, std::string>& resolved() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mtl
