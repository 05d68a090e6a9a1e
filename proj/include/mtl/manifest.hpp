#pragma once

#include <map>
#include <string>
#include <vector>

#include "mtl/config.hpp"

namespace mtl {

// Reproducibility record for one CLI run: the exact subcommand and flags to
// replay it, the resolved configuration, content hashes of every input and
// output file, per-phase wall-clock, and summary metrics. Written atomically
// as pretty-printed JSON next to the run's primary output.
class RunManifest {
 public:
  RunManifest() = default;
  RunManifest(std::string subcommand, std::vector<std::pair<std::string, std::string>> flags);

  void set_config(const RunConfig& cfg);
  void add_input(const std::string& role, const std::string& path);    // hashes the file
  void add_output(const std::string& role, const std::string& path);   // hashes the file
  void add_timing(const std::string& phase, double seconds);
  void add_summary(const std::string& key, double value);
  void add_summary_text(const std::string& key, const std::string& value);

  const std::string& subcommand() const { return subcommand_; }
  const std::vector<std::pair<std::string, std::string>>& flags() const { return flags_; }
  std::string input_hash(const std::string& role) const;   // "" if absent
  std::string output_hash(const std::string& role) const;  // "" if absent
  double summary(const std::string& key) const;

  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);

 private:
  std::string subcommand_;
  std::vector<std::pair<std::string, std::string>> flags_;  // replay argv, in order
  std::map<std::string, std::string> config_;
  std::map<std::string, std::pair<std::string, std::string>> inputs_;   // role -> (path, hash)
  std::map<std::string, std::pair<std::string, std::string>> outputs_;  // role -> (path, hash)
  std::vector<std::pair<std::string, double>> timings_;
  std::map<std::string, double> summary_;
  std::map<std::string, std::string> summary_text_;
};

}  // namespace mtl
