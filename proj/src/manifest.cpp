#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "mtl/errors.hpp"
#include "mtl/manifest.hpp"
#include "mtl/sha256.hpp"

namespace mtl {

using json = nlohmann::ordered_json;

RunManifest::RunManifest(std::string subcommand,
                         std::vector<std::pair<std::string, std::string>> flags)
    : subcommand_(std::move(subcommand)), flags_(std::move(flags)) {}

void RunManifest::set_config(const RunConfig& cfg) { config_ = cfg.resolved(); }

void RunManifest::add_input(const std::string& role, const std::string& path) {
  inputs_[role] = {path, sha256_file(path)};
}

void RunManifest::add_output(const std::string& role, const std::string& path) {
  outputs_[role] = {path, sha256_file(path)};
}

void RunManifest::add_timing(const std::string& phase, double seconds) {
  timings_.emplace_back(phase, seconds);
}

void RunManifest::add_summary(const std::string& key, double value) { summary_[key] = value; }

void RunManifest::add_summary_text(const std::string& key, const std::string& value) {
  summary_text_[key] = value;
}

std::string RunManifest::input_hash(const std::string& role) const {
  auto it = inputs_.find(role);
  return it == inputs_.end() ? "" : it->second.second;
}

std::string RunManifest::output_hash(const std::string& role) const {
  auto it = outputs_.find(role);
  return it == outputs_.end() ? "" : it->second.second;
}

double RunManifest::summary(const std::string& key) const {
  auto it = summary_.find(key);
  if (it == summary_.end()) throw ContractError("manifest has no summary metric '" + key + "'");
  return it->second;
}

void RunManifest::save(const std::string& path) const {
  json j;
  j["subcommand"] = subcommand_;
  json argv = json::array();
  for (const auto& [k, v] : flags_) argv.push_back(json::array({k, v}));
  j["replay"] = {{"subcommand", subcommand_}, {"argv", argv}};
  j["config"] = config_;
  auto files = [](const std::map<std::string, std::pair<std::string, std::string>>& m) {
    json out = json::object();
    for (const auto& [role, ph] : m)
      out[role] = {{"path", ph.first}, {"sha256", ph.second}};
    return out;
  };
  j["inputs"] = files(inputs_);
  j["outputs"] = files(outputs_);
  json timings = json::object();
  for (const auto& [phase, secs] : timings_) timings[phase] = secs;
  j["timings_sec"] = timings;
  j["summary"] = summary_;
  for (const auto& [k, v] : summary_text_) j["summary"][k] = v;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move '" + tmp + "' to '" + path + "'");
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path + "': " + e.what());
  }
  RunManifest m;
  try {
    m.subcommand_ = j.at("replay").at("subcommand").get<std::string>();
    for (const auto& pair : j.at("replay").at("argv")) {
      if (!pair.is_array() || pair.size() != 2)
        throw FormatError("manifest '" + path + "': malformed replay argv entry");
      m.flags_.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    }
    if (j.contains("config"))
      for (const auto& [k, v] : j.at("config").items())
        m.config_[k] = v.get<std::string>();
    auto read_files = [&](const char* section,
                          std::map<std::string, std::pair<std::string, std::string>>& out) {
      if (!j.contains(section)) return;
      for (const auto& [role, rec] : j.at(section).items())
        out[role] = {rec.at("path").get<std::string>(), rec.at("sha256").get<std::string>()};
    };
    read_files("inputs", m.inputs_);
    read_files("outputs", m.outputs_);
    if (j.contains("summary"))
      for (const auto& [k, v] : j.at("summary").items()) {
        if (v.is_number())
          m.summary_[k] = v.get<double>();
        else
          m.summary_text_[k] = v.get<std::string>();
      }
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path + "': " + e.what());
  }
  return m;
}

}  // namespace mtl
