#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tap/common.hpp"
#include "tap/env.hpp"
#include "tap/planner.hpp"
#include "tap/tap_model.hpp"

namespace tap {

// Flat `key = value` run configuration with a fixed key registry. Unknown
// keys are rejected; every run echoes the fully resolved set for provenance.
class RunConfig {
 public:
  RunConfig();  // defaults

  static RunConfig from_file(const std::string& path);

  // Applies `key = value`; throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  int get_int(const std::string& key) const;
  float get_float(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  EnvSpec env_spec() const;
  TapConfig tap_config() const;
  PlannerConfig planner_config() const;

  // Canonical-order text of every key; byte-stable across runs.
  std::string resolved_text() const;
  void write_resolved(const std::string& path) const;

 private:
  int find(const std::string& key) const;
  std::vector<std::pair<std::string, std::string>> values_;
};

}  // namespace tap
