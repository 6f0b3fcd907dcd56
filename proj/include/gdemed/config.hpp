#pragma once

// Scenario configuration files: flat "key = value" lines grouped under
// [section] headers, '#' comments, and a top-level schema_version.
//
//   schema_version = 1
//   [scenario]   ScenarioParams fields (tau is required unless calibrated)
//   [study]      nsim, B, methods, bootstrap, jackknife, seed, ...
//   [calibrate]  target_sd, share
//   [grid]       sym_sd, target_sd | share, fixed_target_sd, fixed_share

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "gdemed/study.hpp"

namespace gdemed {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CalibrateBlock {
  double target_sd = 14.0;
  std::optional<double> share;
};

struct StudyConfig {
  int schema_version = kSchemaVersion;
  ScenarioParams params;
  StudyOptions study;
  std::optional<double> theta_true;
  long long oracle_n = 10'000'000;
  std::optional<CalibrateBlock> calibrate;
  std::optional<GridSpec> grid;
};

/// Throws ConfigError with "<source>:<line>: ..." diagnostics naming the key.
StudyConfig parse_config(std::istream& in, const std::string& source = "config");
StudyConfig load_config(const std::string& path);

}  // namespace gdemed
