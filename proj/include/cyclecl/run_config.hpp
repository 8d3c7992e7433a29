#pragma once

// Flat `key = value` run configuration. Lines starting with '#' and trailing
// '# ...' are comments; unknown keys are rejected; unset keys keep the
// TrainConfig defaults.

#include <filesystem>
#include <string>

#include "cyclecl/trainer.hpp"

namespace cyclecl {

struct RunConfig {
  TrainConfig train;
  std::string dataset;
  std::string output_dir;
};

// Assigns one key. Throws ConfigError naming the key on an unknown key or a
// malformed value.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses text on top of `base`; `origin` prefixes error messages.
RunConfig parse_run_config(const std::string& text, RunConfig base = {},
                           const std::string& origin = "config");
RunConfig read_run_config(const std::filesystem::path& path, RunConfig base = {});

// Every key in a fixed order, in a form parse_run_config reads back to an
// identical configuration.
std::string echo_run_config(const RunConfig& cfg);

}  // namespace cyclecl
