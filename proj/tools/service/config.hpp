#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sbc/engine.hpp"

namespace sbc::service {

struct DatasetConfig {
  std::string name;
  std::filesystem::path catalog;
  std::filesystem::path index;
  std::filesystem::path head;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 binds any free port
  std::optional<std::string> sidecar_url;  // e.g. http://127.0.0.1:8081
  FinetuneParams finetune;                 // defaults for /finetune
  std::vector<std::string> cors_origins;   // "*" allows any origin
  std::size_t threads = 8;
  std::vector<DatasetConfig> datasets;
};

// Parses "host:port" (or ":port", or "port") into the config.
void apply_listen(ServerConfig& config, std::string_view listen);

// Key/value config with [sections]; see README for the format. Relative dataset
// paths resolve against `base_dir`. Throws InvalidArgument with a line number.
ServerConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});

// Reads `path`, then applies the SBC_LISTEN environment variable if set.
ServerConfig load_config(const std::filesystem::path& path);

}  // namespace sbc::service
