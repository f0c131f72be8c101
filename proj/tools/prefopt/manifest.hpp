#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "config.hpp"

namespace prefopt::cli {

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

struct Manifest {
  std::string command;
  Json config;
  std::filesystem::path out;
  std::map<std::string, std::string> artifacts;  ///< file name -> sha256
  double duration_seconds = 0.0;
};

/// Writes `<out>/manifest.json` through a temporary file and a rename.
void write_manifest(const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// Writes `text` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace prefopt::cli
