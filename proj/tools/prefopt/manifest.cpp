#include "manifest.hpp"

#include <array>
#include <fstream>
#include <iterator>
#include <memory>

#include <openssl/evp.h>

#include "prefopt/errors.hpp"

namespace prefopt::cli {

namespace fs = std::filesystem;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 initialization failed");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[md[i] >> 4]);
    hex.push_back(kHex[md[i] & 0xf]);
  }
  return hex;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_manifest(const Manifest& m) {
  Json j;
  j["format"] = "prefopt-manifest-v1";
  j["command"] = m.command;
  j["config"] = m.config;
  j["seed"] = m.config.contains("seed") ? m.config["seed"] : Json();
  j["dataset"] = m.config.contains("dataset") ? m.config["dataset"] : Json();
  j["out"] = m.out.string();
  j["artifacts"] = Json::object();
  for (const auto& [name, sum] : m.artifacts) j["artifacts"][name] = sum;
  j["duration_seconds"] = m.duration_seconds;
  write_file_atomic(m.out / "manifest.json", j.dump(2) + "\n");
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("manifest not found: " + path.string());
  try {
    const Json j = Json::parse(in);
    if (j.value("format", "") != "prefopt-manifest-v1") {
      throw FormatError(path.string() + ": not a prefopt manifest");
    }
    Manifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.out = j.at("out").get<std::string>();
    for (const auto& [name, sum] : j.at("artifacts").items()) m.artifacts[name] = sum.get<std::string>();
    m.duration_seconds = j.value("duration_seconds", 0.0);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace prefopt::cli
