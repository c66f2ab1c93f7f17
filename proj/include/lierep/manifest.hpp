#pragma once

// Run manifests embedded in every CLI artifact. Requires OpenSSL::Crypto.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <span>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "lierep/dataset.hpp"
#include "lierep/io.hpp"

namespace lierep {

inline constexpr const char* kToolVersion = "0.1.0";

/// Lowercase hex SHA-1 of raw bytes.
inline std::string sha1_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

/// Same id `git hash-object` prints: SHA-1 of "blob <size>\0" + content.
inline std::string git_blob_hash(std::span<const std::uint8_t> content) {
  const std::string header = "blob " + std::to_string(content.size());
  std::vector<std::uint8_t> buf(header.begin(), header.end());
  buf.push_back(0);
  buf.insert(buf.end(), content.begin(), content.end());
  return sha1_hex(buf);
}

inline std::string git_blob_hash_file(const std::string& path) { return git_blob_hash(read_bytes(path)); }

inline std::string git_blob_hash(const std::string& text) {
  return git_blob_hash(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class RunManifest {
 public:
  RunManifest(std::string command, Json config, std::uint64_t seed)
      : command_(std::move(command)), config_(std::move(config)), seed_(seed),
        start_(std::chrono::steady_clock::now()) {}

  void add_input(const std::string& path) { inputs_[path] = git_blob_hash_file(path); }

  /// Volatile fields ("timestamp", "wall_clock_seconds") are the only ones
  /// that differ between repeated runs.
  Json to_json() const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return Json{{"command", command_},
                {"config", config_},
                {"seed", seed_},
                {"inputs", inputs_},
                {"tool_version", kToolVersion},
                {"timestamp", utc_timestamp()},
                {"wall_clock_seconds", wall}};
  }

 private:
  std::string command_;
  Json config_;
  std::uint64_t seed_;
  Json inputs_ = Json::object();
  std::chrono::steady_clock::time_point start_;
};

}  // namespace lierep
