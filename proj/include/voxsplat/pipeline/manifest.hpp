#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "voxsplat/core/binary_io.hpp"
#include "voxsplat/core/error.hpp"

namespace voxsplat::pipeline {

/// Git blob hash: SHA-1 over "blob <size>\0" followed by the content.
inline std::string git_blob_hash(const std::vector<std::uint8_t>& content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error("git_blob_hash: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("git_blob_hash: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

inline std::string git_blob_hash_file(const std::string& path) { return git_blob_hash(io::read_file(path)); }

/// Hashes a file, or every regular file of a directory (sorted, keyed by
/// relative path).
inline nlohmann::json hash_input(const std::string& path) {
  namespace fs = std::filesystem;
  if (path.empty()) return nullptr;
  if (!fs::is_directory(path)) return git_blob_hash_file(path);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : files) out[f.filename().string()] = git_blob_hash_file(f.string());
  return out;
}

inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  io::write_text(tmp, text);
  std::filesystem::rename(tmp, path);
}

}  // namespace voxsplat::pipeline
