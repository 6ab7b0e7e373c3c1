#pragma once

// SHA-256 digests of run outputs and the manifest file that lists them.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "deepgsp/error.hpp"

namespace deepgsp {

inline std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              &EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw Error(ErrorKind::kIo, "sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xf];
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string sha256_file(const std::filesystem::path& path) {
  return sha256_hex(read_file(path));
}

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::string sha256;
};

// Hashes the files named by `rel_paths` under `dir` and writes
// "<sha256>  <path>" lines to dir/MANIFEST, sorted by path.
inline std::vector<ManifestEntry> write_manifest(const std::filesystem::path& dir,
                                                 std::vector<std::string> rel_paths) {
  std::sort(rel_paths.begin(), rel_paths.end());
  rel_paths.erase(std::unique(rel_paths.begin(), rel_paths.end()), rel_paths.end());
  std::vector<ManifestEntry> entries;
  for (const auto& p : rel_paths) entries.push_back({p, sha256_file(dir / p)});
  std::ofstream os(dir / "MANIFEST", std::ios::binary);
  if (!os) throw Error(ErrorKind::kIo, "cannot write manifest in " + dir.string());
  for (const auto& e : entries) os << e.sha256 << "  " << e.path << '\n';
  return entries;
}

}  // namespace deepgsp
