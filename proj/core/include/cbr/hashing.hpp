#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cbr {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// Git blob object id (SHA-1 over "blob <size>\0" + content).
std::string git_blob_hash(std::string_view content);

/// git_blob_hash of a file's bytes. Throws IoError if unreadable.
std::string git_blob_hash_file(const std::filesystem::path& path);

/// 64-bit FNV-1a with a seed folded into the offset basis.
constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Incremental SHA-256 over heterogeneous fields. Each field is length
/// prefixed so that concatenation ambiguities cannot collide.
class Sha256Builder {
 public:
  Sha256Builder();
  ~Sha256Builder();
  Sha256Builder(const Sha256Builder&) = delete;
  Sha256Builder& operator=(const Sha256Builder&) = delete;

  Sha256Builder& add(std::string_view field);
  Sha256Builder& add_u64(std::uint64_t value);
  Sha256Builder& add_f64(double value);
  Sha256Builder& add_raw(const void* data, std::size_t size);
  std::string hex();

 private:
  void* ctx_;
};

}  // namespace cbr
