#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace mtl {

// SHA-256 (FIPS 180-4). Used for content-addressing datasets, checkpoints,
// and parameter snapshots in run manifests and invariance checks.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, std::size_t len);
  std::string hex_digest();  // finalizes; further updates are invalid

 private:
  void process_block(const unsigned char* block);

  std::uint32_t h_[8];
  unsigned char buf_[64];
  std::size_t buf_len_ = 0;
  std::uint64_t total_bits_ = 0;
  bool done_ = false;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);  // IoError when unreadable

}  // namespace mtl
