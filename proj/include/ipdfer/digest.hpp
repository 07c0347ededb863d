#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace ipdfer {

using Digest = std::array<unsigned char, 32>;

/// Incremental SHA-256 (OpenSSL-backed).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t len);
  void update_u64(std::uint64_t v);
  Digest finish();

  static Digest of(const void* data, std::size_t len);

 private:
  void* ctx_;
};

std::string to_hex(const Digest& d);

}  // namespace ipdfer
