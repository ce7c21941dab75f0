#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace crdnn {

// FNV-1a, 64 bit. Used for provenance tags, not for integrity.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) noexcept { update(s.data(), s.size()); }
  void update(std::span<const double> xs) noexcept {
    update(xs.data(), xs.size_bytes());
  }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace crdnn
