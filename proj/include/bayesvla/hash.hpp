#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace bayesvla {

// FNV-1a 64-bit, used for config hashes, checkpoint parameter hashes and
// scene signatures. Stable across platforms for identical byte streams.
class Hasher {
 public:
  Hasher() : h_(0xcbf29ce484222325ULL) {}

  Hasher& update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Hasher& update(std::string_view s) { return update(s.data(), s.size()); }

  template <class T>
  Hasher& update_pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    return update(&v, sizeof(T));
  }

  template <class T>
  Hasher& update_vec(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if (!v.empty()) update(v.data(), v.size() * sizeof(T));
    return *this;
  }

  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_;
};

inline std::uint64_t fnv1a(std::string_view s) {
  return Hasher().update(s).digest();
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace bayesvla
