#include "metaiqa/hashing.hpp"

#include <openssl/evp.h>

#include "metaiqa/error.hpp"

namespace metaiqa {

Digest sha256(std::string_view bytes) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
    fail(ErrorKind::State, "sha256 failed");
  }
  return out;
}

std::string to_hex(const Digest& digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : digest) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 0xF]);
  }
  return s;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::string msg = std::to_string(base);
  msg.push_back('/');
  msg.append(tag);
  const Digest d = sha256(msg);
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out = (out << 8) | d[i];
  return out;
}

}  // namespace metaiqa
