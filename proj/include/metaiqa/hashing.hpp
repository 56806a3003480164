#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace metaiqa {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view bytes);
std::string to_hex(const Digest& digest);

/// Stable 64-bit seed for a named sub-stream of `base`.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

}  // namespace metaiqa
