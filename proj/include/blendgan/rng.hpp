#pragma once

#include <ATen/core/Generator.h>

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace blendgan {

/// Mixes a root seed with a purpose tag and integer coordinates into an
/// independent 64-bit seed. Every random draw in the toolkit goes through a
/// substream derived this way, so the values drawn never depend on call
/// order or thread scheduling.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                          std::initializer_list<std::int64_t> coords = {});

/// A CPU generator seeded from derive_seed(root, tag, coords).
at::Generator make_generator(std::uint64_t root, std::string_view tag,
                             std::initializer_list<std::int64_t> coords = {});

}  // namespace blendgan
