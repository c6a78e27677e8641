#include "blendgan/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace blendgan {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                          std::initializer_list<std::int64_t> coords) {
  std::uint64_t h = splitmix64(root);
  for (unsigned char c : tag) h = splitmix64(h ^ c);
  h = splitmix64(h ^ 0xff);
  for (std::int64_t v : coords) h = splitmix64(h ^ static_cast<std::uint64_t>(v));
  return h;
}

at::Generator make_generator(std::uint64_t root, std::string_view tag,
                             std::initializer_list<std::int64_t> coords) {
  return at::detail::createCPUGenerator(derive_seed(root, tag, coords));
}

}  // namespace blendgan
