#pragma once

#include "blendgan/tensor_pyramid.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace blendgan {

using Bytes = std::vector<std::uint8_t>;

/// PNG or JPEG (detected from the signature) as a 3-channel image in [-1,1].
ImageBuffer load_image(const std::filesystem::path& path);
ImageBuffer decode_image(const Bytes& bytes);

/// 8-bit RGB PNG; values are mapped back from [-1,1] and rounded.
Bytes encode_png(const ImageBuffer& img);
void save_png(const std::filesystem::path& path, const ImageBuffer& img);

/// Palette PNG whose pixel values are identity indices.
struct IndexedImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> indices;  // row-major
  int palette_size = 0;
};

Bytes encode_indexed_png(const IndexedImage& img);
IndexedImage decode_indexed_png(const Bytes& bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Bytes& bytes);

std::string base64_encode(const Bytes& bytes);
Bytes base64_decode(std::string_view text);

}  // namespace blendgan
