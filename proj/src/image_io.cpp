#include "blendgan/image_io.hpp"

#include "blendgan/errors.hpp"

#include <openssl/evp.h>
#include <png.h>
#include <torch/torch.h>

// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

namespace blendgan {
namespace {

ImageBuffer from_rgb8(const std::uint8_t* data, std::int64_t h, std::int64_t w) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(data), {h, w, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32);
  return ImageBuffer(t / 127.5 - 1.0);
}

std::vector<std::uint8_t> to_rgb8(const ImageBuffer& img) {
  auto t = img.tensor();
  if (t.size(0) == 1) t = t.expand({3, t.size(1), t.size(2)});
  if (t.size(0) != 3) throw InvalidInput("PNG export expects 1 or 3 channels");
  auto bytes = ((t + 1.0) * 127.5).round().clamp(0, 255).to(torch::kUInt8).permute({1, 2, 0})
                   .contiguous();
  const auto* p = bytes.data_ptr<std::uint8_t>();
  return {p, p + bytes.numel()};
}

ImageBuffer decode_png(const Bytes& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw InvalidInput(std::string("PNG decode failed: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    throw InvalidInput(std::string("PNG decode failed: ") + image.message);
  }
  return from_rgb8(buf.data(), image.height, image.width);
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

ImageBuffer decode_jpeg(const Bytes& bytes) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  std::vector<std::uint8_t> pixels;
  std::int64_t h = 0;
  std::int64_t w = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw InvalidInput("JPEG decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = cinfo.output_height;
  w = cinfo.output_width;
  pixels.resize(static_cast<std::size_t>(h * w * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(pixels.data(), h, w);
}

void png_append(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

struct PngReadState {
  const Bytes* bytes;
  std::size_t offset;
};

void png_consume(png_structp png, png_bytep data, png_size_t length) {
  auto* state = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (state->offset + length > state->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(data, state->bytes->data() + state->offset, length);
  state->offset += length;
}

// Fixed colours per identity index so exported maps look the same everywhere.
constexpr std::uint8_t kPalette[][3] = {
    {230, 25, 75},  {60, 180, 75},   {0, 130, 200},  {255, 225, 25}, {245, 130, 48},
    {145, 30, 180}, {70, 240, 240},  {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
    {0, 128, 128},  {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0},
    {170, 255, 195}};

}  // namespace

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open file: " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ImageBuffer decode_image(const Bytes& bytes) {
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return decode_jpeg(bytes);
  }
  throw InvalidInput("unsupported image format (expected PNG or JPEG)");
}

ImageBuffer load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFound("image file not found: " + path.string());
  try {
    return decode_image(read_file(path));
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

Bytes encode_png(const ImageBuffer& img) {
  const auto rgb = to_rgb8(img);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw InvalidInput(std::string("PNG encode failed: ") + image.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw InvalidInput(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

void save_png(const std::filesystem::path& path, const ImageBuffer& img) {
  write_file(path, encode_png(img));
}

Bytes encode_indexed_png(const IndexedImage& img) {
  if (img.palette_size < 1 || img.palette_size > 256) {
    throw InvalidInput("indexed PNG palette must hold 1..256 entries");
  }
  if (static_cast<std::int64_t>(img.indices.size()) != img.height * img.width) {
    throw InvalidInput("indexed PNG pixel count mismatch");
  }
  Bytes out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw InvalidInput("indexed PNG encode failed");
  }
  png_set_write_fn(png, &out, png_append, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> palette(static_cast<std::size_t>(img.palette_size));
  constexpr int kFixed = sizeof(kPalette) / sizeof(kPalette[0]);
  for (int i = 0; i < img.palette_size; ++i) {
    const auto* c = kPalette[i % kFixed];
    palette[i] = {c[0], c[1], c[2]};
  }
  png_set_PLTE(png, info, palette.data(), img.palette_size);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < img.height; ++y) {
    png_write_row(png, img.indices.data() + y * img.width);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

IndexedImage decode_indexed_png(const Bytes& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw InvalidInput("not a PNG stream");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  IndexedImage out;
  std::string failure;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InvalidInput("indexed PNG decode failed" + failure);
  }
  PngReadState state{&bytes, 0};
  png_set_read_fn(png, &state, png_consume);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color_type != PNG_COLOR_TYPE_PALETTE && color_type != PNG_COLOR_TYPE_GRAY) {
    failure = ": expected a palette or 8-bit gray PNG";
    png_error(png, "bad color type");
  }
  if (depth < 8) png_set_packing(png);
  if (depth == 16) {
    failure = ": 16-bit maps are not supported";
    png_error(png, "bad depth");
  }
  png_read_update_info(png, info);
  out.height = png_get_image_height(png, info);
  out.width = png_get_image_width(png, info);
  out.indices.resize(static_cast<std::size_t>(out.height * out.width));
  for (std::int64_t y = 0; y < out.height; ++y) {
    png_read_row(png, out.indices.data() + y * out.width, nullptr);
  }
  png_read_end(png, nullptr);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_colorp palette = nullptr;
    int count = 0;
    png_get_PLTE(png, info, &palette, &count);
    out.palette_size = count;
  } else {
    out.palette_size = 0;
    for (auto v : out.indices) out.palette_size = std::max(out.palette_size, v + 1);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

std::string base64_encode(const Bytes& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(std::string_view text) {
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.remove_suffix(1);
  if (text.size() % 4 != 0) throw InvalidInput("base64 payload length is not a multiple of 4");
  Bytes out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw InvalidInput("malformed base64 payload");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace blendgan
