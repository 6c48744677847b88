#include "cloak/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "cloak/errors.hpp"

namespace cloak {
namespace {

struct ReadCursor {
  const unsigned char* data;
  std::size_t size;
  std::size_t offset;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + length > cursor->size) png_error(png, "truncated PNG stream");
  std::memcpy(out, cursor->data + cursor->offset, length);
  cursor->offset += length;
}

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

struct DecodedRaster {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int bit_depth = 0;
  std::vector<unsigned char> rows;  // RGB, 1 or 2 bytes per sample, big-endian
};

// No C++ objects with destructors may be constructed between setjmp and the
// longjmp that libpng performs on error; `raster` is allocated by the caller.
bool decode_raster(std::span<const unsigned char> bytes, DecodedRaster& raster, char* message) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  std::vector<png_bytep>* row_ptrs = new std::vector<png_bytep>();
  if (setjmp(png_jmpbuf(png))) {
    std::snprintf(message, 128, "libpng failed while decoding");
    delete row_ptrs;
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  ReadCursor cursor{bytes.data(), bytes.size(), 0};
  png_set_read_fn(png, &cursor, read_from_memory);
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  raster.width = png_get_image_width(png, info);
  raster.height = png_get_image_height(png, info);
  raster.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raster.rows.resize(rowbytes * raster.height);
  row_ptrs->resize(raster.height);
  for (png_uint_32 y = 0; y < raster.height; ++y) (*row_ptrs)[y] = raster.rows.data() + y * rowbytes;
  png_read_image(png, row_ptrs->data());
  png_read_end(png, nullptr);
  delete row_ptrs;
  png_destroy_read_struct(&png, &info, nullptr);
  (void)depth;
  return true;
}

bool encode_raster(const std::vector<unsigned char>& rows, int width, int height, int bit_depth,
                   std::vector<unsigned char>& out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  std::vector<png_bytep>* row_ptrs = new std::vector<png_bytep>(static_cast<std::size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    delete row_ptrs;
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, &out, write_to_vector, flush_noop);
  png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = static_cast<std::size_t>(width) * 3 * (bit_depth / 8);
  for (int y = 0; y < height; ++y) {
    (*row_ptrs)[y] = const_cast<unsigned char*>(rows.data()) + y * rowbytes;
  }
  png_write_image(png, row_ptrs->data());
  png_write_end(png, nullptr);
  delete row_ptrs;
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

Image decode_png(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw LoadError("not a PNG stream");
  DecodedRaster raster;
  char message[128] = "libpng initialisation failed";
  if (!decode_raster(bytes, raster, message)) throw LoadError(message);

  Image image(static_cast<int>(raster.height), static_cast<int>(raster.width));
  auto px = image.data();
  if (raster.bit_depth == 16) {
    for (std::size_t i = 0; i < px.size(); ++i) {
      const unsigned level = (static_cast<unsigned>(raster.rows[2 * i]) << 8) | raster.rows[2 * i + 1];
      px[i] = level / 65535.0;
    }
  } else {
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = raster.rows[i] / 255.0;
  }
  return image;
}

std::vector<unsigned char> encode_png(const Image& image, BitDepth depth) {
  if (image.empty()) throw InvalidInput("cannot encode an empty image");
  const auto px = image.data();
  std::vector<unsigned char> rows;
  if (depth == BitDepth::k16) {
    rows.resize(px.size() * 2);
    for (std::size_t i = 0; i < px.size(); ++i) {
      const auto level = static_cast<unsigned>(std::lround(std::clamp(px[i], 0.0, 1.0) * 65535.0));
      rows[2 * i] = static_cast<unsigned char>(level >> 8);
      rows[2 * i + 1] = static_cast<unsigned char>(level & 0xff);
    }
  } else {
    rows.resize(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
      rows[i] = static_cast<unsigned char>(std::lround(std::clamp(px[i], 0.0, 1.0) * 255.0));
    }
  }
  std::vector<unsigned char> out;
  if (!encode_raster(rows, image.width(), image.height(), static_cast<int>(depth), out)) {
    throw LoadError("libpng failed while encoding");
  }
  return out;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Image read_png(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_png(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image& image, BitDepth depth) {
  const auto bytes = encode_png(image, depth);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("short write to " + path.string());
}

}  // namespace cloak
