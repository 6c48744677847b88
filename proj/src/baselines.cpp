#include "cloak/baselines.hpp"

// jpeglib.h expects FILE and size_t to be declared first.
#include <cstddef>
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <random>

#include "cloak/errors.hpp"

namespace cloak {

std::string to_string(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kLowBrightness: return "low_brightness";
    case BaselineMethod::kGaussianBlur: return "gaussian_blur";
    case BaselineMethod::kMosaic: return "mosaic";
    case BaselineMethod::kAdditiveNoise: return "additive_noise";
    case BaselineMethod::kJpegCompression: return "jpeg_compression";
  }
  return "unknown";
}

BaselineMethod baseline_method_from_string(const std::string& name) {
  for (auto m : {BaselineMethod::kLowBrightness, BaselineMethod::kGaussianBlur, BaselineMethod::kMosaic,
                 BaselineMethod::kAdditiveNoise, BaselineMethod::kJpegCompression}) {
    if (to_string(m) == name) return m;
  }
  throw InvalidInput("unknown baseline method '" + name + "'");
}

void BaselineSpec::validate() const {
  switch (method) {
    case BaselineMethod::kLowBrightness:
      if (!(parameter > 0.0 && parameter < 1.0)) throw InvalidInput("brightness factor must lie in (0,1)");
      break;
    case BaselineMethod::kGaussianBlur:
      if (!(parameter > 0.0)) throw InvalidInput("blur sigma must be positive");
      break;
    case BaselineMethod::kMosaic:
      if (!(parameter >= 2.0) || parameter != std::floor(parameter)) {
        throw InvalidInput("mosaic block size must be an integer >= 2");
      }
      break;
    case BaselineMethod::kAdditiveNoise:
      if (!(parameter > 0.0)) throw InvalidInput("noise sigma must be positive");
      break;
    case BaselineMethod::kJpegCompression:
      if (!(parameter >= 1.0 && parameter <= 100.0) || parameter != std::floor(parameter)) {
        throw InvalidInput("JPEG quality must be an integer in [1,100]");
      }
      break;
  }
}

BaselineSpec BaselineSpec::defaults(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kLowBrightness: return {method, 0.1, 0};
    case BaselineMethod::kGaussianBlur: return {method, 3.0, 0};
    case BaselineMethod::kMosaic: return {method, 16.0, 0};
    case BaselineMethod::kAdditiveNoise: return {method, 0.08, 0};
    case BaselineMethod::kJpegCompression: return {method, 10.0, 0};
  }
  return {};
}

std::vector<BaselineSpec> default_baselines() {
  return {BaselineSpec::defaults(BaselineMethod::kLowBrightness), BaselineSpec::defaults(BaselineMethod::kGaussianBlur),
          BaselineSpec::defaults(BaselineMethod::kMosaic), BaselineSpec::defaults(BaselineMethod::kAdditiveNoise),
          BaselineSpec::defaults(BaselineMethod::kJpegCompression)};
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw InvalidInput("blur sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += taps[i + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

namespace {

// Mirror index into [0, n) without repeating the edge sample (... 2 1 | 0 1 2 ... n-1 | n-2 ...).
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image gaussian_blur(const Image& image, double sigma) {
  const auto taps = gaussian_kernel(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  const int H = image.height(), W = image.width();
  Image tmp(H, W), out(H, W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * image.at(y, reflect(x + k, W), c);
        tmp.at(y, x, c) = acc;
      }
    }
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * tmp.at(reflect(y + k, H), x, c);
        out.at(y, x, c) = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

Image mosaic(const Image& image, int block) {
  Image out = image;
  for (int ty = 0; ty < image.height(); ty += block) {
    for (int tx = 0; tx < image.width(); tx += block) {
      const int y1 = std::min(ty + block, image.height()), x1 = std::min(tx + block, image.width());
      for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (int y = ty; y < y1; ++y) {
          for (int x = tx; x < x1; ++x) sum += image.at(y, x, c);
        }
        const double mean = sum / (static_cast<double>(y1 - ty) * (x1 - tx));
        for (int y = ty; y < y1; ++y) {
          for (int x = tx; x < x1; ++x) out.at(y, x, c) = mean;
        }
      }
    }
  }
  return out;
}

Image additive_noise(const Image& image, double sigma, std::uint64_t seed) {
  Image out = image;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& v : out.data()) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return out;
}

struct JpegError {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegError*>(info->err);
  std::longjmp(err->jump, 1);
}

// Returns false on codec failure. No destructible objects live across setjmp.
bool jpeg_encode(const unsigned char* rgb, int width, int height, int quality, unsigned char** buffer,
                 unsigned long* size) {
  jpeg_compress_struct cinfo;
  JpegError jerr;
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_compress(&cinfo);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, buffer, size);
  cinfo.image_width = static_cast<JDIMENSION>(width);
  cinfo.image_height = static_cast<JDIMENSION>(height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<unsigned char*>(rgb) + static_cast<std::size_t>(cinfo.next_scanline) * width * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}

bool jpeg_decode(const unsigned char* data, unsigned long size, unsigned char* rgb, int width, int height) {
  jpeg_decompress_struct cinfo;
  JpegError jerr;
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, size);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  if (static_cast<int>(cinfo.output_width) != width || static_cast<int>(cinfo.output_height) != height ||
      cinfo.output_components != 3) {
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

}  // namespace

Image jpeg_round_trip(const Image& image, int quality) {
  if (quality < 1 || quality > 100) throw InvalidInput("JPEG quality must lie in [1,100]");
  const int W = image.width(), H = image.height();
  std::vector<unsigned char> rgb(image.size());
  const auto px = image.data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    rgb[i] = static_cast<unsigned char>(std::lround(std::clamp(px[i], 0.0, 1.0) * 255.0));
  }
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  const bool encoded = jpeg_encode(rgb.data(), W, H, quality, &buffer, &size);
  std::vector<unsigned char> compressed;
  if (encoded) compressed.assign(buffer, buffer + size);
  std::free(buffer);
  if (!encoded) throw InvalidInput("JPEG encoding failed");
  std::vector<unsigned char> decoded(rgb.size());
  if (!jpeg_decode(compressed.data(), static_cast<unsigned long>(compressed.size()), decoded.data(), W, H)) {
    throw InvalidInput("JPEG decoding failed");
  }
  Image out(H, W);
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = decoded[i] / 255.0;
  return out;
}

Image apply_baseline(const Image& image, const BaselineSpec& spec) {
  spec.validate();
  if (image.empty()) throw InvalidInput("cannot process an empty image");
  switch (spec.method) {
    case BaselineMethod::kLowBrightness: {
      Image out = image;
      for (double& v : out.data()) v *= spec.parameter;
      return out;
    }
    case BaselineMethod::kGaussianBlur: return gaussian_blur(image, spec.parameter);
    case BaselineMethod::kMosaic: return mosaic(image, static_cast<int>(spec.parameter));
    case BaselineMethod::kAdditiveNoise: return additive_noise(image, spec.parameter, spec.seed);
    case BaselineMethod::kJpegCompression: return jpeg_round_trip(image, static_cast<int>(spec.parameter));
  }
  throw InvalidInput("unknown baseline method");
}

}  // namespace cloak
