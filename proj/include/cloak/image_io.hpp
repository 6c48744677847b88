#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "cloak/image.hpp"

namespace cloak {

enum class BitDepth { k8 = 8, k16 = 16 };

// PNG is the only on-disk image format; it is lossless for 8-bit inputs and
// for attack outputs, which live on the 16-bit grid (k / 65535).
Image decode_png(std::span<const unsigned char> bytes);
std::vector<unsigned char> encode_png(const Image& image, BitDepth depth);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image, BitDepth depth);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);

}  // namespace cloak
