#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pgt {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

// Encoder settings are fixed (no timestamps, fixed zlib level) so identical
// images always produce identical bytes.
std::vector<std::byte> encode_png(const GrayImage& image);
std::vector<std::byte> encode_png(const RgbImage& image);

/// Decodes 8-bit grayscale PNGs only.
GrayImage decode_png_gray(std::span<const std::byte> bytes);

std::vector<std::byte> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace pgt
