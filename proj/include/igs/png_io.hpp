#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace igs {

/// Decoded PNG samples, row-major and channel-interleaved, widened to 16 bits.
struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 gray, 2 gray+alpha, 3 RGB, 4 RGBA
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;
};

/// Encodes with libpng at maximum zlib effort and adaptive per-row filtering.
std::vector<std::uint8_t> encode_png(const PngImage& image);
PngImage decode_png(std::span<const std::uint8_t> bytes);

}  // namespace igs
