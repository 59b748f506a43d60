#include "igs/png_io.hpp"

#include <png.h>

#include <cstring>
#include <string>

#include "igs/core.hpp"

namespace igs {

namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

[[noreturn]] void on_error(png_structp, png_const_charp msg) { throw Error(ErrorKind::Data, std::string("png: ") + msg); }
void on_warning(png_structp, png_const_charp) {}

void write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}
void flush_cb(png_structp) {}

void read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->bytes.size()) png_error(png, "truncated stream");
  std::memcpy(data, cur->bytes.data() + cur->pos, len);
  cur->pos += len;
}

int color_type_for(int channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 2: return PNG_COLOR_TYPE_GRAY_ALPHA;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGBA;
    default: throw Error(ErrorKind::Usage, "png: unsupported channel count");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_png(const PngImage& image) {
  if (image.width < 1 || image.height < 1) throw Error(ErrorKind::Usage, "png: empty image");
  if (image.bit_depth != 8 && image.bit_depth != 16) throw Error(ErrorKind::Usage, "png: bit depth must be 8 or 16");
  const std::size_t row_samples = static_cast<std::size_t>(image.width) * image.channels;
  if (image.samples.size() != row_samples * image.height) throw Error(ErrorKind::Usage, "png: sample count mismatch");

  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorKind::Data, "png: allocation failed");
  }
  const int bytes_per_sample = image.bit_depth / 8;
  std::vector<std::uint8_t> row(row_samples * bytes_per_sample);
  try {
    png_set_write_fn(png, &out, write_cb, flush_cb);
    png_set_IHDR(png, info, image.width, image.height, image.bit_depth, color_type_for(image.channels),
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 9);
    png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_ALL_FILTERS);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
      const std::uint16_t* src = image.samples.data() + static_cast<std::size_t>(y) * row_samples;
      for (std::size_t i = 0; i < row_samples; ++i) {
        if (bytes_per_sample == 2) {
          row[2 * i] = static_cast<std::uint8_t>(src[i] >> 8);
          row[2 * i + 1] = static_cast<std::uint8_t>(src[i] & 0xff);
        } else {
          row[i] = static_cast<std::uint8_t>(src[i]);
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

PngImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw Error(ErrorKind::Data, "png: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorKind::Data, "png: allocation failed");
  }
  ReadCursor cur{bytes, 0};
  PngImage img;
  try {
    png_set_read_fn(png, &cur, read_cb);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = png_get_channels(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> raw(rowbytes * img.height);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = raw.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    img.samples.resize(n);
    for (int y = 0; y < img.height; ++y) {
      const std::uint8_t* r = rows[y];
      const std::size_t rs = static_cast<std::size_t>(img.width) * img.channels;
      for (std::size_t i = 0; i < rs; ++i) {
        img.samples[y * rs + i] = img.bit_depth == 16 ? static_cast<std::uint16_t>((r[2 * i] << 8) | r[2 * i + 1]) : r[i];
      }
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace igs
