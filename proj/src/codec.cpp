#include "igs/codec.hpp"

#include <zlib.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <unistd.h>

#include "igs/png_io.hpp"

namespace igs {

namespace {

// ---- little-endian byte helpers ----

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;

  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xff));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void f64(double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    u64(u);
  }
  void half(double v) {
    const Eigen::half h(static_cast<float>(v));
    u16(Eigen::numext::bit_cast<std::uint16_t>(h));
  }
  void append(std::span<const std::uint8_t> b) { bytes.insert(bytes.end(), b.begin(), b.end()); }
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> b, std::string section) : bytes_(b), section_(std::move(section)) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    const std::uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  double f64() {
    const std::uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  double half() { return static_cast<double>(Eigen::numext::bit_cast<Eigen::half>(u16())); }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> rest() { return take(bytes_.size() - pos_); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw ContainerException(ContainerError::Truncated, section_, "section " + section_ + " is truncated");
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string section_;
};

std::uint32_t crc_of(std::span<const std::uint8_t> b) {
  return static_cast<std::uint32_t>(crc32(0L, b.data(), static_cast<uInt>(b.size())));
}

std::vector<std::uint8_t> deflate_bytes(std::span<const std::uint8_t> in) {
  uLongf len = compressBound(static_cast<uLong>(in.size()));
  std::vector<std::uint8_t> out(len);
  if (compress2(out.data(), &len, in.data(), static_cast<uLong>(in.size()), 9) != Z_OK) {
    throw Error(ErrorKind::Data, "deflate failed");
  }
  out.resize(len);
  return out;
}

std::vector<std::uint8_t> inflate_bytes(std::span<const std::uint8_t> in, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf len = static_cast<uLongf>(expected);
  if (uncompress(out.data(), &len, in.data(), static_cast<uLong>(in.size())) != Z_OK || len != expected) {
    throw Error(ErrorKind::Data, "inflate failed or produced an unexpected size");
  }
  return out;
}

std::uint64_t spread3(std::uint64_t x) {
  x &= 0xffff;
  x = (x | (x << 32)) & 0x1f00000000ffffULL;
  x = (x | (x << 16)) & 0x1f0000ff0000ffULL;
  x = (x | (x << 8)) & 0x100f00f00f00f00fULL;
  x = (x | (x << 4)) & 0x10c30c30c30c30c3ULL;
  x = (x | (x << 2)) & 0x1249249249249249ULL;
  return x;
}

std::uint16_t compact3(std::uint64_t x) {
  x &= 0x1249249249249249ULL;
  x = (x ^ (x >> 2)) & 0x10c30c30c30c30c3ULL;
  x = (x ^ (x >> 4)) & 0x100f00f00f00f00fULL;
  x = (x ^ (x >> 8)) & 0x1f0000ff0000ffULL;
  x = (x ^ (x >> 16)) & 0x1f00000000ffffULL;
  x = (x ^ (x >> 32)) & 0xffffULL;
  return static_cast<std::uint16_t>(x);
}

// ---- plane quantization ----

struct Range {
  float min = 0.0f;
  float max = 0.0f;
};

Range range_of(std::span<const double> values) {
  if (values.empty()) return {};
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return {static_cast<float>(*lo), static_cast<float>(*hi)};
}

// Shifts the grid by at most half a step so that 0 lands on a code. The data
// extremes still map to the end codes, and an aligned range is left as is.
Range zero_aligned(const Range& r, int steps) {
  if (!(r.min < 0.0f && r.max > 0.0f) || steps < 1) return r;
  const double width = static_cast<double>(r.max) - r.min;
  const double t0 = -static_cast<double>(r.min) / width * steps;
  const double k0 = std::round(t0);
  if (std::abs(t0 - k0) <= 0.05) return r;
  const double step = width / steps;
  const double lo = -k0 * step;
  return {static_cast<float>(lo), static_cast<float>(lo + width)};
}

std::uint16_t code_of(double v, const Range& r, int steps) {
  if (!(r.max > r.min)) return 0;
  const double t = (v - r.min) / (static_cast<double>(r.max) - r.min);
  const double k = std::round(std::clamp(t, 0.0, 1.0) * steps);
  return static_cast<std::uint16_t>(k);
}

double value_of(std::uint16_t k, const Range& r, int steps) {
  if (!(r.max > r.min) || steps == 0) return r.min;
  const double t = static_cast<double>(k) / steps;
  return static_cast<double>(r.min) * (1.0 - t) + static_cast<double>(r.max) * t;
}

constexpr std::uint8_t kLayoutChannelMajor = 0;

std::filesystem::path find_on_path(const std::string& exe) {
  const char* path = std::getenv("PATH");
  if (!path) return {};
  std::stringstream ss(path);
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    if (dir.empty()) continue;
    const std::filesystem::path p = std::filesystem::path(dir) / exe;
    std::error_code ec;
    if (std::filesystem::is_regular_file(p, ec)) return p;
  }
  return {};
}

[[noreturn]] void heic_unavailable() {
  throw Error(ErrorKind::Usage, "HEIC backend unavailable (heif-enc/heif-dec not found on PATH); use --backend qdef");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Data, "cannot read " + p.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& p, std::span<const std::uint8_t> b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw Error(ErrorKind::Data, "cannot write " + p.string());
}

std::filesystem::path temp_path(const std::string& stem) {
  static int counter = 0;
  return std::filesystem::temp_directory_path() / (stem + "_" + std::to_string(::getpid()) + "_" +
                                                   std::to_string(counter++));
}

// Tiled sample index for plane p, grid vertex (u, v), channel c.
std::size_t tile_index(int r, int p, int u, int v, int c) {
  const std::size_t row = static_cast<std::size_t>(c) * r + v;
  return row * (3 * static_cast<std::size_t>(r)) + static_cast<std::size_t>(p) * r + u;
}

const std::array<const char*, 3> kPlaneTags = {"PLN1", "PLN2", "PLN3"};
const std::array<const char*, 3> kMlpTags = {"MLP1", "MLP2", "MLP3"};

}  // namespace

// ---- Morton ----

std::uint64_t morton_encode(std::uint16_t x, std::uint16_t y, std::uint16_t z) {
  return spread3(x) | (spread3(y) << 1) | (spread3(z) << 2);
}

std::array<std::uint16_t, 3> morton_decode(std::uint64_t code) {
  return {compact3(code), compact3(code >> 1), compact3(code >> 2)};
}

// ---- points ----

std::uint16_t quantize_coord(double t) {
  if (t < -1.0 || t > 1.0) {
    diagnostics().points_clamped++;
    t = std::clamp(t, -1.0, 1.0);
  }
  return static_cast<std::uint16_t>(std::lround((t + 1.0) * 0.5 * 65535.0));
}

double dequantize_coord(std::uint16_t q) { return 2.0 * (static_cast<double>(q) / 65535.0) - 1.0; }

std::vector<QuantizedCoord> quantize_points(std::span<const Vec3> positions, const BoundingBox& bbox) {
  std::vector<QuantizedCoord> out(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Vec3 t = (positions[i] - bbox.center) / bbox.half_extent;
    for (int a = 0; a < 3; ++a) out[i][a] = quantize_coord(t[a]);
  }
  return out;
}

SortedPoints sort_points(std::span<const Vec3> positions, const BoundingBox& bbox) {
  const std::vector<QuantizedCoord> q = quantize_points(positions, bbox);
  std::vector<std::uint64_t> codes(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) codes[i] = morton_encode(q[i][0], q[i][1], q[i][2]);
  SortedPoints s;
  s.order.resize(q.size());
  std::iota(s.order.begin(), s.order.end(), std::size_t{0});
  std::stable_sort(s.order.begin(), s.order.end(), [&](std::size_t a, std::size_t b) { return codes[a] < codes[b]; });
  s.coords.reserve(q.size());
  for (std::size_t i : s.order) s.coords.push_back(q[i]);
  return s;
}

PointImage pack_point_image(std::span<const QuantizedCoord> coords) {
  const std::size_t n = coords.size();
  if (n == 0) throw Error(ErrorKind::Usage, "cannot pack an empty point set");
  PointImage img;
  img.width = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  while (static_cast<std::size_t>(img.width) * img.width < n) ++img.width;
  while (img.width > 1 && static_cast<std::size_t>(img.width - 1) * (img.width - 1) >= n) --img.width;
  const std::size_t w = static_cast<std::size_t>(img.width);
  const std::size_t bh = (n + w - 1) / w;
  img.height = static_cast<int>(3 * bh);
  img.samples.assign(w * 3 * bh, 0);
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < n; ++i) img.samples[a * bh * w + i] = coords[i][a];
  }
  return img;
}

std::vector<QuantizedCoord> unpack_point_image(const PointImage& img, std::size_t n) {
  const std::size_t w = static_cast<std::size_t>(img.width);
  if (img.height % 3 != 0 || w * (img.height / 3) < n || img.samples.size() != w * img.height) {
    throw Error(ErrorKind::Data, "point image does not match the recorded point count");
  }
  const std::size_t bh = static_cast<std::size_t>(img.height) / 3;
  std::vector<QuantizedCoord> out(n);
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < n; ++i) out[i][a] = img.samples[a * bh * w + i];
  }
  return out;
}

std::vector<std::uint8_t> point_png(std::span<const Vec3> positions, const BoundingBox& bbox, bool morton_sorted) {
  const PointImage img =
      pack_point_image(morton_sorted ? sort_points(positions, bbox).coords : quantize_points(positions, bbox));
  PngImage png;
  png.width = img.width;
  png.height = img.height;
  png.channels = 1;
  png.bit_depth = 16;
  png.samples = img.samples;
  return encode_png(png);
}

PointPayload encode_points(std::span<const Vec3> positions, const BoundingBox& bbox) {
  ByteWriter raw;
  for (const Vec3& p : positions) {
    for (int a = 0; a < 3; ++a) raw.half(p[a]);
  }
  PointPayload best{PointMode::Raw16F, std::move(raw.bytes)};
  try {
    std::vector<std::uint8_t> png = point_png(positions, bbox, true);
    if (png.size() < best.bytes.size()) best = {PointMode::SortedPng, std::move(png)};
  } catch (const Error&) {
    // Keep the RAW16F candidate.
  }
  return best;
}

std::vector<Vec3> decode_points(const PointPayload& payload, const BoundingBox& bbox, std::size_t n) {
  std::vector<Vec3> out(n);
  if (payload.mode == PointMode::Raw16F) {
    if (payload.bytes.size() != n * 6) throw Error(ErrorKind::Data, "RAW16F point payload has the wrong size");
    ByteReader r(payload.bytes, "PNTS");
    for (Vec3& p : out) {
      for (int a = 0; a < 3; ++a) p[a] = r.half();
    }
    return out;
  }
  const PngImage png = decode_png(payload.bytes);
  if (png.channels != 1 || png.bit_depth != 16) throw Error(ErrorKind::Data, "point image must be 16-bit gray");
  PointImage img{png.width, png.height, png.samples};
  const std::vector<QuantizedCoord> q = unpack_point_image(img, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) out[i][a] = bbox.center[a] + bbox.half_extent * dequantize_coord(q[i][a]);
  }
  return out;
}

// ---- planes ----

QuantizedPlane quantize_plane(const FeaturePlane& plane, int bits, int levels) {
  if (bits != 8 && bits != 16) throw Error(ErrorKind::Usage, "plane quantization supports 8 or 16 bits");
  const int max_levels = 1 << bits;
  if (levels == 0) levels = max_levels;
  if (levels < 2 || levels > max_levels) throw Error(ErrorKind::Usage, "code count out of range for bit depth");
  QuantizedPlane q;
  q.bits = bits;
  q.levels = levels;
  q.width = plane.width;
  q.height = plane.height;
  q.channels = plane.channels;
  const Range r = range_of(plane.data);
  q.min = r.min;
  q.max = r.max;
  q.codes.resize(plane.data.size());
  for (std::size_t i = 0; i < plane.data.size(); ++i) q.codes[i] = code_of(plane.data[i], r, levels - 1);
  return q;
}

FeaturePlane dequantize_plane(const QuantizedPlane& q) {
  FeaturePlane p;
  p.width = q.width;
  p.height = q.height;
  p.channels = q.channels;
  p.data.resize(q.codes.size());
  const Range r{q.min, q.max};
  for (std::size_t i = 0; i < q.codes.size(); ++i) p.data[i] = value_of(q.codes[i], r, q.levels - 1);
  return p;
}

PlaneBackend parse_backend(const std::string& name) {
  if (name == "qdef") return PlaneBackend::Qdef;
  if (name == "heic") return PlaneBackend::Heic;
  throw Error(ErrorKind::Usage, "unknown plane backend '" + name + "' (expected qdef or heic)");
}

std::string backend_name(PlaneBackend backend) { return backend == PlaneBackend::Qdef ? "qdef" : "heic"; }

bool heic_available() { return !find_on_path("heif-enc").empty() && !find_on_path("heif-dec").empty(); }

int qdef_levels(int quality) {
  if (quality < 0 || quality > 100) throw Error(ErrorKind::Usage, "quality must be in 0..100");
  if (quality == 100) return 65536;
  return static_cast<int>(std::lround(std::exp2(2.0 + 6.0 * quality / 99.0)));
}

QualityTuple parse_quality(const std::string& text) {
  QualityTuple q{};
  std::stringstream ss(text);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 3) throw Error(ErrorKind::Usage, "quality needs exactly three values q1,q2,q3");
    try {
      std::size_t used = 0;
      q[i] = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Usage, "invalid quality value '" + item + "'");
    }
    if (q[i] < 0 || q[i] > 100) throw Error(ErrorKind::Usage, "quality values must be in 0..100");
    ++i;
  }
  if (i != 3) throw Error(ErrorKind::Usage, "quality needs exactly three values q1,q2,q3");
  return q;
}

QualityTuple quality_preset(int index) {
  static const std::array<QualityTuple, 7> presets = {{{45, 35, 10},
                                                       {45, 45, 10},
                                                       {55, 45, 10},
                                                       {55, 60, 20},
                                                       {70, 60, 40},
                                                       {90, 75, 40},
                                                       {100, 100, 100}}};
  if (index < 0 || index > 6) throw Error(ErrorKind::Usage, "preset index must be 0..6");
  return presets[index];
}

QualityTuple quality_preset(const std::string& name) {
  if (name.size() == 2 && (name[0] == 'P' || name[0] == 'p') && name[1] >= '0' && name[1] <= '6') {
    return quality_preset(name[1] - '0');
  }
  throw Error(ErrorKind::Usage, "unknown preset '" + name + "' (expected P0..P6)");
}

std::vector<std::uint8_t> encode_level(const TriPlaneLevel& level, int quality, PlaneBackend backend) {
  const int r = level.planes[0].width;
  const int m = level.planes[0].channels;
  std::vector<double> tiled(static_cast<std::size_t>(3) * r * m * r);
  for (int p = 0; p < 3; ++p) {
    const FeaturePlane& f = level.planes[p];
    for (int v = 0; v < r; ++v)
      for (int u = 0; u < r; ++u)
        for (int c = 0; c < m; ++c) tiled[tile_index(r, p, u, v, c)] = f.at(u, v, c);
  }
  const int levels = backend == PlaneBackend::Heic ? 256 : qdef_levels(quality);
  const Range range = zero_aligned(range_of(tiled), levels - 1);
  const int bits = levels > 256 ? 16 : 8;
  std::vector<std::uint8_t> codes;
  codes.reserve(tiled.size() * (bits / 8));
  for (double v : tiled) {
    const std::uint16_t k = code_of(v, range, levels - 1);
    if (bits == 16) {
      codes.push_back(static_cast<std::uint8_t>(k & 0xff));
      codes.push_back(static_cast<std::uint8_t>(k >> 8));
    } else {
      codes.push_back(static_cast<std::uint8_t>(k));
    }
  }

  std::vector<std::uint8_t> body;
  if (backend == PlaneBackend::Qdef) {
    body = deflate_bytes(codes);
  } else {
    if (!heic_available()) heic_unavailable();
    PngImage png;
    png.width = 3 * r;
    png.height = m * r;
    png.channels = 1;
    png.bit_depth = 8;
    png.samples.assign(codes.begin(), codes.end());
    const auto in = temp_path("igs_plane").replace_extension(".png");
    const auto out = temp_path("igs_plane").replace_extension(".heic");
    write_file_bytes(in, encode_png(png));
    const std::string cmd = find_on_path("heif-enc").string() + " -q " + std::to_string(quality) + " -o " +
                            out.string() + " " + in.string() + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    std::filesystem::remove(in);
    if (rc != 0) throw Error(ErrorKind::Data, "heif-enc failed");
    body = read_file_bytes(out);
    std::filesystem::remove(out);
  }

  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(bits));
  w.u8(kLayoutChannelMajor);
  w.u16(static_cast<std::uint16_t>(levels - 1));
  w.f32(range.min);
  w.f32(range.max);
  w.u32(static_cast<std::uint32_t>(body.size()));
  w.append(body);
  return std::move(w.bytes);
}

TriPlaneLevel decode_level_planes(std::span<const std::uint8_t> payload, int r, int m, PlaneBackend backend) {
  ByteReader rd(payload, "plane");
  const int bits = rd.u8();
  const int layout = rd.u8();
  const int steps = rd.u16();
  const Range range{rd.f32(), rd.f32()};
  const std::uint32_t len = rd.u32();
  if ((bits != 8 && bits != 16) || layout != kLayoutChannelMajor || steps < 1 || (bits == 8 && steps > 255)) {
    throw Error(ErrorKind::Data, "invalid plane payload header");
  }
  const std::span<const std::uint8_t> body = rd.take(len);
  if (rd.remaining() != 0) throw Error(ErrorKind::Data, "trailing bytes in plane payload");
  const std::size_t n = static_cast<std::size_t>(3) * r * m * r;
  std::vector<std::uint16_t> codes(n);
  if (backend == PlaneBackend::Qdef) {
    const std::vector<std::uint8_t> raw = inflate_bytes(body, n * (bits / 8));
    for (std::size_t i = 0; i < n; ++i) {
      codes[i] = bits == 16 ? static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8)) : raw[i];
    }
  } else {
    if (!heic_available()) heic_unavailable();
    const auto in = temp_path("igs_plane").replace_extension(".heic");
    const auto out = temp_path("igs_plane").replace_extension(".png");
    write_file_bytes(in, body);
    const std::string cmd =
        find_on_path("heif-dec").string() + " " + in.string() + " " + out.string() + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    std::filesystem::remove(in);
    if (rc != 0) throw Error(ErrorKind::Data, "heif-dec failed");
    const PngImage png = decode_png(read_file_bytes(out));
    std::filesystem::remove(out);
    if (png.width != 3 * r || png.height != m * r) throw Error(ErrorKind::Data, "HEIC plane image has the wrong size");
    for (std::size_t i = 0; i < n; ++i) {
      codes[i] = png.bit_depth == 16 ? static_cast<std::uint16_t>(png.samples[i * png.channels] >> 8)
                                     : png.samples[i * png.channels];
    }
  }

  TriPlaneLevel level;
  for (int p = 0; p < 3; ++p) {
    FeaturePlane& f = level.planes[p];
    f.width = f.height = r;
    f.channels = m;
    f.data.assign(static_cast<std::size_t>(r) * r * m, 0.0);
    for (int v = 0; v < r; ++v)
      for (int u = 0; u < r; ++u)
        for (int c = 0; c < m; ++c) f.at(u, v, c) = value_of(codes[tile_index(r, p, u, v, c)], range, steps);
  }
  return level;
}

// ---- MLPs ----

double round_to_half(double v) { return static_cast<double>(static_cast<float>(Eigen::half(static_cast<float>(v)))); }

std::vector<std::uint8_t> encode_mlp(const MlpDecoder& decoder) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(decoder.layers().size()));
  for (const DenseLayer& l : decoder.layers()) {
    w.u16(static_cast<std::uint16_t>(l.weight.rows()));
    w.u16(static_cast<std::uint16_t>(l.weight.cols()));
  }
  for (const DenseLayer& l : decoder.layers()) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) w.half(l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.half(l.bias[i]);
  }
  return std::move(w.bytes);
}

MlpDecoder decode_mlp(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "MLP");
  const int n = r.u8();
  if (n < 1) throw Error(ErrorKind::Data, "MLP blob has no layers");
  std::vector<DenseLayer> layers(n);
  for (DenseLayer& l : layers) {
    const int rows = r.u16(), cols = r.u16();
    l.weight.resize(rows, cols);
    l.bias.resize(rows);
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (k > 0 && layers[k].weight.cols() != layers[k - 1].weight.rows()) {
      throw Error(ErrorKind::Data, "MLP blob has inconsistent layer shapes");
    }
    for (Eigen::Index i = 0; i < layers[k].weight.size(); ++i) layers[k].weight.data()[i] = r.half();
    for (Eigen::Index i = 0; i < layers[k].bias.size(); ++i) layers[k].bias[i] = r.half();
  }
  if (r.remaining() != 0) throw Error(ErrorKind::Data, "trailing bytes in MLP blob");
  return MlpDecoder(std::move(layers));
}

// ---- container ----

std::size_t ContainerInfo::total_bytes() const {
  std::size_t s = table_bytes;
  for (const SectionInfo& sec : sections) s += sec.length;
  return s;
}

std::size_t ContainerInfo::plane_bytes() const {
  std::size_t s = 0;
  for (const SectionInfo& sec : sections) {
    if (sec.tag.rfind("PLN", 0) == 0) s += sec.length;
  }
  return s;
}

namespace {

// Doubles the model box until every point fits, so re-encoding decoded points picks the same box.
BoundingBox point_box(const IgsModel& model) {
  BoundingBox b = model.bbox;
  for (const Vec3& p : model.points.positions) {
    if (!p.allFinite()) throw Error(ErrorKind::Numerical, "non-finite point position");
    while ((p - b.center).cwiseAbs().maxCoeff() > b.half_extent) b.half_extent *= 2.0;
  }
  return b;
}

constexpr std::size_t kPreambleBytes = 8;   // magic, version, section count
constexpr std::size_t kEntryBytes = 16;     // tag, offset, length, crc

}  // namespace

std::vector<std::uint8_t> write_container(const IgsModel& model, const CodecOptions& options) {
  model.validate();
  const int m = model.planes.levels[0].planes[0].channels;

  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> sections;
  const BoundingBox pbox = point_box(model);
  const PointPayload points = encode_points(model.points.positions, pbox);
  {
    ByteWriter h;
    for (int a = 0; a < 3; ++a) h.f64(model.bbox.center[a]);
    h.f64(model.bbox.half_extent);
    for (int l = 0; l < kNumLevels; ++l) h.u32(static_cast<std::uint32_t>(model.planes.levels[l].planes[0].width));
    h.u8(static_cast<std::uint8_t>(m));
    h.u8(static_cast<std::uint8_t>(model.sh_degree));
    h.u8(model.contraction ? 1 : 0);
    h.u8(static_cast<std::uint8_t>(model.planes.active_levels));
    h.u32(static_cast<std::uint32_t>(model.points.size()));
    h.u8(static_cast<std::uint8_t>(options.backend));
    for (int q : options.quality) h.u8(static_cast<std::uint8_t>(q));
    h.u8(static_cast<std::uint8_t>(points.mode));
    sections.emplace_back("HEAD", std::move(h.bytes));
  }
  {
    ByteWriter p;
    for (int a = 0; a < 3; ++a) p.f64(pbox.center[a]);
    p.f64(pbox.half_extent);
    p.append(points.bytes);
    sections.emplace_back("PNTS", std::move(p.bytes));
  }
  for (int l = 0; l < kNumLevels; ++l) {
    sections.emplace_back(kPlaneTags[l], encode_level(model.planes.levels[l], options.quality[l], options.backend));
  }
  for (int l = 0; l < kNumLevels; ++l) sections.emplace_back(kMlpTags[l], encode_mlp(model.decoders[l]));

  ByteWriter w;
  w.append(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("IGSC"), 4));
  w.u16(kContainerVersion);
  w.u16(static_cast<std::uint16_t>(sections.size()));
  std::size_t offset = kPreambleBytes + kEntryBytes * sections.size() + 4;
  for (const auto& [tag, bytes] : sections) {
    w.append(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(tag.data()), 4));
    w.u32(static_cast<std::uint32_t>(offset));
    w.u32(static_cast<std::uint32_t>(bytes.size()));
    w.u32(crc_of(bytes));
    offset += bytes.size();
  }
  w.u32(crc_of(w.bytes));
  for (const auto& sec : sections) w.append(sec.second);
  return std::move(w.bytes);
}

ContainerInfo inspect_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleBytes) {
    throw ContainerException(ContainerError::Truncated, "TABL", "container is truncated before the section table");
  }
  if (std::memcmp(bytes.data(), "IGSC", 4) != 0) {
    throw ContainerException(ContainerError::BadMagic, "TABL", "not an IGS container (bad magic)");
  }
  ByteReader pre(bytes.subspan(4, 4), "TABL");
  ContainerInfo info;
  info.version = pre.u16();
  const std::uint16_t count = pre.u16();
  info.table_bytes = kPreambleBytes + kEntryBytes * count + 4;
  if (bytes.size() < info.table_bytes) {
    throw ContainerException(ContainerError::Truncated, "TABL", "container is truncated inside the section table");
  }
  ByteReader table(bytes.subspan(kPreambleBytes, info.table_bytes - kPreambleBytes), "TABL");
  for (int i = 0; i < count; ++i) {
    SectionInfo s;
    const auto tag = table.take(4);
    s.tag.assign(tag.begin(), tag.end());
    s.offset = table.u32();
    s.length = table.u32();
    s.crc = table.u32();
    info.sections.push_back(s);
  }
  const std::uint32_t table_crc = table.u32();
  if (crc_of(bytes.first(info.table_bytes - 4)) != table_crc) {
    throw ContainerException(ContainerError::ChecksumMismatch, "TABL", "checksum mismatch in section table");
  }
  if (info.version != kContainerVersion) {
    throw ContainerException(ContainerError::VersionSkew, "TABL",
                             "unsupported container version " + std::to_string(info.version) + " (expected " +
                                 std::to_string(kContainerVersion) + ")");
  }
  std::size_t expect = info.table_bytes;
  for (const SectionInfo& s : info.sections) {
    if (s.offset != expect) {
      throw ContainerException(ContainerError::Malformed, s.tag, "section " + s.tag + " is not contiguous");
    }
    if (static_cast<std::size_t>(s.offset) + s.length > bytes.size()) {
      throw ContainerException(ContainerError::Truncated, s.tag, "section " + s.tag + " is truncated");
    }
    if (crc_of(bytes.subspan(s.offset, s.length)) != s.crc) {
      throw ContainerException(ContainerError::ChecksumMismatch, s.tag, "checksum mismatch in section " + s.tag);
    }
    expect += s.length;
  }
  if (expect != bytes.size()) {
    throw ContainerException(ContainerError::Malformed, "TABL", "trailing bytes after the last section");
  }
  const std::vector<std::string> want = {"HEAD", "PNTS", "PLN1", "PLN2", "PLN3", "MLP1", "MLP2", "MLP3"};
  if (info.sections.size() != want.size()) {
    throw ContainerException(ContainerError::Malformed, "TABL", "unexpected section count");
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (info.sections[i].tag != want[i]) {
      throw ContainerException(ContainerError::Malformed, info.sections[i].tag,
                               "unexpected section " + info.sections[i].tag + " (expected " + want[i] + ")");
    }
  }

  ByteReader h(bytes.subspan(info.sections[0].offset, info.sections[0].length), "HEAD");
  for (int a = 0; a < 4; ++a) h.f64();
  for (int l = 0; l < 3; ++l) info.resolutions[l] = static_cast<int>(h.u32());
  info.channels = h.u8();
  info.sh_degree = h.u8();
  info.contraction = h.u8() != 0;
  info.active_levels = h.u8();
  info.point_count = h.u32();
  const std::uint8_t backend = h.u8();
  for (int& q : info.quality) q = h.u8();
  const std::uint8_t mode = h.u8();
  if (backend > 1 || mode > 1 || info.sh_degree > 3 || info.channels < 1 || info.active_levels < 1 ||
      info.active_levels > 3 || info.point_count == 0 || h.remaining() != 0) {
    throw ContainerException(ContainerError::Malformed, "HEAD", "invalid header fields");
  }
  if (info.resolutions[1] != 2 * info.resolutions[0] || info.resolutions[2] != 2 * info.resolutions[1] ||
      info.resolutions[0] < 2) {
    throw ContainerException(ContainerError::Malformed, "HEAD", "plane resolutions violate the halving rule");
  }
  info.backend = static_cast<PlaneBackend>(backend);
  info.point_mode = static_cast<PointMode>(mode);
  return info;
}

IgsModel read_container(std::span<const std::uint8_t> bytes) {
  const ContainerInfo info = inspect_container(bytes);
  auto section = [&](std::size_t i) { return bytes.subspan(info.sections[i].offset, info.sections[i].length); };

  IgsModel m;
  ByteReader h(section(0), "HEAD");
  for (int a = 0; a < 3; ++a) m.bbox.center[a] = h.f64();
  m.bbox.half_extent = h.f64();
  m.contraction = info.contraction;
  m.sh_degree = info.sh_degree;

  ByteReader p(section(1), "PNTS");
  BoundingBox pbox;
  for (int a = 0; a < 3; ++a) pbox.center[a] = p.f64();
  pbox.half_extent = p.f64();
  const auto pb = p.rest();
  PointPayload payload{info.point_mode, std::vector<std::uint8_t>(pb.begin(), pb.end())};
  m.points.positions = decode_points(payload, pbox, info.point_count);

  m.planes.active_levels = info.active_levels;
  for (int l = 0; l < kNumLevels; ++l) {
    m.planes.levels[l] = decode_level_planes(section(2 + l), info.resolutions[l], info.channels, info.backend);
  }
  for (int l = 0; l < kNumLevels; ++l) m.decoders[l] = decode_mlp(section(5 + l));
  try {
    m.validate();
  } catch (const Error& e) {
    throw ContainerException(ContainerError::Malformed, "HEAD", std::string("decoded model is invalid: ") + e.what());
  }
  return m;
}

}  // namespace igs
