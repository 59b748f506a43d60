#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "igs/core.hpp"
#include "igs/model.hpp"
#include "igs/triplane.hpp"

namespace igs {

// ---- Morton ----------------------------------------------------------------

/// 16 bits per axis, bit i of axis a lands on bit 3i + a (x lowest).
std::uint64_t morton_encode(std::uint16_t x, std::uint16_t y, std::uint16_t z);
std::array<std::uint16_t, 3> morton_decode(std::uint64_t code);

// ---- point payload -----------------------------------------------------------

using QuantizedCoord = std::array<std::uint16_t, 3>;

std::uint16_t quantize_coord(double normalized);  // [-1, 1] -> [0, 65535]
double dequantize_coord(std::uint16_t q);

/// Quantizes (p - c) / h to 16 bits per axis and sorts ascending by Morton code,
/// ties by input index. `order[k]` is the input index of the k-th sorted point.
struct SortedPoints {
  std::vector<std::size_t> order;
  std::vector<QuantizedCoord> coords;  // in sorted order
};
SortedPoints sort_points(std::span<const Vec3> positions, const BoundingBox& bbox);
std::vector<QuantizedCoord> quantize_points(std::span<const Vec3> positions, const BoundingBox& bbox);

/// W = ceil(sqrt N), H = ceil(N / W); x, y, z blocks stacked vertically into W x 3H.
struct PointImage {
  int width = 0;
  int height = 0;  // 3 * block height
  std::vector<std::uint16_t> samples;
};
PointImage pack_point_image(std::span<const QuantizedCoord> coords);
std::vector<QuantizedCoord> unpack_point_image(const PointImage& image, std::size_t n);

enum class PointMode : std::uint8_t { Raw16F = 0, SortedPng = 1 };

struct PointPayload {
  PointMode mode = PointMode::Raw16F;
  std::vector<std::uint8_t> bytes;
};

/// PNG bytes of the packed image, either Morton-sorted or in input order.
std::vector<std::uint8_t> point_png(std::span<const Vec3> positions, const BoundingBox& bbox, bool morton_sorted);
/// Builds both candidates and keeps the smaller. Decoded point order may differ from the input order.
PointPayload encode_points(std::span<const Vec3> positions, const BoundingBox& bbox);
std::vector<Vec3> decode_points(const PointPayload& payload, const BoundingBox& bbox, std::size_t n);

// ---- feature planes ----------------------------------------------------------

struct QuantizedPlane {
  int bits = 8;
  int levels = 256;  // number of code values in use, <= 2^bits
  float min = 0.0f;
  float max = 0.0f;
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint16_t> codes;
};

/// Uniform affine quantization over [min, max] with `levels` codes (defaults to 2^bits).
QuantizedPlane quantize_plane(const FeaturePlane& plane, int bits, int levels = 0);
FeaturePlane dequantize_plane(const QuantizedPlane& qp);

enum class PlaneBackend : std::uint8_t { Qdef = 0, Heic = 1 };

PlaneBackend parse_backend(const std::string& name);
std::string backend_name(PlaneBackend backend);
bool heic_available();

/// Code count used by QDEF at a quality in 0..100; 100 means 16-bit.
int qdef_levels(int quality);

using QualityTuple = std::array<int, 3>;
QualityTuple parse_quality(const std::string& text);
/// P0..P6.
QualityTuple quality_preset(int index);
QualityTuple quality_preset(const std::string& name);

/// One level: three planes tiled into a 3r x (m r) single-channel image, channel-major rows.
std::vector<std::uint8_t> encode_level(const TriPlaneLevel& level, int quality, PlaneBackend backend);
TriPlaneLevel decode_level_planes(std::span<const std::uint8_t> payload, int resolution, int channels,
                                  PlaneBackend backend);

// ---- MLP weights -----------------------------------------------------------

std::vector<std::uint8_t> encode_mlp(const MlpDecoder& decoder);
MlpDecoder decode_mlp(std::span<const std::uint8_t> bytes);
double round_to_half(double v);

// ---- container ---------------------------------------------------------------

enum class ContainerError : std::uint8_t { BadMagic, VersionSkew, Truncated, ChecksumMismatch, Malformed };

struct ContainerException : Error {
  ContainerError code;
  std::string section;
  ContainerException(ContainerError c, std::string sec, const std::string& msg)
      : Error(ErrorKind::Data, msg), code(c), section(std::move(sec)) {}
};

struct CodecOptions {
  QualityTuple quality = {100, 100, 100};
  PlaneBackend backend = PlaneBackend::Qdef;
};

constexpr std::uint16_t kContainerVersion = 1;

std::vector<std::uint8_t> write_container(const IgsModel& model, const CodecOptions& options);
IgsModel read_container(std::span<const std::uint8_t> bytes);

struct SectionInfo {
  std::string tag;
  std::uint32_t offset = 0;
  std::uint32_t length = 0;
  std::uint32_t crc = 0;
};

struct ContainerInfo {
  std::uint16_t version = 0;
  std::size_t table_bytes = 0;  // magic, version, count and the section table
  std::vector<SectionInfo> sections;
  std::size_t point_count = 0;
  PointMode point_mode = PointMode::Raw16F;
  QualityTuple quality{};
  PlaneBackend backend = PlaneBackend::Qdef;
  std::array<int, 3> resolutions{};
  int channels = 0;
  int sh_degree = 0;
  bool contraction = false;
  int active_levels = 0;

  std::size_t total_bytes() const;
  std::size_t plane_bytes() const;
};

/// Validates magic, version, bounds and every checksum.
ContainerInfo inspect_container(std::span<const std::uint8_t> bytes);

}  // namespace igs
