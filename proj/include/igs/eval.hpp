#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "igs/codec.hpp"
#include "igs/renderer.hpp"
#include "igs/training.hpp"

namespace igs {

struct ImageScore {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<ImageScore> images;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

EvalReport evaluate_images(const std::vector<ImageScore>& scores);
/// Pairs *.png files by name. Missing counterparts or size mismatches are a data error listing every offender.
EvalReport evaluate_directories(const std::filesystem::path& rendered, const std::filesystem::path& ground_truth);
/// name,psnr,ssim rows followed by a "mean" row.
void write_eval_csv(std::ostream& out, const EvalReport& report);

struct RdEntry {
  std::string label;
  QualityTuple quality{};
};

/// The seven named presets P0..P6.
std::vector<RdEntry> preset_rd_entries();

struct RdPoint {
  RdEntry entry;
  std::size_t total_bytes = 0;
  std::size_t plane_bytes = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Encodes at each tuple, decodes from the bytes and scores renders of `views`.
std::vector<RdPoint> rd_sweep(const IgsModel& model, const std::vector<RdEntry>& entries,
                              const std::vector<TrainView>& views, PlaneBackend backend,
                              const RenderSettings& settings);
void write_rd_csv(std::ostream& out, const std::vector<RdPoint>& points);

}  // namespace igs
