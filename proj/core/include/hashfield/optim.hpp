#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hashfield/image.hpp"
#include "hashfield/model.hpp"

namespace hashfield {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
};

enum class TrainMode {
  PerImage,
  SharedDecoder,
  FinetuneTablesOnly,
  FinetuneJoint,
};

const char* train_mode_name(TrainMode mode);

struct TrainConfig {
  int steps = 1000;
  int batch_pixels = 4096;
  AdamParams adam;
  double lr_tables = 1e-2;
  double lr_decoder = 1e-3;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::PerImage;
  int threads = 1;
  // Reduce per-sample gradients in sample order so results do not depend on
  // the worker count. Disabling trades that for a faster parallel reduction.
  bool fixed_order_reduction = true;

  void validate() const;
};

struct TrainReport {
  std::vector<double> loss_curve;   // one MSE value per step
  std::vector<double> final_mse;    // per image, at pixel centers
  std::vector<double> final_psnr;   // per image
  double wall_clock_ms = 0.0;
  std::uint64_t seed = 0;
  int steps = 0;
  int batch_pixels = 0;
  int image_count = 0;
  TrainMode mode = TrainMode::PerImage;
  double lr_tables = 0.0;
  double lr_decoder = 0.0;
};

std::string train_report_json(const TrainReport& report);

struct FitResult {
  HashGrid grid;
  PixelDecoder decoder;
  TrainReport report;
};

struct SharedFitResult {
  std::vector<HashGrid> grids;
  PixelDecoder decoder;
  TrainReport report;
};

/// Fits a fresh grid and decoder to one image by minimizing the MSE between
/// decoded pixel-center samples and the image. Pixel batches are drawn
/// uniformly from the seeded per-image stream.
FitResult fit_per_image(const ImageBuffer& image, const GridConfig& grid_config,
                        const TrainConfig& train_config);

/// One decoder shared across all images, a fresh grid per image. Every step
/// draws batch_pixels samples from every image. A batch of one image follows
/// the exact trajectory of fit_per_image under the same seed.
SharedFitResult fit_shared_decoder(std::span<const ImageBuffer> images,
                                   const GridConfig& grid_config,
                                   const TrainConfig& train_config);

/// Refines a given grid (and optionally the decoder) on one image.
/// TrainMode::FinetuneTablesOnly leaves the decoder bit-unchanged.
FitResult finetune(const HashGrid& grid_init, const PixelDecoder& decoder_init,
                   const ImageBuffer& image, const TrainConfig& train_config);

/// Mean squared error of the decoded field against the image at all pixel
/// centers. Mean over pixels and channels.
double evaluate_mse(const HashGrid& grid, const PixelDecoder& decoder,
                    const ImageBuffer& image, int threads = 1);

}  // namespace hashfield
