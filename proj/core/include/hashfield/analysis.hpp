#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hashfield/image.hpp"
#include "hashfield/model.hpp"
#include "hashfield/optim.hpp"

namespace hashfield {

/// 10 * log10(1 / MSE) for unit-range images; identical images give +inf.
double psnr(const ImageBuffer& a, const ImageBuffer& b);
double psnr_from_mse(double mse);

/// Spearman rank correlation; ties get average ranks.
double spearman_rho(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Translation invariance: fit I and its x-shifted copy with a shared decoder,
// render each level's feature field on the level's vertex grid, reverse the
// shift on the second encoding, mask the strip absent from one of the two,
// and measure the masked feature divergence.

struct InvarianceResult {
  int shift_px = 0;
  int level = 0;
  double divergence = 0.0;        // masked mean squared feature difference
  double feature_variance = 0.0;  // variance of the unshifted field, same mask
  double cosine_similarity = 0.0;
  int valid_probes = 0;
};

struct InvarianceOptions {
  std::vector<int> shifts;  // pixels along x; the protocol uses multiples of 10
  GridConfig grid;
  TrainConfig train;
};

std::vector<InvarianceResult> translation_invariance(const ImageBuffer& image,
                                                     const InvarianceOptions& options);

/// x-shift with replicate padding: shifted(c) = image(c - shift).
ImageBuffer shift_image_x(const ImageBuffer& image, int shift_px);

/// One level's interpolated feature field at the level's vertex grid,
/// (N+1) x (N+1) x F, row-major, feature-minor.
std::vector<double> render_level_features(const HashGrid& grid, int level, double x_offset = 0.0);

// ---------------------------------------------------------------------------
// Dense-vs-hashed layer ablation: decode with the complementary level group's
// features zeroed at the decoder input.

struct AblationResult {
  double psnr_full = 0.0;
  double psnr_dense_only = 0.0;
  double psnr_hashed_only = 0.0;
};

enum class LevelMask { All, DenseOnly, HashedOnly, None };

AblationResult layer_ablation(const HashGrid& grid, const PixelDecoder& decoder,
                              const ImageBuffer& image, int threads = 1);

/// Decodes the whole image with the given level mask applied to the features.
ImageBuffer decode_image(const HashGrid& grid, const PixelDecoder& decoder, int width,
                         int height, LevelMask mask = LevelMask::All, int threads = 1);

// ---------------------------------------------------------------------------
// Table-size sweep.

struct SweepPoint {
  std::uint32_t table_size = 0;
  double psnr = 0.0;
  std::size_t payload_bytes = 0;  // table payload at 32-bit
};

std::vector<SweepPoint> table_size_sweep(const ImageBuffer& image, int log2_min, int log2_max,
                                         const GridConfig& base, const TrainConfig& train);

// ---------------------------------------------------------------------------
// Entry density histograms pooled over fitted grids with identical configs.

struct LevelHistogram {
  int level = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double skewness = 0.0;
  double bin_min = 0.0;
  double bin_max = 0.0;
  std::vector<std::uint64_t> counts;
};

std::vector<LevelHistogram> entry_histograms(std::span<const HashGrid> grids, int bins = 64);

// ---------------------------------------------------------------------------
// Rendering helpers for the CLI: grayscale heat maps and simple curves.

ImageBuffer heatmap_image(std::span<const double> values, int width, int height);
ImageBuffer curve_image(std::span<const double> xs, std::span<const double> ys, int width,
                        int height);
ImageBuffer index_map_image(const LevelGeometry& level, std::uint32_t table_size);

}  // namespace hashfield
