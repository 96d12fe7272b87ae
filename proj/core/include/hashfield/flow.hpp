#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hashfield/image.hpp"
#include "hashfield/model.hpp"
#include "hashfield/optim.hpp"
#include "hashfield/rng.hpp"

namespace hashfield {

inline constexpr int kFlowShiftRadiusPx = 50;

/// A translated copy of an image with replicate padding and the recorded
/// ground-truth displacement: b(c, r) = a(c - dx, r - dy), so content of `a`
/// at (x, y) sits at (x + dx, y + dy) in `b`.
struct TranslationPair {
  ImageBuffer a;
  ImageBuffer b;
  int dx_px = 0;
  int dy_px = 0;
};

TranslationPair synth_translation_pair(const ImageBuffer& image, int dx_px, int dy_px);

/// Draws per-axis integer shifts uniformly in [-radius, radius].
TranslationPair synth_translation_pair(const ImageBuffer& image, Rng& rng,
                                       int radius_px = kFlowShiftRadiusPx);

enum class FlowMode { Pixel, Patch3x3, Image };

const char* flow_mode_name(FlowMode mode);

struct FlowDescentConfig {
  int steps = 300;
  double step_size_px = 0.5;
  // In image mode the descent restarts from a small grid of displacements and
  // keeps the best final loss; a 50 px shift exceeds the stencil support, so
  // descent from zero alone can stall.
  bool multi_start = true;
  int multi_start_spacing_px = 16;
  AdamParams adam;
};

struct FlowSamplePoint {
  int col = 0;
  int row = 0;
};

struct FlowProblem {
  const HashGrid* grid_a = nullptr;
  const PixelDecoder* decoder_a = nullptr;
  const HashGrid* grid_b = nullptr;
  const PixelDecoder* decoder_b = nullptr;
  int width = 0;
  int height = 0;
  std::vector<FlowSamplePoint> samples;
  FlowMode mode = FlowMode::Image;
  FlowDescentConfig descent;
  int margin_px = 50;
  std::optional<std::pair<double, double>> truth_px;  // ground-truth (dx, dy)
};

struct SampleFlow {
  int col = 0;
  int row = 0;
  double dx_px = 0.0;
  double dy_px = 0.0;
  double final_loss = 0.0;
  bool failed = false;
  std::optional<double> epe_px;
};

struct FlowEstimate {
  std::vector<SampleFlow> samples;
  double mean_epe_px = 0.0;  // over retained samples; 0 when no truth given
  int retained = 0;
  int failed = 0;
};

/// Gradient descent on shared-or-per-sample displacements through the decoded
/// fields: minimizes sum ||A'(p) - B'(p + delta)||^2 using coordinate
/// gradients. Decoding during the descent clamps coordinates to the unit
/// square, matching the replicate padding of the synthetic pairs.
/// Throws std::invalid_argument if a sample violates the margin.
FlowEstimate solve_flow(const FlowProblem& problem, int threads = 1);

std::vector<FlowSamplePoint> draw_flow_samples(int width, int height, int count, int margin_px,
                                               Rng& rng);

struct FlowRun {
  int k = 0;
  FlowMode mode = FlowMode::Image;
  FlowEstimate estimate;
};

struct FlowReportCell {
  int k = 0;
  FlowMode mode = FlowMode::Image;
  double mean_epe_px = 0.0;
  int problems = 0;
  int retained = 0;
  int failed = 0;
};

struct FlowReport {
  std::vector<FlowReportCell> cells;  // k-major, mode-minor
  std::string to_json() const;
  std::string to_text() const;
};

/// Aggregates runs into the k x mode mean-EPE grid. Every (k, mode) cell must
/// cover the same number of problems.
FlowReport flow_report(std::span<const FlowRun> runs);

/// HSV-coded displacement field rendered at the sample positions.
ImageBuffer flow_visualization(const FlowEstimate& estimate, int width, int height);

}  // namespace hashfield
