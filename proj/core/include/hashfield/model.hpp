#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "hashfield/grid.hpp"
#include "hashfield/interp.hpp"
#include "hashfield/rng.hpp"

namespace hashfield {

/// L feature tables of table_size x F values each; the image's code.
struct HashGrid {
  GridConfig config;
  std::vector<LevelGeometry> levels;
  std::vector<float> tables;  // levels * table_size * F, level-major, feature-minor

  /// Fresh grid with entries drawn from uniform(-1e-4, 1e-4).
  static HashGrid create(const GridConfig& config, Rng& rng);

  std::size_t level_offset(int level) const {
    return static_cast<std::size_t>(level) * config.table_size * config.features_per_level;
  }
  std::span<const float> level_table(int level) const {
    return {tables.data() + level_offset(level),
            static_cast<std::size_t>(config.table_size) * config.features_per_level};
  }
  std::span<float> level_table(int level) {
    return {tables.data() + level_offset(level),
            static_cast<std::size_t>(config.table_size) * config.features_per_level};
  }
};

inline constexpr int kDecoderHiddenWidth = 64;

/// Two-layer MLP mapping the concatenated L*F features to RGB.
/// Hidden activation is a rectifier; the output is linear.
struct PixelDecoder {
  int input_dim = 0;
  int hidden_dim = kDecoderHiddenWidth;
  std::vector<float> w1;  // hidden_dim x input_dim, row-major
  std::vector<float> b1;  // hidden_dim
  std::vector<float> w2;  // 3 x hidden_dim, row-major
  std::vector<float> b2;  // 3

  static PixelDecoder create(int input_dim, Rng& rng);

  std::size_t size() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
  }
};

/// Forward result at one coordinate with the cache backward consumes.
struct DecodedSample {
  std::array<double, 3> rgb{};
  std::vector<double> features;      // L*F concatenated, level-major
  std::vector<double> hidden;        // post-activation
  std::vector<LevelSample> levels;   // per-level stencil cache
  double x = 0.0;
  double y = 0.0;
  int k = 0;
  int level_count = 0;
  int features_per_level = 0;
  int hidden_dim = 0;
};

void decode(const HashGrid& grid, const PixelDecoder& decoder, double x, double y,
            DecodedSample& out);
DecodedSample decode(const HashGrid& grid, const PixelDecoder& decoder, double x, double y);

/// Dense gradient buffers for the decoder parameters.
struct DecoderGrads {
  std::vector<double> w1, b1, w2, b2;
  void resize(const PixelDecoder& decoder);
  void set_zero();
};

/// Dense table-gradient buffer with a touched-entry list, so sparse per-sample
/// gradients accumulate without scanning the full table.
struct TableGradAccum {
  std::vector<double> grads;            // levels * table_size * F
  std::vector<std::uint32_t> touched;   // level * table_size + entry, unordered
  std::vector<std::uint8_t> marked;     // levels * table_size
  std::uint32_t table_size = 0;
  int features_per_level = 0;

  void resize(const HashGrid& grid);
  void set_zero();  // clears only touched entries
};

struct CoordGrad {
  double x = 0.0;
  double y = 0.0;
};

/// Exact reverse-mode gradients for one decoded sample. Accumulates (+=) into
/// the provided buffers; per level at most (2k)^2 table entries are touched.
/// Throws std::invalid_argument if the sample's cached dimensions do not match
/// the model.
void backward(const HashGrid& grid, const PixelDecoder& decoder, const DecodedSample& sample,
              std::span<const double, 3> rgb_grad, TableGradAccum& table_grads,
              DecoderGrads& decoder_grads, CoordGrad& coord_grad);

/// Coordinate gradient alone: the decoder Jacobian composed with the cached
/// per-level interpolation gradients. Same result as the coordinate part of
/// backward, without accumulating table or decoder gradients.
CoordGrad coordinate_gradient(const PixelDecoder& decoder, const DecodedSample& sample,
                              std::span<const double, 3> rgb_grad);

/// Sparse view of one sample's table gradient, for inspection and tests.
struct SparseTableGrads {
  struct Item {
    int level;
    std::uint32_t entry;
    std::vector<double> grad;  // F values
  };
  std::vector<Item> items;
};

SparseTableGrads sparse_table_grads(const TableGradAccum& accum);

/// Folds an externally produced per-level feature map into one level's table:
/// entry u becomes the mean of all map positions whose vertex hashes to u;
/// entries with an empty preimage stay zero. The map side may be either the
/// level's vertex count (N+1, the native convention) or its resolution N, in
/// which case the last vertex row/column of the hash mask is unused.
/// `map_values` is side*side*F, row-major, feature-minor; position (row, col)
/// corresponds to vertex (i=col, j=row).
std::vector<float> aggregate_feature_map(std::span<const float> map_values, int side,
                                         int features, const LevelGeometry& level,
                                         std::uint32_t table_size);

}  // namespace hashfield
