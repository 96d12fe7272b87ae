#pragma once

#include <cstdint>
#include <vector>

namespace hashfield {

/// Hyperparameters of the multiresolution hash grid.
struct GridConfig {
  int levels = 12;                       // L
  std::uint32_t table_size = 1u << 12;   // T, must be a power of two
  int features_per_level = 2;            // F
  int n_min = 4;                         // coarsest resolution, cells per axis
  int n_max = 346;                       // finest resolution, cells per axis
  int k = 1;                             // interpolation half-order; 1 = bilinear

  int feature_dim() const { return levels * features_per_level; }

  // Throws std::invalid_argument on a bad configuration.
  void validate() const;
};

/// Geometry of one level: N cells per axis, N+1 grid vertices per axis.
struct LevelGeometry {
  int level = 0;
  int resolution = 0;   // N
  bool dense = false;   // (N+1)^2 <= T, i.e. the hash is injective on the vertex set

  int vertices_per_axis() const { return resolution + 1; }
};

/// Integer grid vertex; i indexes columns (x), j indexes rows (y).
struct VertexIndex {
  int i = 0;
  int j = 0;
};

/// Growth factor b = exp((ln n_max - ln n_min) / (L - 1)).
double growth_factor(const GridConfig& config);

/// Geometric schedule N_l = floor(n_min * b^l). Exactly L entries, resolutions
/// running from n_min to n_max, dense flag computed against table_size.
std::vector<LevelGeometry> resolution_schedule(const GridConfig& config);

/// (i XOR 2654435761 * j) mod T, computed in wrapping 32-bit arithmetic.
/// Pure and stable across platforms.
std::uint32_t spatial_hash(VertexIndex v, std::uint32_t table_size);

inline constexpr std::uint32_t kHashMultiplierX = 1u;
inline constexpr std::uint32_t kHashMultiplierY = 2654435761u;

/// Table entry of a level's vertex. Dense levels index their vertices
/// linearly (row-major), which is what makes them collision-free; only
/// levels whose vertex set exceeds the table go through spatial_hash.
inline std::uint32_t level_entry_index(VertexIndex v, const LevelGeometry& level,
                                       std::uint32_t table_size) {
  if (level.dense)
    return static_cast<std::uint32_t>(v.j) *
               static_cast<std::uint32_t>(level.vertices_per_axis()) +
           static_cast<std::uint32_t>(v.i);
  return spatial_hash(v, table_size);
}

/// The four voxel corners around a normalized coordinate plus the
/// within-cell fraction. Corner indices are clamped to [0, N].
struct VoxelCorners {
  VertexIndex v00, v10, v01, v11;
  double fx = 0.0;
  double fy = 0.0;
};

VoxelCorners voxel_vertices(double x, double y, const LevelGeometry& level);

/// Row-major (N+1)x(N+1) map of hash entries: map[j * (N+1) + i] = hash(i, j).
/// Used to visualize how a level's vertex lattice folds onto the table.
std::vector<std::uint32_t> index_map(const LevelGeometry& level, std::uint32_t table_size);

}  // namespace hashfield
