#include "hashfield/grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hashfield {

namespace {

bool is_power_of_two(std::uint32_t x) { return x != 0 && (x & (x - 1)) == 0; }

constexpr int kMaxOrder = 3;

}  // namespace

void GridConfig::validate() const {
  if (levels < 2) throw std::invalid_argument("GridConfig: levels must be >= 2");
  if (!is_power_of_two(table_size))
    throw std::invalid_argument("GridConfig: table_size must be a power of two");
  if (features_per_level < 1)
    throw std::invalid_argument("GridConfig: features_per_level must be >= 1");
  if (n_min < 1) throw std::invalid_argument("GridConfig: n_min must be >= 1");
  if (n_max < n_min) throw std::invalid_argument("GridConfig: n_max must be >= n_min");
  if (k < 1 || k > kMaxOrder)
    throw std::invalid_argument("GridConfig: k must be in [1, 3]");
  if (n_min + 1 < 2 * k)
    throw std::invalid_argument(
        "GridConfig: coarsest level has too few vertices for the stencil order");
}

double growth_factor(const GridConfig& config) {
  config.validate();
  return std::exp((std::log(static_cast<double>(config.n_max)) -
                   std::log(static_cast<double>(config.n_min))) /
                  (config.levels - 1));
}

std::vector<LevelGeometry> resolution_schedule(const GridConfig& config) {
  config.validate();
  const double log_b = (std::log(static_cast<double>(config.n_max)) -
                        std::log(static_cast<double>(config.n_min))) /
                       (config.levels - 1);
  std::vector<LevelGeometry> out;
  out.reserve(config.levels);
  for (int l = 0; l < config.levels; ++l) {
    const double exact = config.n_min * std::exp(l * log_b);
    // The endpoints of the geometric schedule are exact integers; nudge the
    // floor so double rounding cannot land one below them.
    const int n = static_cast<int>(std::floor(exact * (1.0 + 1e-12)));
    LevelGeometry g;
    g.level = l;
    g.resolution = n;
    const std::uint64_t vertices =
        static_cast<std::uint64_t>(n + 1) * static_cast<std::uint64_t>(n + 1);
    g.dense = vertices <= config.table_size;
    out.push_back(g);
  }
  return out;
}

std::uint32_t spatial_hash(VertexIndex v, std::uint32_t table_size) {
  const std::uint32_t hx = kHashMultiplierX * static_cast<std::uint32_t>(v.i);
  const std::uint32_t hy = kHashMultiplierY * static_cast<std::uint32_t>(v.j);
  return (hx ^ hy) & (table_size - 1);
}

VoxelCorners voxel_vertices(double x, double y, const LevelGeometry& level) {
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
    throw std::invalid_argument("voxel_vertices: coordinate outside [0,1]^2");
  const int n = level.resolution;
  const double tx = x * n;
  const double ty = y * n;
  const int i0 = std::min(static_cast<int>(std::floor(tx)), n);
  const int j0 = std::min(static_cast<int>(std::floor(ty)), n);
  const int i1 = std::min(i0 + 1, n);
  const int j1 = std::min(j0 + 1, n);
  VoxelCorners c;
  c.v00 = {i0, j0};
  c.v10 = {i1, j0};
  c.v01 = {i0, j1};
  c.v11 = {i1, j1};
  c.fx = tx - std::floor(tx);
  c.fy = ty - std::floor(ty);
  return c;
}

std::vector<std::uint32_t> index_map(const LevelGeometry& level, std::uint32_t table_size) {
  const int side = level.vertices_per_axis();
  std::vector<std::uint32_t> map(static_cast<std::size_t>(side) * side);
  for (int j = 0; j < side; ++j)
    for (int i = 0; i < side; ++i)
      map[static_cast<std::size_t>(j) * side + i] =
          level_entry_index({i, j}, level, table_size);
  return map;
}

}  // namespace hashfield
