#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "hashfield/grid.hpp"

namespace hashfield {

inline constexpr int kMaxInterpOrder = 3;
inline constexpr int kMaxStencilNodes = 2 * kMaxInterpOrder;

/// Lagrange basis weights at x over strictly increasing integer nodes:
/// L_i(x) = prod_{j != i} (x - x_j) / (x_i - x_j).
/// Throws std::invalid_argument on duplicate or decreasing nodes.
std::vector<double> lagrange_basis(double x, std::span<const int> nodes);

/// dL_i/dx = sum_{m != i} 1/(x_i - x_m) * prod_{j != i,m} (x - x_j)/(x_i - x_j).
std::vector<double> lagrange_basis_derivative(double x, std::span<const int> nodes);

/// One axis of the tensor-product stencil: 2k consecutive grid lines with
/// basis weights and basis derivatives (in cell units) at the query.
struct AxisStencil {
  std::array<int, kMaxStencilNodes> nodes{};
  std::array<double, kMaxStencilNodes> weights{};
  std::array<double, kMaxStencilNodes> dweights{};
  int count = 0;
};

/// Chooses the node window for a query t in cell units: k lines at or below
/// and k above, shifted inward near the borders so all nodes stay in [0, N].
AxisStencil make_axis_stencil(double t, int resolution, int k);

/// Features interpolated at one level plus everything backward needs.
/// Stencil vertices that hash to the same entry are merged; their basis
/// weights add.
struct LevelSample {
  std::vector<double> value;    // F
  std::vector<double> grad_x;   // F, d value / d x in normalized units
  std::vector<double> grad_y;   // F
  std::vector<std::uint32_t> entries;
  std::vector<double> weight;      // merged tensor weight per entry
  std::vector<double> dweight_x;   // d weight / d x in normalized units
  std::vector<double> dweight_y;

  void clear();
};

/// Tensor-product Lagrange interpolation of one level's table at a normalized
/// coordinate. `table` is the level's T x F block, feature-minor.
/// Throws std::invalid_argument if (x, y) is outside [0,1]^2 or the level is
/// too coarse for the stencil order.
void interpolate_level(std::span<const float> table, std::uint32_t table_size,
                       int features_per_level, double x, double y,
                       const LevelGeometry& level, int k, LevelSample& out);

LevelSample interpolate_level(std::span<const float> table, std::uint32_t table_size,
                              int features_per_level, double x, double y,
                              const LevelGeometry& level, int k);

}  // namespace hashfield
