#include "hashfield/interp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hashfield {

namespace {

void check_nodes(std::span<const int> nodes) {
  if (nodes.size() < 2) throw std::invalid_argument("lagrange: need at least 2 nodes");
  for (std::size_t i = 1; i < nodes.size(); ++i)
    if (nodes[i] <= nodes[i - 1])
      throw std::invalid_argument("lagrange: nodes must be strictly increasing");
}

}  // namespace

std::vector<double> lagrange_basis(double x, std::span<const int> nodes) {
  check_nodes(nodes);
  const std::size_t n = nodes.size();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double p = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      p *= (x - nodes[j]) / static_cast<double>(nodes[i] - nodes[j]);
    }
    w[i] = p;
  }
  return w;
}

std::vector<double> lagrange_basis_derivative(double x, std::span<const int> nodes) {
  check_nodes(nodes);
  const std::size_t n = nodes.size();
  std::vector<double> dw(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      if (m == i) continue;
      double p = 1.0 / static_cast<double>(nodes[i] - nodes[m]);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i || j == m) continue;
        p *= (x - nodes[j]) / static_cast<double>(nodes[i] - nodes[j]);
      }
      sum += p;
    }
    dw[i] = sum;
  }
  return dw;
}

AxisStencil make_axis_stencil(double t, int resolution, int k) {
  const int span = 2 * k;
  if (resolution + 1 < span)
    throw std::invalid_argument("make_axis_stencil: level too coarse for stencil order");
  int lo = static_cast<int>(std::floor(t)) - (k - 1);
  lo = std::clamp(lo, 0, resolution + 1 - span);

  AxisStencil s;
  s.count = span;
  for (int i = 0; i < span; ++i) s.nodes[i] = lo + i;

  // Product-form basis and derivative over the window; span is at most 6.
  for (int i = 0; i < span; ++i) {
    double w = 1.0;
    for (int j = 0; j < span; ++j) {
      if (j == i) continue;
      w *= (t - s.nodes[j]) / static_cast<double>(s.nodes[i] - s.nodes[j]);
    }
    s.weights[i] = w;

    double dw = 0.0;
    for (int m = 0; m < span; ++m) {
      if (m == i) continue;
      double p = 1.0 / static_cast<double>(s.nodes[i] - s.nodes[m]);
      for (int j = 0; j < span; ++j) {
        if (j == i || j == m) continue;
        p *= (t - s.nodes[j]) / static_cast<double>(s.nodes[i] - s.nodes[j]);
      }
      dw += p;
    }
    s.dweights[i] = dw;
  }
  return s;
}

void LevelSample::clear() {
  value.clear();
  grad_x.clear();
  grad_y.clear();
  entries.clear();
  weight.clear();
  dweight_x.clear();
  dweight_y.clear();
}

void interpolate_level(std::span<const float> table, std::uint32_t table_size,
                       int features_per_level, double x, double y,
                       const LevelGeometry& level, int k, LevelSample& out) {
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
    throw std::invalid_argument("interpolate_level: coordinate outside [0,1]^2");
  if (k < 1 || k > kMaxInterpOrder)
    throw std::invalid_argument("interpolate_level: unsupported order");

  const int n = level.resolution;
  const double scale = static_cast<double>(n);
  const AxisStencil sx = make_axis_stencil(x * scale, n, k);
  const AxisStencil sy = make_axis_stencil(y * scale, n, k);

  const int f = features_per_level;
  out.clear();
  out.value.assign(f, 0.0);
  out.grad_x.assign(f, 0.0);
  out.grad_y.assign(f, 0.0);

  for (int jy = 0; jy < sy.count; ++jy) {
    for (int ix = 0; ix < sx.count; ++ix) {
      const std::uint32_t entry =
          level_entry_index({sx.nodes[ix], sy.nodes[jy]}, level, table_size);
      const double w = sy.weights[jy] * sx.weights[ix];
      // Basis derivatives are in cell units; `scale` converts to normalized.
      const double dwx = sy.weights[jy] * sx.dweights[ix] * scale;
      const double dwy = sy.dweights[jy] * sx.weights[ix] * scale;

      const float* vals = table.data() + static_cast<std::size_t>(entry) * f;
      for (int c = 0; c < f; ++c) {
        const double v = static_cast<double>(vals[c]);
        out.value[c] += w * v;
        out.grad_x[c] += dwx * v;
        out.grad_y[c] += dwy * v;
      }

      // Merge colliding vertices: weights into the same entry add.
      std::size_t slot = out.entries.size();
      for (std::size_t e = 0; e < out.entries.size(); ++e) {
        if (out.entries[e] == entry) {
          slot = e;
          break;
        }
      }
      if (slot == out.entries.size()) {
        out.entries.push_back(entry);
        out.weight.push_back(w);
        out.dweight_x.push_back(dwx);
        out.dweight_y.push_back(dwy);
      } else {
        out.weight[slot] += w;
        out.dweight_x[slot] += dwx;
        out.dweight_y[slot] += dwy;
      }
    }
  }
}

LevelSample interpolate_level(std::span<const float> table, std::uint32_t table_size,
                              int features_per_level, double x, double y,
                              const LevelGeometry& level, int k) {
  LevelSample out;
  interpolate_level(table, table_size, features_per_level, x, y, level, k, out);
  return out;
}

}  // namespace hashfield
