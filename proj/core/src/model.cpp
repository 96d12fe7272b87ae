#include "hashfield/model.hpp"

#include <cmath>
#include <stdexcept>

namespace hashfield {

HashGrid HashGrid::create(const GridConfig& config, Rng& rng) {
  config.validate();
  HashGrid grid;
  grid.config = config;
  grid.levels = resolution_schedule(config);
  const std::size_t total = static_cast<std::size_t>(config.levels) * config.table_size *
                            config.features_per_level;
  grid.tables.resize(total);
  for (auto& v : grid.tables) v = static_cast<float>(rng.uniform(-1e-4, 1e-4));
  return grid;
}

PixelDecoder PixelDecoder::create(int input_dim, Rng& rng) {
  if (input_dim < 1) throw std::invalid_argument("PixelDecoder: input_dim must be >= 1");
  PixelDecoder d;
  d.input_dim = input_dim;
  d.hidden_dim = kDecoderHiddenWidth;
  d.w1.resize(static_cast<std::size_t>(d.hidden_dim) * input_dim);
  d.b1.assign(d.hidden_dim, 0.0f);
  d.w2.resize(static_cast<std::size_t>(3) * d.hidden_dim);
  d.b2.assign(3, 0.0f);
  const double s1 = std::sqrt(6.0 / input_dim);
  for (auto& w : d.w1) w = static_cast<float>(rng.uniform(-s1, s1));
  const double s2 = std::sqrt(6.0 / d.hidden_dim);
  for (auto& w : d.w2) w = static_cast<float>(rng.uniform(-s2, s2));
  return d;
}

namespace {

void check_pair(const HashGrid& grid, const PixelDecoder& decoder) {
  if (decoder.input_dim != grid.config.feature_dim())
    throw std::invalid_argument("decode: decoder input_dim does not match grid config");
}

}  // namespace

void decode(const HashGrid& grid, const PixelDecoder& decoder, double x, double y,
            DecodedSample& out) {
  check_pair(grid, decoder);
  const int levels = grid.config.levels;
  const int f = grid.config.features_per_level;
  const int in_dim = decoder.input_dim;
  const int hidden = decoder.hidden_dim;

  out.x = x;
  out.y = y;
  out.k = grid.config.k;
  out.level_count = levels;
  out.features_per_level = f;
  out.hidden_dim = hidden;
  out.features.assign(in_dim, 0.0);
  out.hidden.assign(hidden, 0.0);
  out.levels.resize(levels);

  for (int l = 0; l < levels; ++l) {
    interpolate_level(grid.level_table(l), grid.config.table_size, f, x, y,
                      grid.levels[l], grid.config.k, out.levels[l]);
    for (int c = 0; c < f; ++c) out.features[static_cast<std::size_t>(l) * f + c] =
        out.levels[l].value[c];
  }

  for (int h = 0; h < hidden; ++h) {
    double acc = static_cast<double>(decoder.b1[h]);
    const float* row = decoder.w1.data() + static_cast<std::size_t>(h) * in_dim;
    for (int i = 0; i < in_dim; ++i) acc += static_cast<double>(row[i]) * out.features[i];
    out.hidden[h] = acc > 0.0 ? acc : 0.0;
  }

  for (int o = 0; o < 3; ++o) {
    double acc = static_cast<double>(decoder.b2[o]);
    const float* row = decoder.w2.data() + static_cast<std::size_t>(o) * hidden;
    for (int h = 0; h < hidden; ++h) acc += static_cast<double>(row[h]) * out.hidden[h];
    out.rgb[o] = acc;
  }
}

DecodedSample decode(const HashGrid& grid, const PixelDecoder& decoder, double x, double y) {
  DecodedSample out;
  decode(grid, decoder, x, y, out);
  return out;
}

void DecoderGrads::resize(const PixelDecoder& decoder) {
  w1.assign(decoder.w1.size(), 0.0);
  b1.assign(decoder.b1.size(), 0.0);
  w2.assign(decoder.w2.size(), 0.0);
  b2.assign(decoder.b2.size(), 0.0);
}

void DecoderGrads::set_zero() {
  std::fill(w1.begin(), w1.end(), 0.0);
  std::fill(b1.begin(), b1.end(), 0.0);
  std::fill(w2.begin(), w2.end(), 0.0);
  std::fill(b2.begin(), b2.end(), 0.0);
}

void TableGradAccum::resize(const HashGrid& grid) {
  grads.assign(grid.tables.size(), 0.0);
  marked.assign(static_cast<std::size_t>(grid.config.levels) * grid.config.table_size, 0);
  touched.clear();
  table_size = grid.config.table_size;
  features_per_level = grid.config.features_per_level;
}

void TableGradAccum::set_zero() {
  for (const std::uint32_t t : touched) {
    marked[t] = 0;
    double* g = grads.data() + static_cast<std::size_t>(t) * features_per_level;
    for (int c = 0; c < features_per_level; ++c) g[c] = 0.0;
  }
  touched.clear();
}

void backward(const HashGrid& grid, const PixelDecoder& decoder, const DecodedSample& sample,
              std::span<const double, 3> rgb_grad, TableGradAccum& table_grads,
              DecoderGrads& decoder_grads, CoordGrad& coord_grad) {
  check_pair(grid, decoder);
  if (sample.level_count != grid.config.levels ||
      sample.features_per_level != grid.config.features_per_level ||
      sample.hidden_dim != decoder.hidden_dim || sample.k != grid.config.k ||
      sample.features.size() != static_cast<std::size_t>(decoder.input_dim))
    throw std::invalid_argument("backward: sample cache does not match the model");

  const int in_dim = decoder.input_dim;
  const int hidden = decoder.hidden_dim;
  const int f = grid.config.features_per_level;

  // Layer 2.
  thread_local std::vector<double> dhidden;
  dhidden.assign(hidden, 0.0);
  for (int o = 0; o < 3; ++o) {
    const double g = rgb_grad[o];
    decoder_grads.b2[o] += g;
    double* gw = decoder_grads.w2.data() + static_cast<std::size_t>(o) * hidden;
    const float* row = decoder.w2.data() + static_cast<std::size_t>(o) * hidden;
    for (int h = 0; h < hidden; ++h) {
      gw[h] += g * sample.hidden[h];
      dhidden[h] += g * static_cast<double>(row[h]);
    }
  }

  // Rectifier: hidden[h] > 0 iff the pre-activation was positive.
  for (int h = 0; h < hidden; ++h)
    if (!(sample.hidden[h] > 0.0)) dhidden[h] = 0.0;

  // Layer 1.
  thread_local std::vector<double> dfeat;
  dfeat.assign(in_dim, 0.0);
  for (int h = 0; h < hidden; ++h) {
    const double g = dhidden[h];
    if (g == 0.0) continue;
    decoder_grads.b1[h] += g;
    double* gw = decoder_grads.w1.data() + static_cast<std::size_t>(h) * in_dim;
    const float* row = decoder.w1.data() + static_cast<std::size_t>(h) * in_dim;
    for (int i = 0; i < in_dim; ++i) {
      gw[i] += g * sample.features[i];
      dfeat[i] += g * static_cast<double>(row[i]);
    }
  }

  // Into the tables and the coordinate.
  double gx = 0.0, gy = 0.0;
  for (int l = 0; l < sample.level_count; ++l) {
    const LevelSample& ls = sample.levels[l];
    const double* df = dfeat.data() + static_cast<std::size_t>(l) * f;
    for (int c = 0; c < f; ++c) {
      gx += df[c] * ls.grad_x[c];
      gy += df[c] * ls.grad_y[c];
    }
    const std::size_t base = static_cast<std::size_t>(l) * grid.config.table_size;
    for (std::size_t e = 0; e < ls.entries.size(); ++e) {
      const std::uint32_t key = static_cast<std::uint32_t>(base + ls.entries[e]);
      if (!table_grads.marked[key]) {
        table_grads.marked[key] = 1;
        table_grads.touched.push_back(key);
      }
      double* g = table_grads.grads.data() + static_cast<std::size_t>(key) * f;
      const double w = ls.weight[e];
      for (int c = 0; c < f; ++c) g[c] += w * df[c];
    }
  }
  coord_grad.x += gx;
  coord_grad.y += gy;
}

CoordGrad coordinate_gradient(const PixelDecoder& decoder, const DecodedSample& sample,
                              std::span<const double, 3> rgb_grad) {
  if (sample.hidden_dim != decoder.hidden_dim ||
      sample.features.size() != static_cast<std::size_t>(decoder.input_dim))
    throw std::invalid_argument("coordinate_gradient: sample cache does not match the decoder");
  const int in_dim = decoder.input_dim;
  const int hidden = decoder.hidden_dim;
  const int f = sample.features_per_level;

  thread_local std::vector<double> dhidden;
  dhidden.assign(hidden, 0.0);
  for (int o = 0; o < 3; ++o) {
    const double g = rgb_grad[o];
    const float* row = decoder.w2.data() + static_cast<std::size_t>(o) * hidden;
    for (int h = 0; h < hidden; ++h) dhidden[h] += g * static_cast<double>(row[h]);
  }
  for (int h = 0; h < hidden; ++h)
    if (!(sample.hidden[h] > 0.0)) dhidden[h] = 0.0;

  thread_local std::vector<double> dfeat;
  dfeat.assign(in_dim, 0.0);
  for (int h = 0; h < hidden; ++h) {
    const double g = dhidden[h];
    if (g == 0.0) continue;
    const float* row = decoder.w1.data() + static_cast<std::size_t>(h) * in_dim;
    for (int i = 0; i < in_dim; ++i) dfeat[i] += g * static_cast<double>(row[i]);
  }

  CoordGrad grad;
  for (int l = 0; l < sample.level_count; ++l) {
    const LevelSample& ls = sample.levels[l];
    const double* df = dfeat.data() + static_cast<std::size_t>(l) * f;
    for (int c = 0; c < f; ++c) {
      grad.x += df[c] * ls.grad_x[c];
      grad.y += df[c] * ls.grad_y[c];
    }
  }
  return grad;
}

SparseTableGrads sparse_table_grads(const TableGradAccum& accum) {
  SparseTableGrads out;
  out.items.reserve(accum.touched.size());
  for (const std::uint32_t key : accum.touched) {
    SparseTableGrads::Item item;
    item.level = static_cast<int>(key / accum.table_size);
    item.entry = key % accum.table_size;
    const double* g = accum.grads.data() + static_cast<std::size_t>(key) * accum.features_per_level;
    item.grad.assign(g, g + accum.features_per_level);
    out.items.push_back(std::move(item));
  }
  return out;
}

std::vector<float> aggregate_feature_map(std::span<const float> map_values, int side,
                                         int features, const LevelGeometry& level,
                                         std::uint32_t table_size) {
  const int vertices = level.vertices_per_axis();
  if (side != vertices && side != level.resolution)
    throw std::invalid_argument("aggregate_feature_map: map side must be N or N+1");
  if (map_values.size() != static_cast<std::size_t>(side) * side * features)
    throw std::invalid_argument("aggregate_feature_map: value count does not match side");
  for (const float v : map_values)
    if (!std::isfinite(v))
      throw std::invalid_argument("aggregate_feature_map: non-finite map value");

  std::vector<float> table(static_cast<std::size_t>(table_size) * features, 0.0f);
  std::vector<double> sums(table.size(), 0.0);
  std::vector<std::uint32_t> counts(table_size, 0);
  for (int row = 0; row < side; ++row) {
    for (int col = 0; col < side; ++col) {
      const std::uint32_t u = level_entry_index({col, row}, level, table_size);
      counts[u] += 1;
      const float* v = map_values.data() + (static_cast<std::size_t>(row) * side + col) * features;
      double* s = sums.data() + static_cast<std::size_t>(u) * features;
      for (int c = 0; c < features; ++c) s[c] += v[c];
    }
  }
  for (std::uint32_t u = 0; u < table_size; ++u) {
    if (counts[u] == 0) continue;
    for (int c = 0; c < features; ++c)
      table[static_cast<std::size_t>(u) * features + c] =
          static_cast<float>(sums[static_cast<std::size_t>(u) * features + c] / counts[u]);
  }
  return table;
}

}  // namespace hashfield
