#include "hashfield/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "parallel.hpp"

namespace hashfield {

namespace {

// Runs the decoder MLP on an already-assembled (possibly masked) feature vector.
void mlp_forward(const PixelDecoder& decoder, std::span<const double> features,
                 std::array<double, 3>& rgb) {
  const int in_dim = decoder.input_dim;
  const int hidden = decoder.hidden_dim;
  thread_local std::vector<double> h;
  h.assign(hidden, 0.0);
  for (int j = 0; j < hidden; ++j) {
    double acc = static_cast<double>(decoder.b1[j]);
    const float* row = decoder.w1.data() + static_cast<std::size_t>(j) * in_dim;
    for (int i = 0; i < in_dim; ++i) acc += static_cast<double>(row[i]) * features[i];
    h[j] = acc > 0.0 ? acc : 0.0;
  }
  for (int o = 0; o < 3; ++o) {
    double acc = static_cast<double>(decoder.b2[o]);
    const float* row = decoder.w2.data() + static_cast<std::size_t>(o) * hidden;
    for (int j = 0; j < hidden; ++j) acc += static_cast<double>(row[j]) * h[j];
    rgb[o] = acc;
  }
}

bool level_kept(LevelMask mask, bool dense) {
  switch (mask) {
    case LevelMask::All: return true;
    case LevelMask::DenseOnly: return dense;
    case LevelMask::HashedOnly: return !dense;
    case LevelMask::None: return false;
  }
  return true;
}

}  // namespace

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("psnr: image dimensions differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double e = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    sum += e * e;
  }
  return psnr_from_mse(sum / static_cast<double>(a.data.size()));
}

double spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman_rho: need two equal-length series");
  const auto ranks = [](std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return v[x] < v[y];
    });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a);
  const std::vector<double> rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

ImageBuffer shift_image_x(const ImageBuffer& image, int shift_px) {
  ImageBuffer out = image;
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) {
      const int src = std::clamp(c - shift_px, 0, image.width - 1);
      for (int ch = 0; ch < 3; ++ch) out.at(c, r, ch) = image.at(src, r, ch);
    }
  return out;
}

std::vector<double> render_level_features(const HashGrid& grid, int level, double x_offset) {
  const LevelGeometry& geom = grid.levels.at(level);
  const int side = geom.vertices_per_axis();
  const int f = grid.config.features_per_level;
  std::vector<double> field(static_cast<std::size_t>(side) * side * f,
                            std::numeric_limits<double>::quiet_NaN());
  LevelSample sample;
  for (int j = 0; j < side; ++j) {
    const double y = static_cast<double>(j) / geom.resolution;
    for (int i = 0; i < side; ++i) {
      const double x = static_cast<double>(i) / geom.resolution + x_offset;
      if (x < 0.0 || x > 1.0) continue;
      interpolate_level(grid.level_table(level), grid.config.table_size, f, x, y, geom,
                        grid.config.k, sample);
      double* dst = field.data() + (static_cast<std::size_t>(j) * side + i) * f;
      for (int c = 0; c < f; ++c) dst[c] = sample.value[c];
    }
  }
  return field;
}

std::vector<InvarianceResult> translation_invariance(const ImageBuffer& image,
                                                     const InvarianceOptions& options) {
  options.grid.validate();
  options.train.validate();
  std::vector<InvarianceResult> results;

  for (const int r : options.shifts) {
    if (r % 10 != 0)
      std::fprintf(stderr, "warning: shift %d is not a multiple of 10 (protocol expects one)\n",
                   r);
    if (std::abs(r) > image.width / 2)
      throw std::invalid_argument("translation_invariance: shift exceeds half the image width");

    const ImageBuffer shifted = shift_image_x(image, r);
    const ImageBuffer pair_images[2] = {image, shifted};
    const SharedFitResult fit =
        fit_shared_decoder(std::span<const ImageBuffer>(pair_images, 2), options.grid,
                           options.train);

    const double r_norm = static_cast<double>(r) / image.width;
    const int f = options.grid.features_per_level;
    for (int l = 0; l < options.grid.levels; ++l) {
      const std::vector<double> base = render_level_features(fit.grids[0], l);
      // The content of I at x lives at x + r_norm in the shifted image, so the
      // reverted encoding samples the shifted grid there.
      const std::vector<double> reverted = render_level_features(fit.grids[1], l, r_norm);

      double div_sum = 0.0, base_sum = 0.0, base_sq = 0.0;
      double dot = 0.0, na = 0.0, nb = 0.0;
      int probes = 0;
      for (std::size_t i = 0; i < base.size(); i += f) {
        if (std::isnan(reverted[i])) continue;
        ++probes;
        for (int c = 0; c < f; ++c) {
          const double a = base[i + c];
          const double b = reverted[i + c];
          const double d = a - b;
          div_sum += d * d;
          base_sum += a;
          base_sq += a * a;
          dot += a * b;
          na += a * a;
          nb += b * b;
        }
      }
      InvarianceResult res;
      res.shift_px = r;
      res.level = l;
      res.valid_probes = probes;
      const double count = static_cast<double>(probes) * f;
      if (probes > 0) {
        res.divergence = div_sum / count;
        const double mean = base_sum / count;
        res.feature_variance = base_sq / count - mean * mean;
        res.cosine_similarity =
            (na > 0.0 && nb > 0.0) ? dot / std::sqrt(na * nb) : 0.0;
      }
      results.push_back(res);
    }
  }
  return results;
}

ImageBuffer decode_image(const HashGrid& grid, const PixelDecoder& decoder, int width,
                         int height, LevelMask mask, int threads) {
  ImageBuffer out;
  out.width = width;
  out.height = height;
  out.data.resize(static_cast<std::size_t>(width) * height * 3);
  const int f = grid.config.features_per_level;

  detail::parallel_blocks(static_cast<std::size_t>(width) * height, threads,
                          [&](int, std::size_t lo, std::size_t hi) {
    LevelSample sample;
    std::vector<double> features(grid.config.feature_dim(), 0.0);
    std::array<double, 3> rgb{};
    for (std::size_t p = lo; p < hi; ++p) {
      const int row = static_cast<int>(p) / width;
      const int col = static_cast<int>(p) % width;
      const double x = ImageBuffer::center_x(col, width);
      const double y = ImageBuffer::center_y(row, height);
      for (int l = 0; l < grid.config.levels; ++l) {
        const bool keep = level_kept(mask, grid.levels[l].dense);
        for (int c = 0; c < f; ++c) features[static_cast<std::size_t>(l) * f + c] = 0.0;
        if (!keep) continue;
        interpolate_level(grid.level_table(l), grid.config.table_size, f, x, y,
                          grid.levels[l], grid.config.k, sample);
        for (int c = 0; c < f; ++c)
          features[static_cast<std::size_t>(l) * f + c] = sample.value[c];
      }
      mlp_forward(decoder, features, rgb);
      for (int c = 0; c < 3; ++c)
        out.data[p * 3 + c] = static_cast<float>(rgb[c]);
    }
  });
  return out;
}

AblationResult layer_ablation(const HashGrid& grid, const PixelDecoder& decoder,
                              const ImageBuffer& image, int threads) {
  if (decoder.input_dim != grid.config.feature_dim())
    throw std::invalid_argument("layer_ablation: model pair mismatched");
  AblationResult res;
  const ImageBuffer full =
      decode_image(grid, decoder, image.width, image.height, LevelMask::All, threads);
  const ImageBuffer dense =
      decode_image(grid, decoder, image.width, image.height, LevelMask::DenseOnly, threads);
  const ImageBuffer hashed =
      decode_image(grid, decoder, image.width, image.height, LevelMask::HashedOnly, threads);
  res.psnr_full = psnr(full, image);
  res.psnr_dense_only = psnr(dense, image);
  res.psnr_hashed_only = psnr(hashed, image);
  return res;
}

std::vector<SweepPoint> table_size_sweep(const ImageBuffer& image, int log2_min, int log2_max,
                                         const GridConfig& base, const TrainConfig& train) {
  if (log2_min < 1 || log2_max > 24 || log2_min > log2_max)
    throw std::invalid_argument("table_size_sweep: bad log2 range");
  std::vector<SweepPoint> points;
  for (int p = log2_min; p <= log2_max; ++p) {
    GridConfig cfg = base;
    cfg.table_size = 1u << p;
    const FitResult fit = fit_per_image(image, cfg, train);
    SweepPoint pt;
    pt.table_size = cfg.table_size;
    pt.psnr = fit.report.final_psnr.at(0);
    pt.payload_bytes = static_cast<std::size_t>(cfg.levels) * cfg.table_size *
                       cfg.features_per_level * sizeof(float);
    points.push_back(pt);
  }
  return points;
}

std::vector<LevelHistogram> entry_histograms(std::span<const HashGrid> grids, int bins) {
  if (grids.empty()) throw std::invalid_argument("entry_histograms: no grids");
  const GridConfig& ref = grids.front().config;
  for (const HashGrid& g : grids) {
    if (g.config.levels != ref.levels || g.config.table_size != ref.table_size ||
        g.config.features_per_level != ref.features_per_level)
      throw std::invalid_argument("entry_histograms: grid configs differ");
  }

  std::vector<LevelHistogram> out(ref.levels);
  const std::vector<LevelGeometry> geometry = resolution_schedule(ref);
  for (int l = 0; l < ref.levels; ++l) {
    // Dense levels use only their (N+1)^2 linear entries; pooling the
    // untouched remainder would swamp the statistics with init noise.
    const std::size_t used_entries =
        geometry[l].dense ? static_cast<std::size_t>(geometry[l].vertices_per_axis()) *
                                geometry[l].vertices_per_axis()
                          : ref.table_size;
    const std::size_t per_level = used_entries * ref.features_per_level;
    LevelHistogram& h = out[l];
    h.level = l;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    std::size_t n = 0;
    for (const HashGrid& g : grids)
      for (std::size_t i = 0; i < per_level; ++i) {
        const double v = g.level_table(l).data()[i];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
        ++n;
      }
    const double mean = sum / static_cast<double>(n);
    double m2 = 0.0, m3 = 0.0;
    for (const HashGrid& g : grids)
      for (std::size_t i = 0; i < per_level; ++i) {
        const double d = g.level_table(l).data()[i] - mean;
        m2 += d * d;
        m3 += d * d * d;
      }
    m2 /= static_cast<double>(n);
    m3 /= static_cast<double>(n);
    h.mean = mean;
    h.stddev = std::sqrt(m2);
    h.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
    h.bin_min = lo;
    h.bin_max = hi;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double span = hi > lo ? hi - lo : 1.0;
    for (const HashGrid& g : grids)
      for (std::size_t i = 0; i < per_level; ++i) {
        const double v = g.level_table(l).data()[i];
        int bin = static_cast<int>((v - lo) / span * bins);
        bin = std::clamp(bin, 0, bins - 1);
        h.counts[static_cast<std::size_t>(bin)] += 1;
      }
  }
  return out;
}

ImageBuffer heatmap_image(std::span<const double> values, int width, int height) {
  if (values.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("heatmap_image: size mismatch");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const double v : values) {
    if (std::isnan(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  ImageBuffer img = ImageBuffer::solid(width, height, 0.0f, 0.0f, 0.0f);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double v = values[static_cast<std::size_t>(r) * width + c];
      if (std::isnan(v)) continue;
      const float g = static_cast<float>((v - lo) / span);
      img.at(c, r, 0) = g;
      img.at(c, r, 1) = g;
      img.at(c, r, 2) = g;
    }
  return img;
}

ImageBuffer curve_image(std::span<const double> xs, std::span<const double> ys, int width,
                        int height) {
  if (xs.size() != ys.size() || xs.empty())
    throw std::invalid_argument("curve_image: bad series");
  ImageBuffer img = ImageBuffer::solid(width, height, 1.0f, 1.0f, 1.0f);
  const auto minmax_x = std::minmax_element(xs.begin(), xs.end());
  const auto minmax_y = std::minmax_element(ys.begin(), ys.end());
  const double x0 = *minmax_x.first, x1 = *minmax_x.second;
  const double y0 = *minmax_y.first, y1 = *minmax_y.second;
  const double sx = x1 > x0 ? x1 - x0 : 1.0;
  const double sy = y1 > y0 ? y1 - y0 : 1.0;
  const int margin = 8;
  const auto px = [&](double x) {
    return margin + static_cast<int>((x - x0) / sx * (width - 2 * margin - 1));
  };
  const auto py = [&](double y) {
    return height - 1 - margin - static_cast<int>((y - y0) / sy * (height - 2 * margin - 1));
  };
  const auto plot = [&](int c, int r) {
    if (c < 0 || c >= width || r < 0 || r >= height) return;
    img.at(c, r, 0) = 0.1f;
    img.at(c, r, 1) = 0.1f;
    img.at(c, r, 2) = 0.4f;
  };
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const int ax = px(xs[i - 1]), ay = py(ys[i - 1]);
    const int bx = px(xs[i]), by = py(ys[i]);
    const int steps = std::max({std::abs(bx - ax), std::abs(by - ay), 1});
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      plot(static_cast<int>(std::lround(ax + t * (bx - ax))),
           static_cast<int>(std::lround(ay + t * (by - ay))));
    }
  }
  return img;
}

ImageBuffer index_map_image(const LevelGeometry& level, std::uint32_t table_size) {
  const std::vector<std::uint32_t> map = index_map(level, table_size);
  const int side = level.vertices_per_axis();
  ImageBuffer img = ImageBuffer::solid(side, side, 0.0f, 0.0f, 0.0f);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const float g = static_cast<float>(map[static_cast<std::size_t>(r) * side + c] % 256u) /
                      255.0f;
      img.at(c, r, 0) = g;
      img.at(c, r, 1) = g;
      img.at(c, r, 2) = g;
    }
  return img;
}

}  // namespace hashfield
