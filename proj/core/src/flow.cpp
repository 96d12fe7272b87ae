#include "hashfield/flow.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "parallel.hpp"

namespace hashfield {

namespace {

struct Group {
  std::vector<FlowSamplePoint> points;  // pixels sharing one displacement
  std::size_t sample_index = 0;         // index of the principal sample
};

struct DescentResult {
  double dx_norm = 0.0;
  double dy_norm = 0.0;
  double loss = 0.0;
  bool ok = false;
};

// Photometric descent for one group from one start. Decoding clamps to the
// unit square; a clamped axis contributes no gradient.
DescentResult descend(const FlowProblem& p, const Group& group,
                      const std::vector<std::array<double, 3>>& targets, double dx0_norm,
                      double dy0_norm) {
  const FlowDescentConfig& cfg = p.descent;
  const double lr_x = cfg.step_size_px / p.width;
  const double lr_y = cfg.step_size_px / p.height;
  const double inv_n = 1.0 / static_cast<double>(group.points.size());

  double dx = dx0_norm, dy = dy0_norm;
  double mx = 0.0, vx = 0.0, my = 0.0, vy = 0.0;
  double loss = 0.0;
  DecodedSample sample;

  for (int step = 1; step <= cfg.steps; ++step) {
    double gx = 0.0, gy = 0.0;
    loss = 0.0;
    for (std::size_t i = 0; i < group.points.size(); ++i) {
      const FlowSamplePoint& pt = group.points[i];
      const double x0 = ImageBuffer::center_x(pt.col, p.width);
      const double y0 = ImageBuffer::center_y(pt.row, p.height);
      const double qx = x0 + dx;
      const double qy = y0 + dy;
      const double cx = std::clamp(qx, 0.0, 1.0);
      const double cy = std::clamp(qy, 0.0, 1.0);
      decode(*p.grid_b, *p.decoder_b, cx, cy, sample);

      std::array<double, 3> up{};
      for (int c = 0; c < 3; ++c) {
        const double e = sample.rgb[c] - targets[i][c];
        loss += e * e * inv_n;
        up[c] = 2.0 * e * inv_n;
      }
      const CoordGrad g = coordinate_gradient(*p.decoder_b, sample, up);
      if (cx == qx) gx += g.x;
      if (cy == qy) gy += g.y;
    }
    if (!std::isfinite(loss) || !std::isfinite(gx) || !std::isfinite(gy))
      return {dx, dy, loss, false};

    const AdamParams& a = cfg.adam;
    const double bias1 = 1.0 - std::pow(a.beta1, step);
    const double bias2 = 1.0 - std::pow(a.beta2, step);
    mx = a.beta1 * mx + (1.0 - a.beta1) * gx;
    vx = a.beta2 * vx + (1.0 - a.beta2) * gx * gx;
    my = a.beta1 * my + (1.0 - a.beta1) * gy;
    vy = a.beta2 * vy + (1.0 - a.beta2) * gy * gy;
    dx -= lr_x * (mx / bias1) / (std::sqrt(vx / bias2) + a.eps);
    dy -= lr_y * (my / bias1) / (std::sqrt(vy / bias2) + a.eps);
  }

  // Final loss at the converged displacement.
  loss = 0.0;
  for (std::size_t i = 0; i < group.points.size(); ++i) {
    const FlowSamplePoint& pt = group.points[i];
    const double cx = std::clamp(ImageBuffer::center_x(pt.col, p.width) + dx, 0.0, 1.0);
    const double cy = std::clamp(ImageBuffer::center_y(pt.row, p.height) + dy, 0.0, 1.0);
    decode(*p.grid_b, *p.decoder_b, cx, cy, sample);
    for (int c = 0; c < 3; ++c) {
      const double e = sample.rgb[c] - targets[i][c];
      loss += e * e * inv_n;
    }
  }
  if (!std::isfinite(loss)) return {dx, dy, loss, false};
  return {dx, dy, loss, true};
}

}  // namespace

TranslationPair synth_translation_pair(const ImageBuffer& image, int dx_px, int dy_px) {
  if (std::abs(dx_px) > kFlowShiftRadiusPx || std::abs(dy_px) > kFlowShiftRadiusPx)
    throw std::invalid_argument("synth_translation_pair: shift exceeds the 50 px radius");
  TranslationPair pair;
  pair.a = image;
  pair.dx_px = dx_px;
  pair.dy_px = dy_px;
  pair.b = image;
  for (int r = 0; r < image.height; ++r) {
    const int src_r = std::clamp(r - dy_px, 0, image.height - 1);
    for (int c = 0; c < image.width; ++c) {
      const int src_c = std::clamp(c - dx_px, 0, image.width - 1);
      for (int ch = 0; ch < 3; ++ch) pair.b.at(c, r, ch) = image.at(src_c, src_r, ch);
    }
  }
  return pair;
}

TranslationPair synth_translation_pair(const ImageBuffer& image, Rng& rng, int radius_px) {
  // uniform over the integer disk: translate within a radius, not a box
  int dx = 0, dy = 0;
  do {
    dx = rng.uniform_int(-radius_px, radius_px);
    dy = rng.uniform_int(-radius_px, radius_px);
  } while (dx * dx + dy * dy > radius_px * radius_px);
  return synth_translation_pair(image, dx, dy);
}

const char* flow_mode_name(FlowMode mode) {
  switch (mode) {
    case FlowMode::Pixel: return "pixel";
    case FlowMode::Patch3x3: return "patch";
    case FlowMode::Image: return "image";
  }
  return "unknown";
}

std::vector<FlowSamplePoint> draw_flow_samples(int width, int height, int count, int margin_px,
                                               Rng& rng) {
  if (width <= 2 * margin_px || height <= 2 * margin_px)
    throw std::invalid_argument("draw_flow_samples: margin leaves no interior");
  std::vector<FlowSamplePoint> pts(count);
  for (auto& pt : pts) {
    pt.col = margin_px + static_cast<int>(rng.below(width - 2 * margin_px));
    pt.row = margin_px + static_cast<int>(rng.below(height - 2 * margin_px));
  }
  return pts;
}

FlowEstimate solve_flow(const FlowProblem& p, int threads) {
  if (!p.grid_a || !p.decoder_a || !p.grid_b || !p.decoder_b)
    throw std::invalid_argument("solve_flow: incomplete problem");
  if (p.samples.empty()) throw std::invalid_argument("solve_flow: no samples");
  if (p.mode == FlowMode::Patch3x3 && p.margin_px < 1)
    throw std::invalid_argument("solve_flow: patch mode needs margin >= 1 for the 3x3 patch");
  for (const FlowSamplePoint& pt : p.samples) {
    if (pt.col < p.margin_px || pt.col >= p.width - p.margin_px ||
        pt.row < p.margin_px || pt.row >= p.height - p.margin_px)
      throw std::invalid_argument("solve_flow: sample violates the boundary margin");
  }

  // Build the groups that share one displacement.
  std::vector<Group> groups;
  if (p.mode == FlowMode::Image) {
    Group g;
    g.points = p.samples;
    g.sample_index = 0;
    groups.push_back(std::move(g));
  } else {
    groups.reserve(p.samples.size());
    for (std::size_t i = 0; i < p.samples.size(); ++i) {
      Group g;
      g.sample_index = i;
      if (p.mode == FlowMode::Pixel) {
        g.points = {p.samples[i]};
      } else {
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc)
            g.points.push_back({p.samples[i].col + dc, p.samples[i].row + dr});
      }
      groups.push_back(std::move(g));
    }
  }

  // Multi-start displacements (normalized units).
  std::vector<std::pair<double, double>> starts{{0.0, 0.0}};
  if (p.mode == FlowMode::Image && p.descent.multi_start) {
    starts.clear();
    const int s = p.descent.multi_start_spacing_px;
    for (int ix = -2; ix <= 2; ++ix)
      for (int iy = -2; iy <= 2; ++iy)
        starts.emplace_back(static_cast<double>(ix * s) / p.width,
                            static_cast<double>(iy * s) / p.height);
  }

  // The target colors come from field A at the group's own pixels.
  std::vector<std::vector<std::array<double, 3>>> targets(groups.size());
  detail::parallel_blocks(groups.size(), threads, [&](int, std::size_t lo, std::size_t hi) {
    DecodedSample sample;
    for (std::size_t gi = lo; gi < hi; ++gi) {
      const Group& group = groups[gi];
      targets[gi].resize(group.points.size());
      for (std::size_t i = 0; i < group.points.size(); ++i) {
        decode(*p.grid_a, *p.decoder_a,
               ImageBuffer::center_x(group.points[i].col, p.width),
               ImageBuffer::center_y(group.points[i].row, p.height), sample);
        targets[gi][i] = sample.rgb;
      }
    }
  });

  // Every (group, start) descent is independent; the best start per group is
  // selected afterwards in fixed order.
  const std::size_t per_group = starts.size();
  std::vector<DescentResult> results(groups.size() * per_group);
  detail::parallel_blocks(results.size(), threads, [&](int, std::size_t lo, std::size_t hi) {
    for (std::size_t t = lo; t < hi; ++t) {
      const std::size_t gi = t / per_group;
      const auto& [sx, sy] = starts[t % per_group];
      results[t] = descend(p, groups[gi], targets[gi], sx, sy);
    }
  });

  std::vector<DescentResult> best(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    DescentResult chosen;
    chosen.ok = false;
    for (std::size_t s = 0; s < per_group; ++s) {
      const DescentResult& r = results[gi * per_group + s];
      if (r.ok && (!chosen.ok || r.loss < chosen.loss)) chosen = r;
    }
    best[gi] = chosen;
  }

  FlowEstimate est;
  est.samples.resize(p.samples.size());
  for (std::size_t i = 0; i < p.samples.size(); ++i) {
    est.samples[i].col = p.samples[i].col;
    est.samples[i].row = p.samples[i].row;
  }
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const DescentResult& r = best[gi];
    const auto assign = [&](std::size_t si) {
      SampleFlow& s = est.samples[si];
      s.failed = !r.ok;
      s.dx_px = r.dx_norm * p.width;
      s.dy_px = r.dy_norm * p.height;
      s.final_loss = r.loss;
      if (r.ok && p.truth_px) {
        const double ex = s.dx_px - p.truth_px->first;
        const double ey = s.dy_px - p.truth_px->second;
        s.epe_px = std::sqrt(ex * ex + ey * ey);
      }
    };
    if (p.mode == FlowMode::Image) {
      for (std::size_t si = 0; si < est.samples.size(); ++si) assign(si);
    } else {
      assign(groups[gi].sample_index);
    }
  }

  double epe_sum = 0.0;
  for (const SampleFlow& s : est.samples) {
    if (s.failed) {
      ++est.failed;
      continue;
    }
    ++est.retained;
    if (s.epe_px) epe_sum += *s.epe_px;
  }
  est.mean_epe_px = est.retained > 0 && p.truth_px ? epe_sum / est.retained : 0.0;
  return est;
}

FlowReport flow_report(std::span<const FlowRun> runs) {
  if (runs.empty()) throw std::invalid_argument("flow_report: no runs");
  std::map<std::pair<int, int>, std::vector<const FlowEstimate*>> cells;
  for (const FlowRun& run : runs)
    cells[{run.k, static_cast<int>(run.mode)}].push_back(&run.estimate);

  std::size_t problems = cells.begin()->second.size();
  for (const auto& [key, list] : cells)
    if (list.size() != problems)
      throw std::invalid_argument("flow_report: cells cover different problem counts");

  FlowReport report;
  for (const auto& [key, list] : cells) {
    FlowReportCell cell;
    cell.k = key.first;
    cell.mode = static_cast<FlowMode>(key.second);
    cell.problems = static_cast<int>(list.size());
    double epe_sum = 0.0;
    std::int64_t n = 0;
    for (const FlowEstimate* est : list) {
      cell.retained += est->retained;
      cell.failed += est->failed;
      for (const SampleFlow& s : est->samples)
        if (!s.failed && s.epe_px) {
          epe_sum += *s.epe_px;
          ++n;
        }
    }
    cell.mean_epe_px = n > 0 ? epe_sum / static_cast<double>(n) : 0.0;
    report.cells.push_back(cell);
  }
  return report;
}

std::string FlowReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const FlowReportCell& c : cells) {
    j.push_back({{"k", c.k},
                 {"mode", flow_mode_name(c.mode)},
                 {"mean_epe_px", c.mean_epe_px},
                 {"problems", c.problems},
                 {"retained", c.retained},
                 {"failed", c.failed}});
  }
  return j.dump(2);
}

std::string FlowReport::to_text() const {
  std::ostringstream out;
  out << "k     mode    mean EPE (px)   problems  retained  failed\n";
  for (const FlowReportCell& c : cells) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-5d %-7s %-15.4f %-9d %-9d %d\n", c.k,
                  flow_mode_name(c.mode), c.mean_epe_px, c.problems, c.retained, c.failed);
    out << line;
  }
  return out.str();
}

ImageBuffer flow_visualization(const FlowEstimate& estimate, int width, int height) {
  double max_mag = 1e-9;
  for (const SampleFlow& s : estimate.samples) {
    if (s.failed) continue;
    max_mag = std::max(max_mag, std::hypot(s.dx_px, s.dy_px));
  }
  ImageBuffer img = ImageBuffer::solid(width, height, 0.0f, 0.0f, 0.0f);
  const auto hsv = [](double h, double s, double v, float* rgb) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    rgb[0] = static_cast<float>(r + m);
    rgb[1] = static_cast<float>(g + m);
    rgb[2] = static_cast<float>(b + m);
  };
  for (const SampleFlow& s : estimate.samples) {
    if (s.failed) continue;
    const double mag = std::hypot(s.dx_px, s.dy_px) / max_mag;
    double ang = std::atan2(s.dy_px, s.dx_px) * 180.0 / 3.14159265358979323846;
    if (ang < 0) ang += 360.0;
    float rgb[3];
    hsv(ang, mag, 1.0, rgb);
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int c = s.col + dc, r = s.row + dr;
        if (c < 0 || c >= width || r < 0 || r >= height) continue;
        img.at(c, r, 0) = rgb[0];
        img.at(c, r, 1) = rgb[1];
        img.at(c, r, 2) = rgb[2];
      }
  }
  return img;
}

}  // namespace hashfield
