#include "hashfield/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hashfield/analysis.hpp"
#include "hashfield/flow.hpp"
#include "hashfield/manifest.hpp"
#include "hashfield/optim.hpp"
#include "hashfield/serialize.hpp"

namespace hashfield {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string timestamp_utc() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

json psnr_json(double v) {
  return std::isinf(v) ? json("inf") : json(v);
}

// Shared run-scoped state: the output directory and the manifest.
struct RunContext {
  std::string command;
  fs::path run_dir;
  RunManifest manifest;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  explicit RunContext(const std::string& cmd, const std::string& run_dir_flag,
                      int argc, const char* const* argv)
      : command(cmd) {
    run_dir = run_dir_flag.empty() ? fs::path("runs") / (timestamp_utc() + "-" + cmd)
                                   : fs::path(run_dir_flag);
    fs::create_directories(run_dir);
    manifest.command = cmd;
    manifest.tool_version = kToolVersion;
    for (int i = 0; i < argc; ++i) manifest.argv.emplace_back(argv[i]);
    manifest.notes.push_back(
        "pixel (col,row) centers map to ((col+0.5)/W, (row+0.5)/H); non-square images "
        "use anisotropic cells (each axis normalized independently)");
  }

  fs::path out(const std::string& name) {
    const fs::path p = run_dir / name;
    manifest.outputs.push_back(p.string());
    return p;
  }

  void track(const std::string& path) { manifest.outputs.push_back(path); }

  void finish(std::uint64_t seed, const json& config) {
    manifest.seed = seed;
    manifest.config_json = config.dump();
    manifest.wall_clock_ms = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count();
    manifest.write_atomic((run_dir / "manifest.json").string());
  }
};

struct GridFlags {
  int levels = 12;
  int table_log2 = 12;
  int features = 2;
  int n_min = 4;
  int n_max = 346;
  int k = 1;

  void attach(CLI::App* app) {
    app->add_option("--levels", levels, "Number of levels L");
    app->add_option("--table-log2", table_log2, "log2 of the table size T");
    app->add_option("--features", features, "Features per level F");
    app->add_option("--nmin", n_min, "Coarsest resolution");
    app->add_option("--nmax", n_max, "Finest resolution");
    app->add_option("--k", k, "Interpolation half-order (1=bilinear, 2=cubic)");
  }

  GridConfig config() const {
    GridConfig c;
    c.levels = levels;
    c.table_size = 1u << table_log2;
    c.features_per_level = features;
    c.n_min = n_min;
    c.n_max = n_max;
    c.k = k;
    c.validate();
    return c;
  }

  json to_json() const {
    return {{"levels", levels},     {"table_size", 1u << table_log2},
            {"features", features}, {"n_min", n_min},
            {"n_max", n_max},       {"k", k}};
  }
};

struct TrainFlags {
  int steps = 1000;
  int batch = 4096;
  double lr_tables = 1e-2;
  double lr_decoder = 1e-3;
  std::uint64_t seed = 0;
  int threads = 1;
  bool unordered_reduction = false;

  void attach(CLI::App* app) {
    app->add_option("--steps", steps, "Optimization steps");
    app->add_option("--batch", batch, "Pixels per step");
    app->add_option("--lr-tables", lr_tables, "Table step size");
    app->add_option("--lr-decoder", lr_decoder, "Decoder step size");
    app->add_option("--seed", seed, "Run seed; all randomness flows from it");
    app->add_option("--threads", threads, "Worker threads (default 1)");
  }

  TrainConfig config(TrainMode mode) const {
    TrainConfig c;
    c.steps = steps;
    c.batch_pixels = batch;
    c.lr_tables = lr_tables;
    c.lr_decoder = lr_decoder;
    c.seed = seed;
    c.mode = mode;
    c.threads = threads;
    c.fixed_order_reduction = !unordered_reduction;
    c.validate();
    return c;
  }

  json to_json(TrainMode mode) const {
    return {{"steps", steps},           {"batch", batch},
            {"lr_tables", lr_tables},   {"lr_decoder", lr_decoder},
            {"seed", seed},             {"threads", threads},
            {"mode", train_mode_name(mode)}};
  }
};

json report_to_json(const TrainReport& r) {
  return json::parse(train_report_json(r));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

fs::path indexed_path(const fs::path& base, std::size_t i, std::size_t total) {
  if (total <= 1) return base;
  fs::path p = base;
  const std::string stem = p.stem().string();
  const std::string ext = p.extension().string();
  p.replace_filename(stem + "_" + std::to_string(i) + ext);
  return p;
}

// ---------------------------------------------------------------------------

int cmd_fit(const std::vector<std::string>& images_flag, const GridFlags& gf,
            const TrainFlags& tf, const std::string& mode_flag, const std::string& out_flag,
            RunContext& ctx) {
  const GridConfig grid_cfg = gf.config();
  const bool shared = mode_flag == "shared_decoder";
  if (!shared && images_flag.size() > 1)
    throw CLI::ValidationError("--mode", "multiple images require --mode shared_decoder");

  std::vector<ImageBuffer> images;
  for (const std::string& path : images_flag) {
    ctx.manifest.add_input(path);
    images.push_back(load_image(path));
  }

  const TrainMode mode = shared ? TrainMode::SharedDecoder : TrainMode::PerImage;
  const TrainConfig train_cfg = tf.config(mode);

  json config = {{"grid", gf.to_json()}, {"train", tf.to_json(mode)}, {"images", images_flag}};

  std::vector<fs::path> model_paths;
  TrainReport report;
  if (shared) {
    const SharedFitResult fit = fit_shared_decoder(images, grid_cfg, train_cfg);
    report = fit.report;
    for (std::size_t i = 0; i < fit.grids.size(); ++i) {
      const fs::path p = out_flag.empty()
                             ? ctx.out(indexed_path("model.hshf", i, fit.grids.size()).string())
                             : indexed_path(out_flag, i, fit.grids.size());
      if (!out_flag.empty()) ctx.track(p.string());
      save_model(p.string(), fit.grids[i], fit.decoder);
      model_paths.push_back(p);
    }
  } else {
    const FitResult fit = fit_per_image(images[0], grid_cfg, train_cfg);
    report = fit.report;
    const fs::path p = out_flag.empty() ? ctx.out("model.hshf") : fs::path(out_flag);
    if (!out_flag.empty()) ctx.track(p.string());
    save_model(p.string(), fit.grid, fit.decoder);
    model_paths.push_back(p);
  }

  write_text(ctx.out("report.json"), train_report_json(report));
  for (std::size_t i = 0; i < report.final_psnr.size(); ++i)
    std::printf("image %zu: PSNR %.2f dB\n", i, report.final_psnr[i]);
  ctx.finish(tf.seed, config);
  return 0;
}

int cmd_finetune(const std::string& model_flag, const std::string& image_flag,
                 bool freeze_decoder, const TrainFlags& tf, const std::string& out_flag,
                 RunContext& ctx) {
  ctx.manifest.add_input(model_flag);
  ctx.manifest.add_input(image_flag);
  const Model model = load_model(model_flag);
  const ImageBuffer image = load_image(image_flag);

  const TrainMode mode =
      freeze_decoder ? TrainMode::FinetuneTablesOnly : TrainMode::FinetuneJoint;
  const TrainConfig train_cfg = tf.config(mode);
  const FitResult fit = finetune(model.grid, model.decoder, image, train_cfg);

  const fs::path p = out_flag.empty() ? ctx.out("model.hshf") : fs::path(out_flag);
  if (!out_flag.empty()) ctx.track(p.string());
  save_model(p.string(), fit.grid, fit.decoder);
  write_text(ctx.out("report.json"), train_report_json(fit.report));
  std::printf("finetuned: PSNR %.2f dB\n", fit.report.final_psnr.at(0));

  json config = {{"model", model_flag},
                 {"image", image_flag},
                 {"freeze_decoder", freeze_decoder},
                 {"train", tf.to_json(mode)}};
  ctx.finish(tf.seed, config);
  return 0;
}

int cmd_decode(const std::string& model_flag, const std::string& out_flag, int width,
               int height, const std::string& mask_flag, int threads, RunContext& ctx) {
  ctx.manifest.add_input(model_flag);
  const Model model = load_model(model_flag);
  const int w = width > 0 ? width : model.grid.config.n_max;
  const int h = height > 0 ? height : model.grid.config.n_max;
  LevelMask mask = LevelMask::All;
  if (mask_flag == "dense") mask = LevelMask::DenseOnly;
  else if (mask_flag == "hashed") mask = LevelMask::HashedOnly;
  else if (mask_flag == "none") mask = LevelMask::None;

  const ImageBuffer img = decode_image(model.grid, model.decoder, w, h, mask, threads);
  save_image_png(img, out_flag);
  ctx.track(out_flag);
  json config = {{"model", model_flag}, {"width", w}, {"height", h}, {"mask", mask_flag}};
  ctx.finish(0, config);
  return 0;
}

int cmd_flow(const std::string& model_a, const std::string& model_b,
             const std::string& mode_flag, int samples, int margin, std::uint64_t seed,
             const std::string& truth_flag, int width, int height, int steps,
             double step_size, bool no_multi_start, int threads, const std::string& out_flag,
             const std::string& viz_flag, RunContext& ctx) {
  ctx.manifest.add_input(model_a);
  ctx.manifest.add_input(model_b);
  const Model a = load_model(model_a);
  const Model b = load_model(model_b);

  FlowProblem problem;
  problem.grid_a = &a.grid;
  problem.decoder_a = &a.decoder;
  problem.grid_b = &b.grid;
  problem.decoder_b = &b.decoder;
  problem.width = width > 0 ? width : a.grid.config.n_max;
  problem.height = height > 0 ? height : a.grid.config.n_max;
  if (mode_flag == "pixel") problem.mode = FlowMode::Pixel;
  else if (mode_flag == "patch") problem.mode = FlowMode::Patch3x3;
  else problem.mode = FlowMode::Image;
  problem.margin_px = margin;
  problem.descent.steps = steps;
  problem.descent.step_size_px = step_size;
  problem.descent.multi_start = !no_multi_start;
  if (!truth_flag.empty()) {
    double dx = 0, dy = 0;
    if (std::sscanf(truth_flag.c_str(), "%lf,%lf", &dx, &dy) != 2)
      throw CLI::ValidationError("--truth", "expected \"dx,dy\"");
    problem.truth_px = {dx, dy};
  }

  Rng rng(derive_stream_seed(seed, 0xF70));
  problem.samples = draw_flow_samples(problem.width, problem.height, samples, margin, rng);

  const FlowEstimate est = solve_flow(problem, threads);

  json j;
  j["mode"] = mode_flag;
  j["samples"] = json::array();
  for (const SampleFlow& s : est.samples) {
    json e = {{"col", s.col},       {"row", s.row},   {"dx_px", s.dx_px},
              {"dy_px", s.dy_px},   {"loss", s.final_loss}, {"failed", s.failed}};
    if (s.epe_px) e["epe_px"] = *s.epe_px;
    j["samples"].push_back(e);
  }
  j["retained"] = est.retained;
  j["failed"] = est.failed;
  if (problem.truth_px) j["mean_epe_px"] = est.mean_epe_px;

  const fs::path out = out_flag.empty() ? ctx.out("flow.json") : fs::path(out_flag);
  if (!out_flag.empty()) ctx.track(out.string());
  write_text(out, j.dump(2) + "\n");
  if (problem.truth_px) std::printf("mean EPE: %.4f px\n", est.mean_epe_px);

  if (!viz_flag.empty()) {
    save_image_png(flow_visualization(est, problem.width, problem.height), viz_flag);
    ctx.track(viz_flag);
  }

  json config = {{"model_a", model_a},   {"model_b", model_b}, {"mode", mode_flag},
                 {"samples", samples},   {"margin", margin},   {"steps", steps},
                 {"step_size", step_size}, {"seed", seed}};
  ctx.finish(seed, config);
  return 0;
}

// --------------------------- analyze subcommands ---------------------------

int cmd_analyze_invariance(const std::string& image_flag, int max_shift, int shift_step,
                           const GridFlags& gf, const TrainFlags& tf,
                           const std::string& channels_flag, RunContext& ctx) {
  ctx.manifest.add_input(image_flag);
  const ImageBuffer image = load_image(image_flag);

  InvarianceOptions opts;
  opts.grid = gf.config();
  opts.train = tf.config(TrainMode::SharedDecoder);
  for (int r = -max_shift; r <= max_shift; r += shift_step)
    if (r != 0) opts.shifts.push_back(r);

  const std::vector<InvarianceResult> results = translation_invariance(image, opts);

  json j = json::array();
  for (const InvarianceResult& r : results) {
    j.push_back({{"shift_px", r.shift_px},
                 {"level", r.level},
                 {"divergence", r.divergence},
                 {"feature_variance", r.feature_variance},
                 {"cosine_similarity", r.cosine_similarity},
                 {"valid_probes", r.valid_probes}});
  }
  write_text(ctx.out("invariance.json"), j.dump(2) + "\n");

  // Heatmaps of the selected concatenated channels for the largest shift,
  // original encoding vs the shifted-and-reverted one.
  std::vector<int> channels;
  {
    std::stringstream ss(channels_flag);
    std::string tok;
    while (std::getline(ss, tok, ',')) channels.push_back(std::stoi(tok));
  }
  const int r = max_shift;
  const ImageBuffer shifted = shift_image_x(image, r);
  const ImageBuffer pair[2] = {image, shifted};
  const SharedFitResult fit =
      fit_shared_decoder(std::span<const ImageBuffer>(pair, 2), opts.grid, opts.train);
  const int f = opts.grid.features_per_level;
  for (const int ch : channels) {
    const int level = ch / f;
    const int feat = ch % f;
    if (level >= opts.grid.levels) continue;
    const int side = fit.grids[0].levels[level].vertices_per_axis();
    const auto pick = [&](const std::vector<double>& field) {
      std::vector<double> plane(static_cast<std::size_t>(side) * side);
      for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = field[i * f + feat];
      return plane;
    };
    const auto base = pick(render_level_features(fit.grids[0], level));
    const auto reverted =
        pick(render_level_features(fit.grids[1], level, static_cast<double>(r) / image.width));
    save_image_png(heatmap_image(base, side, side),
                   ctx.out("channel" + std::to_string(ch) + "_base.png").string());
    save_image_png(heatmap_image(reverted, side, side),
                   ctx.out("channel" + std::to_string(ch) + "_reverted.png").string());
  }

  ctx.manifest.notes.push_back("heatmaps normalized per level (min/max of each map)");
  json config = {{"image", image_flag},   {"max_shift", max_shift},
                 {"shift_step", shift_step}, {"grid", gf.to_json()},
                 {"train", tf.to_json(TrainMode::SharedDecoder)}};
  ctx.finish(tf.seed, config);
  return 0;
}

int cmd_analyze_ablation(const std::string& model_flag, const std::string& image_flag,
                         int threads, RunContext& ctx) {
  ctx.manifest.add_input(model_flag);
  ctx.manifest.add_input(image_flag);
  const Model model = load_model(model_flag);
  const ImageBuffer image = load_image(image_flag);

  const AblationResult res = layer_ablation(model.grid, model.decoder, image, threads);
  json j = {{"psnr_full", psnr_json(res.psnr_full)},
            {"psnr_dense_only", psnr_json(res.psnr_dense_only)},
            {"psnr_hashed_only", psnr_json(res.psnr_hashed_only)}};
  write_text(ctx.out("ablation.json"), j.dump(2) + "\n");
  std::printf("%s\n", j.dump(2).c_str());

  for (const auto& [mask, name] :
       {std::pair{LevelMask::All, "full"}, {LevelMask::DenseOnly, "dense_only"},
        {LevelMask::HashedOnly, "hashed_only"}}) {
    save_image_png(
        decode_image(model.grid, model.decoder, image.width, image.height, mask, threads),
        ctx.out(std::string(name) + ".png").string());
  }
  json config = {{"model", model_flag}, {"image", image_flag}};
  ctx.finish(0, config);
  return 0;
}

int cmd_analyze_sweep(const std::string& image_flag, int log2_min, int log2_max,
                      const GridFlags& gf, const TrainFlags& tf, RunContext& ctx) {
  ctx.manifest.add_input(image_flag);
  const ImageBuffer image = load_image(image_flag);
  GridConfig base = gf.config();
  const std::vector<SweepPoint> points =
      table_size_sweep(image, log2_min, log2_max, base, tf.config(TrainMode::PerImage));

  json j = json::array();
  std::vector<double> xs, ys;
  for (const SweepPoint& p : points) {
    j.push_back({{"table_size", p.table_size},
                 {"psnr", psnr_json(p.psnr)},
                 {"payload_bytes", p.payload_bytes}});
    xs.push_back(std::log2(static_cast<double>(p.table_size)));
    ys.push_back(p.psnr);
  }
  write_text(ctx.out("sweep.json"), j.dump(2) + "\n");
  save_image_png(curve_image(xs, ys, 512, 384), ctx.out("sweep.png").string());

  json config = {{"image", image_flag}, {"log2_min", log2_min}, {"log2_max", log2_max},
                 {"grid", gf.to_json()}, {"train", tf.to_json(TrainMode::PerImage)}};
  ctx.finish(tf.seed, config);
  return 0;
}

int cmd_analyze_hist(const std::vector<std::string>& model_flags, int bins, RunContext& ctx) {
  std::vector<HashGrid> grids;
  for (const std::string& path : model_flags) {
    ctx.manifest.add_input(path);
    grids.push_back(load_model(path).grid);
  }
  const std::vector<LevelHistogram> hists = entry_histograms(grids, bins);

  json j = json::array();
  for (const LevelHistogram& h : hists) {
    j.push_back({{"level", h.level},
                 {"mean", h.mean},
                 {"stddev", h.stddev},
                 {"skewness", h.skewness},
                 {"bin_min", h.bin_min},
                 {"bin_max", h.bin_max},
                 {"counts", h.counts}});
    std::vector<double> xs(h.counts.size()), ys(h.counts.size());
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      xs[i] = h.bin_min + (h.bin_max - h.bin_min) * (i + 0.5) / h.counts.size();
      ys[i] = static_cast<double>(h.counts[i]);
    }
    save_image_png(curve_image(xs, ys, 512, 384),
                   ctx.out("hist_level" + std::to_string(h.level) + ".png").string());
  }
  write_text(ctx.out("hist.json"), j.dump(2) + "\n");
  json config = {{"models", model_flags}, {"bins", bins}};
  ctx.finish(0, config);
  return 0;
}

int cmd_analyze_indexmap(int level_flag, const GridFlags& gf, RunContext& ctx) {
  const GridConfig cfg = gf.config();
  const std::vector<LevelGeometry> levels = resolution_schedule(cfg);
  for (const LevelGeometry& level : levels) {
    if (level_flag >= 0 && level.level != level_flag) continue;
    const std::string tag = "indexmap_l" + std::to_string(level.level);
    save_image_png(index_map_image(level, cfg.table_size), ctx.out(tag + ".png").string());
    const std::vector<std::uint32_t> map = index_map(level, cfg.table_size);
    std::ostringstream csv;
    const int side = level.vertices_per_axis();
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        csv << map[static_cast<std::size_t>(r) * side + c];
        csv << (c + 1 == side ? '\n' : ',');
      }
    }
    write_text(ctx.out(tag + ".csv"), csv.str());
  }
  json config = {{"grid", gf.to_json()}, {"level", level_flag}};
  ctx.finish(0, config);
  return 0;
}

int cmd_analyze_interp_trace(int resolution, std::uint64_t seed, int points, RunContext& ctx) {
  Rng rng(derive_stream_seed(seed, 0x17ACE));
  std::vector<double> values(resolution + 1);
  for (double& v : values) v = rng.uniform();

  std::ostringstream csv;
  csv << "t,nearest,k1,k2,dk1,dk2\n";
  for (int i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) / (points - 1) * resolution;
    const auto eval = [&](int k) {
      const AxisStencil s = make_axis_stencil(t, resolution, k);
      double v = 0.0, d = 0.0;
      for (int n = 0; n < s.count; ++n) {
        v += s.weights[n] * values[s.nodes[n]];
        d += s.dweights[n] * values[s.nodes[n]];
      }
      return std::pair{v, d};
    };
    const auto [v1, d1] = eval(1);
    const auto [v2, d2] = eval(2);
    const int nearest = std::clamp(static_cast<int>(std::lround(t)), 0, resolution);
    csv << t << ',' << values[nearest] << ',' << v1 << ',' << v2 << ',' << d1 << ',' << d2
        << '\n';
  }
  write_text(ctx.out("interp_trace.csv"), csv.str());
  json config = {{"resolution", resolution}, {"seed", seed}, {"points", points}};
  ctx.finish(seed, config);
  return 0;
}

int cmd_analyze_flowbench(const std::vector<std::string>& image_flags, int problems,
                          std::uint64_t seed, int samples, int margin, int fit_steps,
                          int flow_steps, const GridFlags& gf, const TrainFlags& tf,
                          RunContext& ctx) {
  std::vector<ImageBuffer> images;
  for (const std::string& path : image_flags) {
    ctx.manifest.add_input(path);
    images.push_back(load_image(path));
  }

  std::vector<FlowRun> runs;
  for (int pi = 0; pi < problems; ++pi) {
    Rng rng(derive_stream_seed(seed, 0xF10 + pi));
    const ImageBuffer& img = images[pi % images.size()];
    const TranslationPair pair = synth_translation_pair(img, rng);
    const ImageBuffer fit_pair[2] = {pair.a, pair.b};

    for (const int k : {1, 2}) {
      GridConfig gcfg = gf.config();
      gcfg.k = k;
      TrainConfig tcfg = tf.config(TrainMode::SharedDecoder);
      tcfg.steps = fit_steps;
      const SharedFitResult fit =
          fit_shared_decoder(std::span<const ImageBuffer>(fit_pair, 2), gcfg, tcfg);

      FlowProblem problem;
      problem.grid_a = &fit.grids[0];
      problem.decoder_a = &fit.decoder;
      problem.grid_b = &fit.grids[1];
      problem.decoder_b = &fit.decoder;
      problem.width = img.width;
      problem.height = img.height;
      problem.margin_px = margin;
      problem.descent.steps = flow_steps;
      problem.truth_px = {static_cast<double>(pair.dx_px), static_cast<double>(pair.dy_px)};
      Rng sample_rng(derive_stream_seed(seed, 0xF20 + pi));
      problem.samples =
          draw_flow_samples(img.width, img.height, samples, margin, sample_rng);

      for (const FlowMode mode : {FlowMode::Pixel, FlowMode::Patch3x3, FlowMode::Image}) {
        problem.mode = mode;
        FlowRun run;
        run.k = k;
        run.mode = mode;
        run.estimate = solve_flow(problem, tf.threads);
        runs.push_back(std::move(run));
      }
    }
    std::printf("problem %d/%d done\n", pi + 1, problems);
  }

  const FlowReport report = flow_report(runs);
  write_text(ctx.out("flowbench.json"), report.to_json() + "\n");
  write_text(ctx.out("flowbench.txt"), report.to_text());
  std::printf("%s", report.to_text().c_str());

  json config = {{"images", image_flags}, {"problems", problems}, {"samples", samples},
                 {"margin", margin},      {"fit_steps", fit_steps}, {"flow_steps", flow_steps},
                 {"grid", gf.to_json()},  {"seed", seed}};
  ctx.finish(seed, config);
  return 0;
}

int cmd_model_info(const std::string& model_flag, const std::string& image_flag) {
  const Model model = load_model(model_flag);
  const GridConfig& c = model.grid.config;
  json j;
  j["config"] = {{"levels", c.levels},
                 {"table_size", c.table_size},
                 {"features_per_level", c.features_per_level},
                 {"n_min", c.n_min},
                 {"n_max", c.n_max},
                 {"k", c.k}};
  auto levels = json::array();
  for (const LevelGeometry& g : model.grid.levels)
    levels.push_back({{"level", g.level}, {"resolution", g.resolution}, {"dense", g.dense}});
  j["levels"] = levels;
  j["table_parameters"] = model.grid.tables.size();
  j["decoder_parameters"] = model.decoder.size();
  j["table_payload_bytes_f32"] = table_payload_bytes(c, false);
  j["table_payload_bytes_f16"] = table_payload_bytes(c, true);
  j["stream_bytes_f32"] = model_stream_bytes(c, model.decoder.hidden_dim, false);
  j["stream_bytes_f16"] = model_stream_bytes(c, model.decoder.hidden_dim, true);
  if (!image_flag.empty()) {
    const ImageBuffer img = load_image(image_flag);
    const std::size_t raw = img.pixel_count() * 3;
    j["image_raw_bytes"] = raw;
    j["payload_f32_within_image"] = table_payload_bytes(c, false) <= raw;
    j["payload_f16_within_image"] = table_payload_bytes(c, true) <= raw;
  }
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"hash-encoded image fields: fit, decode, flow, analyze"};
  app.require_subcommand(1);
  app.fallthrough();  // parent options may follow the subcommand
  std::string run_dir_flag;
  app.add_option("--run-dir", run_dir_flag,
                 "Run directory (default runs/<timestamp>-<command>)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a model to one or more images");
  std::vector<std::string> fit_images;
  fit->add_option("--image", fit_images, "Input image (repeat for a batch)")->required();
  GridFlags fit_grid;
  fit_grid.attach(fit);
  TrainFlags fit_train;
  fit_train.attach(fit);
  std::string fit_mode = "per_image";
  fit->add_option("--mode", fit_mode, "per_image or shared_decoder")
      ->check(CLI::IsMember({"per_image", "shared_decoder"}));
  std::string fit_out;
  fit->add_option("--out", fit_out, "Model output path");

  // finetune
  auto* ft = app.add_subcommand("finetune", "Refine a model on an image");
  std::string ft_model, ft_image, ft_out;
  bool ft_freeze = false;
  ft->add_option("--model", ft_model)->required();
  ft->add_option("--image", ft_image)->required();
  ft->add_flag("--freeze-decoder", ft_freeze, "Update tables only");
  TrainFlags ft_train;
  ft_train.steps = 100;
  ft_train.attach(ft);
  ft->add_option("--out", ft_out, "Model output path");

  // decode
  auto* dec = app.add_subcommand("decode", "Decode a model into an image");
  std::string dec_model, dec_out, dec_mask = "all";
  int dec_w = 0, dec_h = 0, dec_threads = 1;
  dec->add_option("--model", dec_model)->required();
  dec->add_option("--out", dec_out)->required();
  dec->add_option("--width", dec_w, "Output width (default n_max)");
  dec->add_option("--height", dec_h, "Output height (default n_max)");
  dec->add_option("--mask", dec_mask, "Level mask: all, dense, hashed, none")
      ->check(CLI::IsMember({"all", "dense", "hashed", "none"}));
  dec->add_option("--threads", dec_threads);

  // flow
  auto* flow = app.add_subcommand("flow", "Displacement between two fitted fields");
  std::string flow_a, flow_b, flow_mode = "image", flow_truth, flow_out, flow_viz;
  int flow_samples = 256, flow_margin = 50, flow_w = 0, flow_h = 0, flow_steps = 300;
  int flow_threads = 1;
  double flow_step_size = 0.5;
  bool flow_no_multi_start = false;
  std::uint64_t flow_seed = 0;
  flow->add_option("--model-a", flow_a)->required();
  flow->add_option("--model-b", flow_b)->required();
  flow->add_option("--mode", flow_mode)->check(CLI::IsMember({"pixel", "patch", "image"}));
  flow->add_option("--samples", flow_samples);
  flow->add_option("--margin", flow_margin);
  flow->add_option("--seed", flow_seed);
  flow->add_option("--truth", flow_truth, "Ground-truth displacement \"dx,dy\" in pixels");
  flow->add_option("--width", flow_w, "Field width in pixels (default n_max)");
  flow->add_option("--height", flow_h, "Field height in pixels (default n_max)");
  flow->add_option("--steps", flow_steps);
  flow->add_option("--step-size", flow_step_size, "Descent step size in pixels");
  flow->add_flag("--no-multi-start", flow_no_multi_start);
  flow->add_option("--threads", flow_threads);
  flow->add_option("--out", flow_out, "Estimates JSON path");
  flow->add_option("--viz", flow_viz, "Optional displacement visualization PNG");

  // analyze
  auto* an = app.add_subcommand("analyze", "Diagnostic experiments");
  an->require_subcommand(1);

  auto* inv = an->add_subcommand("invariance", "Translation invariance of the encoding");
  std::string inv_image, inv_channels = "4,12,16";
  int inv_max_shift = 80, inv_shift_step = 10;
  GridFlags inv_grid;
  TrainFlags inv_train;
  inv_train.steps = 400;
  inv->add_option("--image", inv_image)->required();
  inv->add_option("--max-shift", inv_max_shift);
  inv->add_option("--shift-step", inv_shift_step);
  inv->add_option("--channels", inv_channels, "Concatenated channels to visualize");
  inv_grid.attach(inv);
  inv_train.attach(inv);

  auto* abl = an->add_subcommand("ablation", "Dense-vs-hashed level ablation");
  std::string abl_model, abl_image;
  int abl_threads = 1;
  abl->add_option("--model", abl_model)->required();
  abl->add_option("--image", abl_image)->required();
  abl->add_option("--threads", abl_threads);

  auto* sweep = an->add_subcommand("sweep", "Reconstruction quality vs table size");
  std::string sweep_image;
  int sweep_log2_min = 8, sweep_log2_max = 16;
  GridFlags sweep_grid;
  TrainFlags sweep_train;
  sweep_train.steps = 600;
  sweep->add_option("--image", sweep_image)->required();
  sweep->add_option("--log2-min", sweep_log2_min);
  sweep->add_option("--log2-max", sweep_log2_max);
  sweep_grid.attach(sweep);
  sweep_train.attach(sweep);

  auto* hist = an->add_subcommand("hist", "Entry density histograms over fitted models");
  std::vector<std::string> hist_models;
  int hist_bins = 64;
  hist->add_option("--model", hist_models, "Fitted model (repeat)")->required();
  hist->add_option("--bins", hist_bins);

  auto* imap = an->add_subcommand("indexmap", "Hash index maps per level");
  int imap_level = -1;
  GridFlags imap_grid;
  imap->add_option("--level", imap_level, "Single level (default: all)");
  imap_grid.attach(imap);

  auto* trace = an->add_subcommand("interp-trace", "1D interpolant traces as CSV");
  int trace_resolution = 16, trace_points = 513;
  std::uint64_t trace_seed = 0;
  trace->add_option("--resolution", trace_resolution);
  trace->add_option("--points", trace_points);
  trace->add_option("--seed", trace_seed);

  auto* bench = an->add_subcommand("flowbench", "Displacement benchmark grid (k x mode)");
  std::vector<std::string> bench_images;
  int bench_problems = 20, bench_samples = 256, bench_margin = 50;
  int bench_fit_steps = 800, bench_flow_steps = 300;
  GridFlags bench_grid;
  TrainFlags bench_train;
  bench->add_option("--image", bench_images, "Source image (repeat)")->required();
  bench->add_option("--problems", bench_problems);
  bench->add_option("--samples", bench_samples);
  bench->add_option("--margin", bench_margin);
  bench->add_option("--fit-steps", bench_fit_steps);
  bench->add_option("--flow-steps", bench_flow_steps);
  bench_grid.attach(bench);
  bench_train.attach(bench);

  // model-info
  auto* info = app.add_subcommand("model-info", "Print model configuration and sizes");
  std::string info_model, info_image;
  info->add_option("--model", info_model)->required();
  info->add_option("--image", info_image, "Reference image for size comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (fit->parsed()) {
      RunContext ctx("fit", run_dir_flag, argc, argv);
      return cmd_fit(fit_images, fit_grid, fit_train, fit_mode, fit_out, ctx);
    }
    if (ft->parsed()) {
      RunContext ctx("finetune", run_dir_flag, argc, argv);
      return cmd_finetune(ft_model, ft_image, ft_freeze, ft_train, ft_out, ctx);
    }
    if (dec->parsed()) {
      RunContext ctx("decode", run_dir_flag, argc, argv);
      return cmd_decode(dec_model, dec_out, dec_w, dec_h, dec_mask, dec_threads, ctx);
    }
    if (flow->parsed()) {
      RunContext ctx("flow", run_dir_flag, argc, argv);
      return cmd_flow(flow_a, flow_b, flow_mode, flow_samples, flow_margin, flow_seed,
                      flow_truth, flow_w, flow_h, flow_steps, flow_step_size,
                      flow_no_multi_start, flow_threads, flow_out, flow_viz, ctx);
    }
    if (an->parsed()) {
      if (inv->parsed()) {
        RunContext ctx("analyze-invariance", run_dir_flag, argc, argv);
        return cmd_analyze_invariance(inv_image, inv_max_shift, inv_shift_step, inv_grid,
                                      inv_train, inv_channels, ctx);
      }
      if (abl->parsed()) {
        RunContext ctx("analyze-ablation", run_dir_flag, argc, argv);
        return cmd_analyze_ablation(abl_model, abl_image, abl_threads, ctx);
      }
      if (sweep->parsed()) {
        RunContext ctx("analyze-sweep", run_dir_flag, argc, argv);
        return cmd_analyze_sweep(sweep_image, sweep_log2_min, sweep_log2_max, sweep_grid,
                                 sweep_train, ctx);
      }
      if (hist->parsed()) {
        RunContext ctx("analyze-hist", run_dir_flag, argc, argv);
        return cmd_analyze_hist(hist_models, hist_bins, ctx);
      }
      if (imap->parsed()) {
        RunContext ctx("analyze-indexmap", run_dir_flag, argc, argv);
        return cmd_analyze_indexmap(imap_level, imap_grid, ctx);
      }
      if (trace->parsed()) {
        RunContext ctx("analyze-interp-trace", run_dir_flag, argc, argv);
        return cmd_analyze_interp_trace(trace_resolution, trace_seed, trace_points, ctx);
      }
      if (bench->parsed()) {
        RunContext ctx("analyze-flowbench", run_dir_flag, argc, argv);
        return cmd_analyze_flowbench(bench_images, bench_problems, bench_train.seed,
                                     bench_samples, bench_margin, bench_fit_steps,
                                     bench_flow_steps, bench_grid, bench_train, ctx);
      }
    }
    if (info->parsed()) return cmd_model_info(info_model, info_image);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

}  // namespace hashfield
