#include "hashfield/optim.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hashfield/analysis.hpp"
#include "hashfield/rng.hpp"
#include "parallel.hpp"

namespace hashfield {

namespace {

constexpr std::uint64_t kDecoderInitStream = 0xD0;
constexpr std::uint64_t kTableInitStream = 0x100;
constexpr std::uint64_t kSamplerStream = 0x200;

// Per-image streams are keyed by content, not batch position: encoding the
// same image under the same seed follows the same trajectory whether it is
// fitted alone or inside a batch.
std::uint64_t image_key(const ImageBuffer& image) {
  std::uint64_t h = fnv1a64(image.data.data(), image.data.size() * sizeof(float));
  const int dims[2] = {image.width, image.height};
  return h ^ fnv1a64(dims, sizeof(dims));
}
constexpr std::size_t kMaxSharedImages = 64;
constexpr int kMinFitSide = 8;

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  void resize(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

// One step of Adam on a single parameter. Bias correction uses the global
// step count; sparse parameters decay only when touched, matching the usual
// sparse-Adam convention.
inline void adam_update(float& param, double grad, double& m, double& v,
                        const AdamParams& p, double lr, double bias1, double bias2) {
  m = p.beta1 * m + (1.0 - p.beta1) * grad;
  v = p.beta2 * v + (1.0 - p.beta2) * grad * grad;
  const double mhat = m / bias1;
  const double vhat = v / bias2;
  param = static_cast<float>(param - lr * mhat / (std::sqrt(vhat) + p.eps));
}

struct BatchSample {
  int image = 0;
  double x = 0.0;
  double y = 0.0;
  std::array<float, 3> target{};
};

// Every mode updates the tables; only FinetuneTablesOnly freezes the decoder.
bool updates_decoder(TrainMode mode) {
  return mode != TrainMode::FinetuneTablesOnly;
}

const char* first_non_finite_group(const std::vector<HashGrid>& grids,
                                   const PixelDecoder& decoder) {
  for (const auto& g : grids)
    for (const float v : g.tables)
      if (!std::isfinite(v)) return "tables";
  for (const float v : decoder.w1)
    if (!std::isfinite(v)) return "decoder.w1";
  for (const float v : decoder.b1)
    if (!std::isfinite(v)) return "decoder.b1";
  for (const float v : decoder.w2)
    if (!std::isfinite(v)) return "decoder.w2";
  for (const float v : decoder.b2)
    if (!std::isfinite(v)) return "decoder.b2";
  return "loss";
}

class Trainer {
 public:
  Trainer(std::vector<const ImageBuffer*> images, std::vector<HashGrid> grids,
          PixelDecoder decoder, const TrainConfig& config)
      : images_(std::move(images)),
        grids_(std::move(grids)),
        decoder_(std::move(decoder)),
        config_(config) {
    const std::size_t b = images_.size();
    samplers_.reserve(b);
    for (std::size_t i = 0; i < b; ++i)
      samplers_.emplace_back(
          derive_stream_seed(config.seed, kSamplerStream ^ image_key(*images_[i])));

    table_states_.resize(b);
    for (std::size_t i = 0; i < b; ++i) table_states_[i].resize(grids_[i].tables.size());
    dec_state_w1_.resize(decoder_.w1.size());
    dec_state_b1_.resize(decoder_.b1.size());
    dec_state_w2_.resize(decoder_.w2.size());
    dec_state_b2_.resize(decoder_.b2.size());

    accums_.resize(b);
    for (std::size_t i = 0; i < b; ++i) accums_[i].resize(grids_[i]);
    dec_grads_.resize(decoder_);
    samples_.resize(static_cast<std::size_t>(config.batch_pixels));
    decoded_.resize(samples_.size());
  }

  TrainReport run() {
    const auto t0 = std::chrono::steady_clock::now();
    TrainReport report;
    report.seed = config_.seed;
    report.steps = config_.steps;
    report.batch_pixels = config_.batch_pixels;
    report.image_count = static_cast<int>(images_.size());
    report.mode = config_.mode;
    report.lr_tables = config_.lr_tables;
    report.lr_decoder = config_.lr_decoder;
    report.loss_curve.reserve(config_.steps);

    for (int step = 1; step <= config_.steps; ++step) {
      const double loss = train_step(step);
      if (!std::isfinite(loss)) {
        const char* group = first_non_finite_group(grids_, decoder_);
        throw std::runtime_error("fit diverged at step " + std::to_string(step) +
                                 " (non-finite " + std::string(group) + ")");
      }
      report.loss_curve.push_back(loss);
    }

    for (std::size_t i = 0; i < images_.size(); ++i) {
      const double mse = evaluate_mse(grids_[i], decoder_, *images_[i], config_.threads);
      report.final_mse.push_back(mse);
      report.final_psnr.push_back(psnr_from_mse(mse));
    }
    report.wall_clock_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - t0)
                               .count();
    return report;
  }

  std::vector<HashGrid>&& take_grids() { return std::move(grids_); }
  PixelDecoder&& take_decoder() { return std::move(decoder_); }

 private:
  double train_step(int step) {
    const std::size_t b = images_.size();
    // The per-step pixel budget is shared by the whole batch, so a larger
    // batch means fewer samples per image at equal steps.
    const std::size_t total = static_cast<std::size_t>(config_.batch_pixels);
    const std::size_t quota = total / b;
    const std::size_t remainder = total % b;

    // Draw the whole batch up front; sampling must not depend on the worker
    // count.
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < b; ++i) {
      const ImageBuffer& img = *images_[i];
      const std::size_t n = quota + (i < remainder ? 1 : 0);
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t p = samplers_[i].below(img.pixel_count());
        const int row = static_cast<int>(p) / img.width;
        const int col = static_cast<int>(p) % img.width;
        BatchSample& bs = samples_[cursor++];
        bs.image = static_cast<int>(i);
        bs.x = ImageBuffer::center_x(col, img.width);
        bs.y = ImageBuffer::center_y(row, img.height);
        bs.target = {img.at(col, row, 0), img.at(col, row, 1), img.at(col, row, 2)};
      }
    }

    // Forward pass is pure per sample and runs in parallel.
    detail::parallel_blocks(total, config_.threads, [&](int, std::size_t lo, std::size_t hi) {
      for (std::size_t s = lo; s < hi; ++s) {
        const BatchSample& bs = samples_[s];
        decode(grids_[bs.image], decoder_, bs.x, bs.y, decoded_[s]);
      }
    });

    // Backward accumulation in fixed sample order keeps the result
    // independent of the worker count.
    const double inv = 1.0 / (3.0 * static_cast<double>(total));
    double sq_sum = 0.0;
    CoordGrad coord_sink;
    for (std::size_t s = 0; s < total; ++s) {
      const BatchSample& bs = samples_[s];
      const DecodedSample& d = decoded_[s];
      std::array<double, 3> up{};
      for (int c = 0; c < 3; ++c) {
        const double e = d.rgb[c] - static_cast<double>(bs.target[c]);
        sq_sum += e * e;
        up[c] = 2.0 * e * inv;
      }
      backward(grids_[bs.image], decoder_, d, up, accums_[bs.image], dec_grads_, coord_sink);
    }
    const double loss = sq_sum * inv;  // mean over pixels and channels

    apply_updates(step);
    return loss;
  }

  void apply_updates(int step) {
    const double bias1 = 1.0 - std::pow(config_.adam.beta1, step);
    const double bias2 = 1.0 - std::pow(config_.adam.beta2, step);

    for (std::size_t i = 0; i < grids_.size(); ++i) {
      TableGradAccum& acc = accums_[i];
      AdamState& st = table_states_[i];
      const int f = acc.features_per_level;
      for (const std::uint32_t key : acc.touched) {
        const std::size_t base = static_cast<std::size_t>(key) * f;
        for (int c = 0; c < f; ++c) {
          adam_update(grids_[i].tables[base + c], acc.grads[base + c], st.m[base + c],
                      st.v[base + c], config_.adam, config_.lr_tables, bias1, bias2);
        }
      }
      acc.set_zero();
    }

    if (updates_decoder(config_.mode)) {
      auto dense = [&](std::vector<float>& params, const std::vector<double>& grads,
                       AdamState& st) {
        for (std::size_t i = 0; i < params.size(); ++i)
          adam_update(params[i], grads[i], st.m[i], st.v[i], config_.adam,
                      config_.lr_decoder, bias1, bias2);
      };
      dense(decoder_.w1, dec_grads_.w1, dec_state_w1_);
      dense(decoder_.b1, dec_grads_.b1, dec_state_b1_);
      dense(decoder_.w2, dec_grads_.w2, dec_state_w2_);
      dense(decoder_.b2, dec_grads_.b2, dec_state_b2_);
    }
    dec_grads_.set_zero();
  }

  std::vector<const ImageBuffer*> images_;
  std::vector<HashGrid> grids_;
  PixelDecoder decoder_;
  TrainConfig config_;
  std::vector<Rng> samplers_;
  std::vector<AdamState> table_states_;
  AdamState dec_state_w1_, dec_state_b1_, dec_state_w2_, dec_state_b2_;
  std::vector<TableGradAccum> accums_;
  DecoderGrads dec_grads_;
  std::vector<BatchSample> samples_;
  std::vector<DecodedSample> decoded_;
};

const ImageBuffer& guard_min_size(const ImageBuffer& image, ImageBuffer& storage, int k) {
  const int min_side = std::max(kMinFitSide, 2 * k);
  if (image.width >= min_side && image.height >= min_side) return image;
  std::fprintf(stderr,
               "warning: image %dx%d is below the minimum fit size %d, upsampling\n",
               image.width, image.height, min_side);
  storage = upsample_nearest(image, min_side);
  return storage;
}

}  // namespace

const char* train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::PerImage: return "per_image";
    case TrainMode::SharedDecoder: return "shared_decoder";
    case TrainMode::FinetuneTablesOnly: return "finetune_tables_only";
    case TrainMode::FinetuneJoint: return "finetune_joint";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
  if (batch_pixels < 1) throw std::invalid_argument("TrainConfig: batch_pixels must be >= 1");
  if (!(lr_tables > 0.0) || !(lr_decoder > 0.0))
    throw std::invalid_argument("TrainConfig: step sizes must be positive");
}

double evaluate_mse(const HashGrid& grid, const PixelDecoder& decoder,
                    const ImageBuffer& image, int threads) {
  const std::size_t n = image.pixel_count();
  std::vector<double> partial(n);
  detail::parallel_blocks(n, threads, [&](int, std::size_t lo, std::size_t hi) {
    DecodedSample d;
    for (std::size_t p = lo; p < hi; ++p) {
      const int row = static_cast<int>(p) / image.width;
      const int col = static_cast<int>(p) % image.width;
      decode(grid, decoder, ImageBuffer::center_x(col, image.width),
             ImageBuffer::center_y(row, image.height), d);
      double s = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double e = d.rgb[c] - static_cast<double>(image.at(col, row, c));
        s += e * e;
      }
      partial[p] = s;
    }
  });
  double sum = 0.0;
  for (const double s : partial) sum += s;
  return sum / (3.0 * static_cast<double>(n));
}

FitResult fit_per_image(const ImageBuffer& image, const GridConfig& grid_config,
                        const TrainConfig& train_config) {
  grid_config.validate();
  train_config.validate();
  ImageBuffer storage;
  const ImageBuffer& img = guard_min_size(image, storage, grid_config.k);

  Rng table_rng(derive_stream_seed(train_config.seed, kTableInitStream ^ image_key(img)));
  Rng decoder_rng(derive_stream_seed(train_config.seed, kDecoderInitStream));
  std::vector<HashGrid> grids;
  grids.push_back(HashGrid::create(grid_config, table_rng));
  PixelDecoder decoder = PixelDecoder::create(grid_config.feature_dim(), decoder_rng);

  TrainConfig cfg = train_config;
  cfg.mode = TrainMode::PerImage;
  Trainer trainer({&img}, std::move(grids), std::move(decoder), cfg);
  FitResult result;
  result.report = trainer.run();
  result.grid = std::move(trainer.take_grids()[0]);
  result.decoder = trainer.take_decoder();
  return result;
}

SharedFitResult fit_shared_decoder(std::span<const ImageBuffer> images,
                                   const GridConfig& grid_config,
                                   const TrainConfig& train_config) {
  grid_config.validate();
  train_config.validate();
  if (images.empty() || images.size() > kMaxSharedImages)
    throw std::invalid_argument("fit_shared_decoder: batch must have 1..64 images");

  std::vector<ImageBuffer> storage(images.size());
  std::vector<const ImageBuffer*> ptrs;
  ptrs.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    ptrs.push_back(&guard_min_size(images[i], storage[i], grid_config.k));

  std::vector<HashGrid> grids;
  grids.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng table_rng(
        derive_stream_seed(train_config.seed, kTableInitStream ^ image_key(*ptrs[i])));
    grids.push_back(HashGrid::create(grid_config, table_rng));
  }
  Rng decoder_rng(derive_stream_seed(train_config.seed, kDecoderInitStream));
  PixelDecoder decoder = PixelDecoder::create(grid_config.feature_dim(), decoder_rng);

  TrainConfig cfg = train_config;
  cfg.mode = TrainMode::SharedDecoder;
  Trainer trainer(std::move(ptrs), std::move(grids), std::move(decoder), cfg);
  SharedFitResult result;
  result.report = trainer.run();
  result.grids = trainer.take_grids();
  result.decoder = trainer.take_decoder();
  return result;
}

FitResult finetune(const HashGrid& grid_init, const PixelDecoder& decoder_init,
                   const ImageBuffer& image, const TrainConfig& train_config) {
  grid_init.config.validate();
  train_config.validate();
  if (train_config.mode != TrainMode::FinetuneTablesOnly &&
      train_config.mode != TrainMode::FinetuneJoint)
    throw std::invalid_argument("finetune: mode must be a finetune mode");
  if (decoder_init.input_dim != grid_init.config.feature_dim())
    throw std::invalid_argument("finetune: decoder does not match grid config");
  if (grid_init.tables.size() != static_cast<std::size_t>(grid_init.config.levels) *
                                     grid_init.config.table_size *
                                     grid_init.config.features_per_level)
    throw std::invalid_argument("finetune: grid table shape does not match its config");

  ImageBuffer storage;
  const ImageBuffer& img = guard_min_size(image, storage, grid_init.config.k);

  std::vector<HashGrid> grids;
  grids.push_back(grid_init);
  Trainer trainer({&img}, std::move(grids), decoder_init, train_config);
  FitResult result;
  result.report = trainer.run();
  result.grid = std::move(trainer.take_grids()[0]);
  result.decoder = trainer.take_decoder();
  return result;
}

std::string train_report_json(const TrainReport& report) {
  nlohmann::json j;
  j["seed"] = report.seed;
  j["steps"] = report.steps;
  j["batch_pixels"] = report.batch_pixels;
  j["image_count"] = report.image_count;
  j["mode"] = train_mode_name(report.mode);
  j["lr_tables"] = report.lr_tables;
  j["lr_decoder"] = report.lr_decoder;
  j["wall_clock_ms"] = report.wall_clock_ms;
  j["loss_curve"] = report.loss_curve;
  j["final_mse"] = report.final_mse;
  auto psnrs = nlohmann::json::array();
  for (const double p : report.final_psnr)
    psnrs.push_back(std::isinf(p) ? nlohmann::json("inf") : nlohmann::json(p));
  j["final_psnr"] = psnrs;
  return j.dump(2);
}

}  // namespace hashfield
