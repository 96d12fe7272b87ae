#include "hashfield/serialize.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace hashfield {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'H', 'F'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

void put_f16(std::vector<std::uint8_t>& out, float v) {
  const std::uint16_t h = float_to_half(v);
  out.push_back(static_cast<std::uint8_t>(h));
  out.push_back(static_cast<std::uint8_t>(h >> 8));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = bytes_[pos_] | (bytes_[pos_ + 1] << 8) | (bytes_[pos_ + 2] << 16) |
                      (static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  float f16() {
    need(2);
    const std::uint16_t h =
        static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return half_to_float(h);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n)
      throw ModelFormatError(ModelFormatErrorKind::Truncated, "model stream truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

float check_finite(float v) {
  if (!std::isfinite(v))
    throw ModelFormatError(ModelFormatErrorKind::NonFinite, "non-finite value in model stream");
  return v;
}

}  // namespace

std::uint16_t float_to_half(float v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  const std::uint32_t sign = (bits >> 16) & 0x8000u;
  const std::int32_t exp = static_cast<std::int32_t>((bits >> 23) & 0xFF) - 127 + 15;
  std::uint32_t mant = bits & 0x7FFFFFu;

  if (((bits >> 23) & 0xFF) == 0xFF)  // inf / nan
    return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0u));
  if (exp >= 0x1F) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow -> inf
  if (exp <= 0) {
    if (exp < -10) return static_cast<std::uint16_t>(sign);  // underflow -> zero
    mant |= 0x800000u;
    const int shift = 14 - exp;
    std::uint32_t half_mant = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half_mant & 1u))) half_mant += 1;
    return static_cast<std::uint16_t>(sign | half_mant);
  }
  std::uint32_t half = sign | (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) half += 1;  // may carry into exp
  return static_cast<std::uint16_t>(half);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (static_cast<std::uint32_t>(h) & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      int e = -1;
      do {
        mant <<= 1;
        ++e;
      } while (!(mant & 0x400u));
      bits = sign | ((112u - e) << 23) | ((mant & 0x3FFu) << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 112u) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

std::size_t table_payload_bytes(const GridConfig& config, bool half_precision) {
  const std::size_t values = static_cast<std::size_t>(config.levels) * config.table_size *
                             config.features_per_level;
  return values * (half_precision ? 2 : 4);
}

std::size_t model_stream_bytes(const GridConfig& config, int hidden_dim, bool half_precision) {
  const std::size_t header = 4 + 4 + 6 * 4;
  const std::size_t decoder_values =
      static_cast<std::size_t>(hidden_dim) * config.feature_dim() + hidden_dim +
      3 * static_cast<std::size_t>(hidden_dim) + 3;
  return header + table_payload_bytes(config, half_precision) +
         decoder_values * (half_precision ? 2 : 4);
}

std::vector<std::uint8_t> serialize_model(const HashGrid& grid, const PixelDecoder& decoder,
                                          bool half_precision) {
  grid.config.validate();
  if (decoder.input_dim != grid.config.feature_dim())
    throw ModelFormatError(ModelFormatErrorKind::BadConfig,
                           "decoder input_dim does not match grid config");
  if (decoder.hidden_dim != kDecoderHiddenWidth)
    throw ModelFormatError(ModelFormatErrorKind::BadConfig,
                           "model format carries a fixed decoder hidden width");
  for (const float v : grid.tables) check_finite(v);
  for (const auto* block : {&decoder.w1, &decoder.b1, &decoder.w2, &decoder.b2})
    for (const float v : *block) check_finite(v);

  std::vector<std::uint8_t> out;
  out.reserve(model_stream_bytes(grid.config, decoder.hidden_dim, half_precision));
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, half_precision ? kModelVersionF16 : kModelVersionF32);
  put_u32(out, static_cast<std::uint32_t>(grid.config.levels));
  put_u32(out, grid.config.table_size);
  put_u32(out, static_cast<std::uint32_t>(grid.config.features_per_level));
  put_u32(out, static_cast<std::uint32_t>(grid.config.n_min));
  put_u32(out, static_cast<std::uint32_t>(grid.config.n_max));
  put_u32(out, static_cast<std::uint32_t>(grid.config.k));

  const auto put_value = [&](float v) { half_precision ? put_f16(out, v) : put_f32(out, v); };
  for (const float v : grid.tables) put_value(v);
  for (const float v : decoder.w1) put_value(v);
  for (const float v : decoder.b1) put_value(v);
  for (const float v : decoder.w2) put_value(v);
  for (const float v : decoder.b2) put_value(v);
  return out;
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ModelFormatError(ModelFormatErrorKind::BadMagic, "not a model stream (bad magic)");

  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kModelVersionF32 && version != kModelVersionF16)
    throw ModelFormatError(ModelFormatErrorKind::BadVersion,
                           "unsupported model format version " + std::to_string(version));
  const bool half = version == kModelVersionF16;

  GridConfig config;
  config.levels = static_cast<int>(r.u32());
  config.table_size = r.u32();
  config.features_per_level = static_cast<int>(r.u32());
  config.n_min = static_cast<int>(r.u32());
  config.n_max = static_cast<int>(r.u32());
  config.k = static_cast<int>(r.u32());
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(ModelFormatErrorKind::BadConfig, e.what());
  }

  const auto value = [&]() { return check_finite(half ? r.f16() : r.f32()); };

  Model m;
  m.grid.config = config;
  m.grid.levels = resolution_schedule(config);
  const std::size_t table_values = static_cast<std::size_t>(config.levels) *
                                   config.table_size * config.features_per_level;
  m.grid.tables.resize(table_values);
  for (auto& v : m.grid.tables) v = value();

  // The format carries a fixed-shape decoder, so the remaining length is
  // fully determined and truncation at any point is detectable.
  const std::size_t value_size = half ? 2 : 4;
  const int in_dim = config.feature_dim();
  const std::size_t hidden = kDecoderHiddenWidth;
  const std::size_t decoder_values = hidden * static_cast<std::size_t>(in_dim + 4) + 3;
  if (r.remaining() < decoder_values * value_size)
    throw ModelFormatError(ModelFormatErrorKind::Truncated, "model stream truncated");

  m.decoder.input_dim = in_dim;
  m.decoder.hidden_dim = static_cast<int>(hidden);
  m.decoder.w1.resize(hidden * static_cast<std::size_t>(in_dim));
  m.decoder.b1.resize(hidden);
  m.decoder.w2.resize(3 * hidden);
  m.decoder.b2.resize(3);
  for (auto& v : m.decoder.w1) v = value();
  for (auto& v : m.decoder.b1) v = value();
  for (auto& v : m.decoder.w2) v = value();
  for (auto& v : m.decoder.b2) v = value();
  if (r.remaining() != 0)
    throw ModelFormatError(ModelFormatErrorKind::TrailingBytes, "trailing bytes in model stream");
  return m;
}

void save_model(const std::string& path, const HashGrid& grid, const PixelDecoder& decoder,
                bool half_precision) {
  const auto bytes = serialize_model(grid, decoder, half_precision);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace hashfield
