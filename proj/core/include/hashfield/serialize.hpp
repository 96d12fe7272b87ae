#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hashfield/model.hpp"

namespace hashfield {

struct Model {
  HashGrid grid;
  PixelDecoder decoder;
};

enum class ModelFormatErrorKind {
  BadMagic,
  BadVersion,
  Truncated,
  TrailingBytes,
  NonFinite,
  BadConfig,
};

class ModelFormatError : public std::runtime_error {
 public:
  ModelFormatError(ModelFormatErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ModelFormatErrorKind kind() const { return kind_; }

 private:
  ModelFormatErrorKind kind_;
};

// Stream layout: "HSHF" magic, u32 version, GridConfig as six u32 fields
// (levels, table_size, features_per_level, n_min, n_max, k), the table values
// level-major / entry-major / feature-minor, then the decoder weights
// layer-major (w1, b1, w2, b2). All integers and floats little-endian.
// Version 1 stores 32-bit floats; version 2 stores IEEE binary16 payloads
// (the compact export; loading it reconstructs a float model).
inline constexpr std::uint32_t kModelVersionF32 = 1;
inline constexpr std::uint32_t kModelVersionF16 = 2;

std::vector<std::uint8_t> serialize_model(const HashGrid& grid, const PixelDecoder& decoder,
                                          bool half_precision = false);
Model deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const std::string& path, const HashGrid& grid, const PixelDecoder& decoder,
                bool half_precision = false);
Model load_model(const std::string& path);

/// Byte size of the table payload alone (no header, no decoder).
std::size_t table_payload_bytes(const GridConfig& config, bool half_precision);

/// Total stream size for a model of this configuration.
std::size_t model_stream_bytes(const GridConfig& config, int hidden_dim,
                               bool half_precision = false);

// IEEE binary16 conversion, round-to-nearest-even.
std::uint16_t float_to_half(float v);
float half_to_float(std::uint16_t h);

}  // namespace hashfield
