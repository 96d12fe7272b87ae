#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hashfield {

/// H x W x 3 color buffer, values in [0,1], row-major, RGB.
/// Pixel (col, row) is addressed at the normalized coordinate
/// ((col + 0.5) / W, (row + 0.5) / H).
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // height * width * 3

  static ImageBuffer solid(int w, int h, float r, float g, float b);

  float& at(int col, int row, int c) {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + c];
  }
  float at(int col, int row, int c) const {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + c];
  }

  static double center_x(int col, int width) { return (col + 0.5) / width; }
  static double center_y(int row, int height) { return (row + 0.5) / height; }

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * height;
  }
};

/// Loads an 8-bit PNG or binary PPM (P6). Values scale linearly to [0,1];
/// alpha is dropped with a warning on stderr. Rejects images with either
/// dimension below 8.
ImageBuffer load_image(const std::string& path);

/// 8-bit PNG; values are clamped to [0,1] and stored as round(v * 255).
void save_image_png(const ImageBuffer& image, const std::string& path);

/// Binary PPM (P6), same quantization as save_image_png.
void save_image_ppm(const ImageBuffer& image, const std::string& path);

/// Nearest-neighbor upsampling to at least `min_side` pixels per axis.
ImageBuffer upsample_nearest(const ImageBuffer& image, int min_side);

}  // namespace hashfield
