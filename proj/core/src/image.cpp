#include "hashfield/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace hashfield {

namespace {

constexpr int kMinDimension = 8;

void check_dimensions(int w, int h, const std::string& path) {
  if (w < kMinDimension || h < kMinDimension)
    throw std::runtime_error("image too small (minimum " + std::to_string(kMinDimension) +
                             "x" + std::to_string(kMinDimension) + "): " + path);
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

ImageBuffer load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("corrupt PNG: " + path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (bit_depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported format (16-bit PNG): " + path);
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);

  const bool had_alpha = (color_type & PNG_COLOR_MASK_ALPHA) != 0 ||
                         png_get_valid(png, info, PNG_INFO_tRNS);
  if (had_alpha) {
    std::fprintf(stderr, "warning: dropping alpha channel of %s\n", path.c_str());
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  row_ptrs.resize(h);
  for (png_uint_32 r = 0; r < h; ++r)
    row_ptrs[r] = raw.data() + static_cast<std::size_t>(r) * w * 3;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  check_dimensions(static_cast<int>(w), static_cast<int>(h), path);

  ImageBuffer img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.data.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0f;
  return img;
}

int read_pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments.
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  in >> value;
  return in ? value : -1;
}

ImageBuffer load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6')
    throw std::runtime_error("unsupported format (expected P6 PPM): " + path);
  const int w = read_pnm_token(in);
  const int h = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  if (w <= 0 || h <= 0) throw std::runtime_error("corrupt PPM header: " + path);
  if (maxval != 255) throw std::runtime_error("unsupported format (PPM maxval != 255): " + path);
  in.get();  // single whitespace before the raster

  check_dimensions(w, h, path);

  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw std::runtime_error("truncated PPM raster: " + path);

  ImageBuffer img;
  img.width = w;
  img.height = h;
  img.data.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0f;
  return img;
}

unsigned char quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

}  // namespace

ImageBuffer ImageBuffer::solid(int w, int h, float r, float g, float b) {
  ImageBuffer img;
  img.width = w;
  img.height = h;
  img.data.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    img.data[p * 3 + 0] = r;
    img.data[p * 3 + 1] = g;
    img.data[p * 3 + 2] = b;
  }
  return img;
}

ImageBuffer load_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open image: " + path);
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (!png_sig_cmp(sig, 0, 8)) return load_png(path);
  if (sig[0] == 'P' && sig[1] == '6') return load_ppm(path);
  throw std::runtime_error("unsupported format (expected PNG or P6 PPM): " + path);
}

void save_image_png(const ImageBuffer& image, const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write image: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG write failed: " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * 3);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c)
      for (int ch = 0; ch < 3; ++ch) row[c * 3 + ch] = quantize(image.at(c, r, ch));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void save_image_ppm(const ImageBuffer& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.data.size());
  for (std::size_t i = 0; i < image.data.size(); ++i) raw[i] = quantize(image.data[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

ImageBuffer upsample_nearest(const ImageBuffer& image, int min_side) {
  if (image.width >= min_side && image.height >= min_side) return image;
  const int fw = (min_side + image.width - 1) / image.width;
  const int fh = (min_side + image.height - 1) / image.height;
  const int f = std::max(fw, fh);
  ImageBuffer out;
  out.width = image.width * f;
  out.height = image.height * f;
  out.data.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(c, r, ch) = image.at(c / f, r / f, ch);
  return out;
}

}  // namespace hashfield
