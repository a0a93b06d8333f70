#include "lensnvs/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lensnvs::img {
namespace {

static_assert(std::endian::native == std::endian::little, "PFM I/O assumes a little-endian host");

std::runtime_error io_error(const std::filesystem::path& path, const std::string& what) {
  return std::runtime_error(path.string() + ": " + what);
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

double srgb_to_linear(double encoded) {
  return encoded <= 0.04045 ? encoded / 12.92 : std::pow((encoded + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double linear) {
  return linear <= 0.0031308 ? linear * 12.92 : 1.055 * std::pow(linear, 1.0 / 2.4) - 0.055;
}

Image quantize_float32(const Image& image) {
  Image out = image;
  for (double& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(path, "cannot open");
  std::string magic;
  int width = 0;
  int height = 0;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  if (!in || (magic != "PF" && magic != "Pf")) throw io_error(path, "not a PFM file");
  if (width <= 0 || height <= 0) throw io_error(path, "invalid PFM dimensions");
  if (scale >= 0.0) throw io_error(path, "big-endian PFM not supported");
  in.get();  // single whitespace byte after the scale
  const int channels = magic == "PF" ? 3 : 1;
  const std::size_t row_len = static_cast<std::size_t>(width) * channels;
  std::vector<float> row(row_len);
  Image out(height, width, channels);
  for (int y = height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row_len * sizeof(float)));
    if (!in) throw io_error(path, "truncated PFM data");
    for (std::size_t i = 0; i < row_len; ++i) {
      out.data()[static_cast<std::size_t>(y) * row_len + i] = row[i];
    }
  }
  require_finite(out, path.string().c_str());
  return out;
}

void write_pfm(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw std::invalid_argument("write_pfm: PFM supports 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error(path, "cannot open for writing");
  out << (image.channels() == 3 ? "PF" : "Pf") << '\n'
      << image.width() << ' ' << image.height() << '\n'
      << "-1.0\n";
  const std::size_t row_len = static_cast<std::size_t>(image.width()) * image.channels();
  std::vector<float> row(row_len);
  for (int y = image.height() - 1; y >= 0; --y) {
    for (std::size_t i = 0; i < row_len; ++i) {
      row[i] = static_cast<float>(image.data()[static_cast<std::size_t>(y) * row_len + i]);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row_len * sizeof(float)));
  }
  if (!out) throw io_error(path, "write failed");
}

Image read_png(const std::filesystem::path& path, Transfer transfer) {
  File file(std::fopen(path.c_str(), "rb"));
  if (!file) throw io_error(path, "cannot open");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw io_error(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw io_error(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error(path, "malformed PNG");
  }
  png_init_io(png, file.get());
  png_read_png(png, info, PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA, nullptr);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  const int channels = (color & PNG_COLOR_MASK_COLOR) ? 3 : 1;
  png_bytepp rows = png_get_rows(png, info);

  Image out(height, width, channels);
  const double max_code = depth == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < height; ++y) {
    const png_bytep row = rows[y];
    for (int i = 0; i < width * channels; ++i) {
      const unsigned code = depth == 16 ? (static_cast<unsigned>(row[2 * i]) << 8) | row[2 * i + 1]
                                        : row[i];
      out.data()[static_cast<std::size_t>(y) * width * channels + i] =
          transfer == Transfer::kSrgb ? srgb_to_linear(code / max_code) : code / max_code;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image, int bit_depth, Transfer transfer) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");
  if (image.channels() != 1 && image.channels() != 3) {
    throw std::invalid_argument("write_png: PNG output supports 1 or 3 channels");
  }
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw io_error(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw io_error(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw io_error(path, "png_create_info_struct failed");
  }
  const int width = image.width();
  const int channels = image.channels();
  const int bytes = bit_depth / 8;
  const double max_code = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<png_byte> buffer(static_cast<std::size_t>(image.height()) * width * channels * bytes);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image.data()[i], 0.0, 1.0);
    const auto code = static_cast<unsigned>(std::lround((transfer == Transfer::kSrgb ? linear_to_srgb(v) : v) * max_code));
    if (bit_depth == 16) {
      buffer[2 * i] = static_cast<png_byte>(code >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(code & 0xff);
    } else {
      buffer[i] = static_cast<png_byte>(code);
    }
  }
  std::vector<png_bytep> rows(image.height());
  for (int y = 0; y < image.height(); ++y) {
    rows[y] = buffer.data() + static_cast<std::size_t>(y) * width * channels * bytes;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error(path, "PNG encode failed");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, image.height(), bit_depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_sRGB(png, info, PNG_sRGB_INTENT_PERCEPTUAL);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_image(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".pfm") return read_pfm(path);
  if (ext == ".png") return read_png(path);
  throw io_error(path, "unsupported image extension (expected .png or .pfm)");
}

void write_image(const std::filesystem::path& path, const Image& image, int png_bit_depth) {
  const auto ext = lower_extension(path);
  if (ext == ".pfm") return write_pfm(path, image);
  if (ext == ".png") return write_png(path, image, png_bit_depth);
  throw io_error(path, "unsupported image extension (expected .png or .pfm)");
}

}  // namespace lensnvs::img
