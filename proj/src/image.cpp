#include "lensnvs/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace lensnvs::img {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 1) {
    throw std::invalid_argument("Image: invalid dimensions");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 0 || width < 0 || channels < 1) {
    throw std::invalid_argument("Image: invalid dimensions");
  }
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw std::invalid_argument("Image: data length does not match height*width*channels");
  }
}

Image Image::channel(int c) const {
  if (c < 0 || c >= channels_) throw std::out_of_range("Image::channel: bad channel index");
  Image out(height_, width_, 1);
  for (std::size_t p = 0; p < pixel_count(); ++p) out.data_[p] = data_[p * channels_ + c];
  return out;
}

void Image::set_channel(int c, const Image& plane) {
  if (c < 0 || c >= channels_) throw std::out_of_range("Image::set_channel: bad channel index");
  if (plane.height_ != height_ || plane.width_ != width_ || plane.channels_ != 1) {
    throw std::invalid_argument("Image::set_channel: plane shape mismatch");
  }
  for (std::size_t p = 0; p < pixel_count(); ++p) data_[p * channels_ + c] = plane.data_[p];
}

double Image::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Image::max() const {
  return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

double Image::min() const {
  return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

bool Image::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Image to_grayscale(const Image& image) {
  if (image.channels() != 3) {
    throw std::invalid_argument("to_grayscale: expected 3 channels, got " +
                                std::to_string(image.channels()));
  }
  Image out(image.height(), image.width(), 1);
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < out.size(); ++p) {
    dst[p] = 0.299 * src[3 * p] + 0.587 * src[3 * p + 1] + 0.114 * src[3 * p + 2];
  }
  return out;
}

Image broadcast_channels(const Image& image, int channels) {
  if (image.channels() != 1) throw std::invalid_argument("broadcast_channels: expected 1 channel");
  Image out(image.height(), image.width(), channels);
  for (int c = 0; c < channels; ++c) out.set_channel(c, image);
  return out;
}

void require_finite(const Image& image, const char* what) {
  if (!image.all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite values");
}

}  // namespace lensnvs::img
