#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lensnvs::img {

/// Row-major, channel-interleaved raster of linear-light values.
///
/// Values nominally live in [0, 1] but intermediate results (deconvolved
/// estimates, noisy captures) are allowed to leave that range. Every public
/// operation in this library keeps the data finite.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);
  Image(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  /// Extracts channel `c` as a single-channel image.
  Image channel(int c) const;
  /// Writes single-channel `plane` into channel `c`.
  void set_channel(int c, const Image& plane);

  double sum() const;
  double max() const;
  double min() const;
  bool all_finite() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// BT.601 luma: 0.299 R + 0.587 G + 0.114 B.
Image to_grayscale(const Image& image);

/// Replicates a single-channel image into `channels` identical channels.
Image broadcast_channels(const Image& image, int channels);

/// Throws std::invalid_argument naming `what` if any value is NaN or infinite.
void require_finite(const Image& image, const char* what);

}  // namespace lensnvs::img
