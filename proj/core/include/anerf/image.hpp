#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anerf/tensor.hpp"

namespace anerf {

/// Row-major H x W x C image with values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int r, int col, int ch) { return data[(static_cast<std::size_t>(r) * width + col) * channels + ch]; }
  double at(int r, int col, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + col) * channels + ch];
  }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }

  Tensor to_tensor() const;  // [H,W,C]
  static Image from_tensor(const Tensor& t);
};

/// 8-bit PNG (gray for one channel, RGB for three). Values are clamped to
/// [0,1] and rounded. The file is written to a temporary name and renamed.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Writes `text` to a temporary file next to `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

}  // namespace anerf
