#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace histex {

/// 8-bit RGB raster stored row-major with interleaved channels.
/// Channel intensities are exposed as reals in [0,1] through value().
class Raster {
 public:
  static constexpr int kChannels = 3;

  Raster() = default;
  Raster(int height, int width) : height_(height), width_(width), data_(static_cast<size_t>(height) * width * kChannels, 0) {}

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return data_.empty(); }

  std::uint8_t& at(int y, int x, int c) { return data_[offset(y, x, c)]; }
  std::uint8_t at(int y, int x, int c) const { return data_[offset(y, x, c)]; }
  double value(int y, int x, int c) const { return data_[offset(y, x, c)] / 255.0; }

  std::vector<std::uint8_t>& bytes() noexcept { return data_; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return data_; }

  bool operator==(const Raster&) const = default;

 private:
  size_t offset(int y, int x, int c) const {
    return (static_cast<size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Reads any 8/16-bit PNG and converts it to 8-bit RGB. Throws ParseError.
Raster read_png(const std::filesystem::path& path);
/// Writes 8-bit RGB PNG. Throws IoError.
void write_png(const Raster& image, const std::filesystem::path& path, int compression_level = 1);

}  // namespace histex
