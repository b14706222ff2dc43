#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedstain {

enum class ColorSpace { RGB, LAB };

std::string_view to_string(ColorSpace cs);
ColorSpace parse_color_space(std::string_view s);

/// C x H x W array of channel values, channel-major. RGB values are in
/// [0, 1]; LAB uses CIE L* in [0, 100] and a*, b* in their natural units.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(std::size_t channels, std::size_t height, std::size_t width,
              ColorSpace cs = ColorSpace::RGB, double fill = 0.0);
  ImageTensor(std::size_t channels, std::size_t height, std::size_t width,
              ColorSpace cs, std::vector<double> data);

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixels_per_channel() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }
  ColorSpace color_space() const noexcept { return color_space_; }
  void set_color_space(ColorSpace cs) noexcept { color_space_ = cs; }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * height_ + y) * width_ + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height_ + y) * width_ + x];
  }

  std::span<double> channel(std::size_t c) {
    return {data_.data() + c * pixels_per_channel(), pixels_per_channel()};
  }
  std::span<const double> channel(std::size_t c) const {
    return {data_.data() + c * pixels_per_channel(), pixels_per_channel()};
  }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const ImageTensor& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ &&
           width_ == other.width_;
  }
  bool all_finite() const noexcept;

  bool operator==(const ImageTensor& other) const = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  ColorSpace color_space_ = ColorSpace::RGB;
  std::vector<double> data_;
};

// sRGB (D65) <-> CIE LAB. Inputs are not clamped; lab_to_rgb clamps to [0, 1].
ImageTensor rgb_to_lab(const ImageTensor& rgb);
ImageTensor lab_to_rgb(const ImageTensor& lab);
ImageTensor to_color_space(const ImageTensor& image, ColorSpace target);

/// Binary PPM (P6, 8-bit, 3-channel) I/O. Writing converts LAB to RGB first.
void write_ppm(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_ppm(const std::filesystem::path& path);
std::vector<unsigned char> encode_ppm(const ImageTensor& image);
ImageTensor decode_ppm(std::span<const unsigned char> bytes);

}  // namespace fedstain
