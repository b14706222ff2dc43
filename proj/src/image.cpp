#include "fedstain/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fedstain/error.hpp"

namespace fedstain {

std::string_view to_string(ColorSpace cs) {
  return cs == ColorSpace::LAB ? "LAB" : "RGB";
}

ColorSpace parse_color_space(std::string_view s) {
  if (s == "LAB" || s == "lab") return ColorSpace::LAB;
  if (s == "RGB" || s == "rgb") return ColorSpace::RGB;
  throw InvalidArgument("unknown color space '" + std::string(s) + "'");
}

ImageTensor::ImageTensor(std::size_t channels, std::size_t height, std::size_t width,
                         ColorSpace cs, double fill)
    : ImageTensor(channels, height, width, cs,
                  std::vector<double>(channels * height * width, fill)) {}

ImageTensor::ImageTensor(std::size_t channels, std::size_t height, std::size_t width,
                         ColorSpace cs, std::vector<double> data)
    : channels_(channels), height_(height), width_(width), color_space_(cs),
      data_(std::move(data)) {
  if (channels != 1 && channels != 3)
    throw ShapeMismatch("image must have 1 or 3 channels");
  if (height == 0 || width == 0) throw ShapeMismatch("image must be nonempty");
  if (data_.size() != channels * height * width)
    throw ShapeMismatch("image data length does not match C*H*W");
}

bool ImageTensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

namespace {

constexpr double kWhite[3] = {0.95047, 1.0, 1.08883};
constexpr double kDelta = 6.0 / 29.0;

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t)
                                      : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double t) {
  return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

void require_three_channels(const ImageTensor& image) {
  if (image.channels() != 3)
    throw ShapeMismatch("color conversion requires a 3-channel image");
}

}  // namespace

ImageTensor rgb_to_lab(const ImageTensor& rgb) {
  require_three_channels(rgb);
  ImageTensor out(3, rgb.height(), rgb.width(), ColorSpace::LAB);
  const std::size_t n = rgb.pixels_per_channel();
  auto r = rgb.channel(0), g = rgb.channel(1), b = rgb.channel(2);
  auto L = out.channel(0), A = out.channel(1), B = out.channel(2);
  for (std::size_t i = 0; i < n; ++i) {
    const double lr = srgb_to_linear(r[i]);
    const double lg = srgb_to_linear(g[i]);
    const double lb = srgb_to_linear(b[i]);
    const double x = (0.4124564 * lr + 0.3575761 * lg + 0.1804375 * lb) / kWhite[0];
    const double y = (0.2126729 * lr + 0.7151522 * lg + 0.0721750 * lb) / kWhite[1];
    const double z = (0.0193339 * lr + 0.1191920 * lg + 0.9503041 * lb) / kWhite[2];
    const double fx = lab_f(x), fy = lab_f(y), fz = lab_f(z);
    L[i] = 116.0 * fy - 16.0;
    A[i] = 500.0 * (fx - fy);
    B[i] = 200.0 * (fy - fz);
  }
  return out;
}

ImageTensor lab_to_rgb(const ImageTensor& lab) {
  require_three_channels(lab);
  ImageTensor out(3, lab.height(), lab.width(), ColorSpace::RGB);
  const std::size_t n = lab.pixels_per_channel();
  auto L = lab.channel(0), A = lab.channel(1), B = lab.channel(2);
  auto r = out.channel(0), g = out.channel(1), b = out.channel(2);
  for (std::size_t i = 0; i < n; ++i) {
    const double fy = (L[i] + 16.0) / 116.0;
    const double fx = fy + A[i] / 500.0;
    const double fz = fy - B[i] / 200.0;
    const double x = kWhite[0] * lab_f_inv(fx);
    const double y = kWhite[1] * lab_f_inv(fy);
    const double z = kWhite[2] * lab_f_inv(fz);
    const double lr = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    const double lg = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    const double lb = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    r[i] = std::clamp(linear_to_srgb(lr), 0.0, 1.0);
    g[i] = std::clamp(linear_to_srgb(lg), 0.0, 1.0);
    b[i] = std::clamp(linear_to_srgb(lb), 0.0, 1.0);
  }
  return out;
}

ImageTensor to_color_space(const ImageTensor& image, ColorSpace target) {
  if (image.color_space() == target) return image;
  return target == ColorSpace::LAB ? rgb_to_lab(image) : lab_to_rgb(image);
}

std::vector<unsigned char> encode_ppm(const ImageTensor& image) {
  const ImageTensor rgb = to_color_space(image, ColorSpace::RGB);
  if (rgb.channels() != 3) throw ShapeMismatch("PPM output requires 3 channels");
  std::ostringstream header;
  header << "P6\n" << rgb.width() << ' ' << rgb.height() << "\n255\n";
  const std::string h = header.str();
  std::vector<unsigned char> bytes(h.begin(), h.end());
  bytes.reserve(h.size() + rgb.size());
  for (std::size_t y = 0; y < rgb.height(); ++y)
    for (std::size_t x = 0; x < rgb.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(rgb.at(c, y, x), 0.0, 1.0);
        bytes.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  return bytes;
}

ImageTensor decode_ppm(std::span<const unsigned char> bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    std::string tok;
    while (pos < bytes.size()) {
      const char c = static_cast<char>(bytes[pos]);
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        ++pos;
      } else {
        tok.push_back(c);
        ++pos;
      }
    }
    return tok;
  };
  if (next_token() != "P6") throw FormatError("not a binary PPM (P6) image");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw FormatError("malformed PPM header");
  }
  if (maxval != 255) throw FormatError("only 8-bit PPM images are supported");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + w * h * 3) throw FormatError("truncated PPM payload");
  ImageTensor img(3, h, w, ColorSpace::RGB);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = bytes[pos++] / 255.0;
  return img;
}

void write_ppm(const std::filesystem::path& path, const ImageTensor& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

}  // namespace fedstain
