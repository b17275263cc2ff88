#include "clipforge/image.hpp"

#include <algorithm>
#include <cmath>

#include "clipforge/error.hpp"

namespace clipforge {

bool PreprocessSpec::is_identity() const {
  for (int c = 0; c < 3; ++c) {
    if (shift[std::size_t(c)] != 0.0 || scale[std::size_t(c)] != 1.0) return false;
  }
  return true;
}

ImageTensor::ImageTensor(int height, int width)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(height) * width * channels, 0.0) {
  if (height <= 0 || width <= 0) fail_invalid("image dimensions must be positive");
}

ImageTensor::ImageTensor(int height, int width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (height <= 0 || width <= 0) fail_invalid("image dimensions must be positive");
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    fail_invalid("image data size does not match height*width*3");
  }
}

bool ImageTensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

ImageTensor grayscale(const ImageTensor& x, const PreprocessSpec& pp) {
  if (x.height() <= 0 || x.width() <= 0) fail_invalid("grayscale: empty image");
  const bool identity = pp.is_identity();
  ImageTensor out(x.height(), x.width());
  for (int y = 0; y < x.height(); ++y) {
    for (int px = 0; px < x.width(); ++px) {
      double r = x.at(y, px, 0);
      double g = x.at(y, px, 1);
      double b = x.at(y, px, 2);
      if (!identity) {
        r = pp.to_raw(r, 0);
        g = pp.to_raw(g, 1);
        b = pp.to_raw(b, 2);
      }
      // Delta form of 0.299 r + 0.587 g + 0.114 b: equal channels reproduce
      // themselves bit-for-bit (the plain weighted sum would not, since the
      // weights do not sum to 1.0 in binary floating point).
      const double luma = b + 0.299 * (r - b) + 0.587 * (g - b);
      for (int c = 0; c < 3; ++c) {
        out.at(y, px, c) = identity ? luma : pp.to_model(luma, c);
      }
    }
  }
  return out;
}

ImageTensor preprocess(const RawImage& raw, int target_resolution, const PreprocessSpec& pp) {
  if (raw.height <= 0 || raw.width <= 0 ||
      raw.rgb.size() != static_cast<std::size_t>(raw.height) * raw.width * 3) {
    fail_invalid("preprocess: malformed raw image");
  }
  if (target_resolution <= 0) fail_invalid("preprocess: target resolution must be positive");

  const int th = target_resolution;
  const int tw = target_resolution;
  ImageTensor out(th, tw);

  const double sy = static_cast<double>(raw.height) / th;
  const double sx = static_cast<double>(raw.width) / tw;
  for (int y = 0; y < th; ++y) {
    // Pixel-center alignment; an identity resize maps every sample exactly
    // onto a source pixel.
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, raw.height - 1);
    const int y1 = std::min(y0 + 1, raw.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < tw; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, raw.width - 1);
      const int x1 = std::min(x0 + 1, raw.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        auto px = [&](int yy, int xx) {
          return static_cast<double>(
                     raw.rgb[(static_cast<std::size_t>(yy) * raw.width + xx) * 3 + c]) /
                 255.0;
        };
        const double top = px(y0, x0) * (1.0 - wx) + px(y0, x1) * wx;
        const double bot = px(y1, x0) * (1.0 - wx) + px(y1, x1) * wx;
        const double v = top * (1.0 - wy) + bot * wy;
        out.at(y, x, c) = pp.to_model(v, c);
      }
    }
  }
  return out;
}

RawImage to_raw_8bit(const ImageTensor& x, const PreprocessSpec& pp) {
  RawImage out;
  out.height = x.height();
  out.width = x.width();
  out.rgb.resize(x.size());
  std::size_t i = 0;
  for (int y = 0; y < x.height(); ++y) {
    for (int px = 0; px < x.width(); ++px) {
      for (int c = 0; c < 3; ++c) {
        const double raw = std::clamp(pp.to_raw(x.at(y, px, c), c), 0.0, 1.0);
        out.rgb[i++] = static_cast<unsigned char>(std::lround(raw * 255.0));
      }
    }
  }
  return out;
}

ImageTensor noise_image(int height, int width, double lo, double hi, Rng& rng) {
  if (!(lo <= hi)) fail_invalid("noise_image: lo must not exceed hi");
  ImageTensor out(height, width);
  for (double& v : out.data()) v = rng.uniform(lo, hi);
  return out;
}

}  // namespace clipforge
