#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "clipforge/rng.hpp"

namespace clipforge {

// Per-channel affine map between raw [0,1] pixels and model pixel space:
//   model = (raw - shift[c]) / scale[c]
struct PreprocessSpec {
  std::array<double, 3> shift{0.0, 0.0, 0.0};
  std::array<double, 3> scale{1.0, 1.0, 1.0};

  bool is_identity() const;
  double to_model(double raw, int c) const { return (raw - shift[std::size_t(c)]) / scale[std::size_t(c)]; }
  double to_raw(double model, int c) const { return model * scale[std::size_t(c)] + shift[std::size_t(c)]; }
};

// H x W x 3 pixel array in model pixel space, channels interleaved.
// Values are finite but deliberately unclamped: range is enforced only softly
// through the pixel-guard loss, never by projection.
class ImageTensor {
 public:
  static constexpr int channels = 3;

  ImageTensor() = default;
  ImageTensor(int height, int width);  // zero-filled
  ImageTensor(int height, int width, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;
  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// BT.601 luma (0.299 R + 0.587 G + 0.114 B) computed in the raw [0,1] domain,
// replicated across the three channels and mapped back through `pp`. The luma
// is evaluated in a delta form so achromatic images are exact fixed points and
// the op is exactly idempotent under an identity preprocess.
ImageTensor grayscale(const ImageTensor& x, const PreprocessSpec& pp = {});

// 8-bit interleaved RGB.
struct RawImage {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> rgb;
};

RawImage read_png(const std::string& path);
void write_png(const std::string& path, const RawImage& img);

// Bilinear resize to the backend resolution, [0,255] -> [0,1], then the
// per-channel shift/scale of `pp`.
ImageTensor preprocess(const RawImage& raw, int target_resolution, const PreprocessSpec& pp);

// Export path: model -> raw, clamp to [0,1], quantize to 8 bits. The clamp
// exists only here; optimization itself never projects.
RawImage to_raw_8bit(const ImageTensor& x, const PreprocessSpec& pp);

// I.i.d. uniform pixels over [lo, hi].
ImageTensor noise_image(int height, int width, double lo, double hi, Rng& rng);

}  // namespace clipforge
