#include <cmath>
#include <cstdint>
#include <vector>

#include "clipforge/backend.hpp"
#include "clipforge/error.hpp"
#include "clipforge/rng.hpp"

namespace clipforge {

namespace {

// Small fixed-seed encoder pair for desk-scale verification. Every stage is
// smooth, so pixel gradients exist everywhere and finite differences agree to
// O(eps^2).
//
// Image side: 3x3x3 convolution bank (8 filters, valid padding) -> tanh ->
// global average pooling -> fixed linear projection to `dim`.
// Text side: byte trigrams (STX/ETX sentinels) hashed into 256 bins,
// count-normalized, -> fixed linear projection to `dim`.
class ToyBackend final : public EncoderBackend {
 public:
  static constexpr int kFilters = 8;
  static constexpr int kKernel = 3;
  static constexpr int kTextBins = 256;

  explicit ToyBackend(BackendDescriptor desc) : desc_(std::move(desc)) {
    desc_.validate();
    const int wsize = kFilters * kKernel * kKernel * 3;
    conv_w_.resize(static_cast<std::size_t>(wsize));
    conv_b_.resize(kFilters);
    proj_img_.resize(static_cast<std::size_t>(desc_.dim) * kFilters);
    proj_text_.resize(static_cast<std::size_t>(desc_.dim) * kTextBins);

    Rng wr = make_stream(desc_.seed, "toy-conv-w");
    const double wscale = 1.0 / std::sqrt(27.0);
    for (double& w : conv_w_) w = wr.uniform(-1.0, 1.0) * wscale;

    Rng br = make_stream(desc_.seed, "toy-conv-b");
    for (double& b : conv_b_) b = br.uniform(-0.5, 0.5);

    Rng pr = make_stream(desc_.seed, "toy-img-proj");
    const double pscale = 1.0 / std::sqrt(static_cast<double>(kFilters));
    for (double& p : proj_img_) p = pr.uniform(-1.0, 1.0) * pscale;

    Rng tr = make_stream(desc_.seed, "toy-text-proj");
    const double tscale = 1.0 / 16.0;
    for (double& t : proj_text_) t = tr.uniform(-1.0, 1.0) * tscale;
  }

  const BackendDescriptor& descriptor() const override { return desc_; }

  Embedding encode_image(const ImageTensor& x) const override {
    check_image(x);
    const std::vector<double> pooled = pooled_features(x, nullptr);
    Embedding g;
    g.v.assign(static_cast<std::size_t>(desc_.dim), 0.0);
    for (int d = 0; d < desc_.dim; ++d) {
      double s = 0.0;
      for (int f = 0; f < kFilters; ++f) {
        s += proj_img_[static_cast<std::size_t>(d) * kFilters + f] * pooled[std::size_t(f)];
      }
      g.v[std::size_t(d)] = s;
    }
    return g;
  }

  Embedding encode_text(std::string_view prompt) const override {
    check_prompt(prompt);
    const std::string p = trim_prompt(prompt);
    std::vector<double> hist(kTextBins, 0.0);
    std::vector<unsigned char> bytes;
    bytes.reserve(p.size() + 2);
    bytes.push_back(0x02);  // STX sentinel so one-byte prompts still hash
    for (char c : p) bytes.push_back(static_cast<unsigned char>(c));
    bytes.push_back(0x03);  // ETX sentinel
    std::size_t count = 0;
    for (std::size_t i = 0; i + 2 < bytes.size(); ++i) {
      std::uint64_t h = 0xCBF29CE484222325ull;
      for (std::size_t k = 0; k < 3; ++k) {
        h ^= bytes[i + k];
        h *= 0x100000001B3ull;
      }
      hist[h % kTextBins] += 1.0;
      ++count;
    }
    for (double& v : hist) v /= static_cast<double>(count);

    Embedding e;
    e.v.assign(static_cast<std::size_t>(desc_.dim), 0.0);
    for (int d = 0; d < desc_.dim; ++d) {
      double s = 0.0;
      for (int b = 0; b < kTextBins; ++b) {
        s += proj_text_[static_cast<std::size_t>(d) * kTextBins + b] * hist[std::size_t(b)];
      }
      e.v[std::size_t(d)] = s;
    }
    return e;
  }

  ImageTensor image_gradient(const ImageTensor& x,
                             const std::vector<double>& cotangent) const override {
    check_image(x);
    if (cotangent.size() != static_cast<std::size_t>(desc_.dim)) {
      fail_invalid("image_gradient: cotangent dimension mismatch");
    }
    // Forward pass keeping activations, then reverse through projection,
    // pooling, tanh and the convolution.
    std::vector<double> act;
    pooled_features(x, &act);

    std::vector<double> dh(kFilters, 0.0);
    for (int f = 0; f < kFilters; ++f) {
      double s = 0.0;
      for (int d = 0; d < desc_.dim; ++d) {
        s += proj_img_[static_cast<std::size_t>(d) * kFilters + f] * cotangent[std::size_t(d)];
      }
      dh[std::size_t(f)] = s;
    }

    const int oh = x.height() - kKernel + 1;
    const int ow = x.width() - kKernel + 1;
    const double inv_area = 1.0 / (static_cast<double>(oh) * ow);
    ImageTensor grad(x.height(), x.width());
    for (int f = 0; f < kFilters; ++f) {
      const double df = dh[std::size_t(f)] * inv_area;
      if (df == 0.0) continue;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const double a = act[(static_cast<std::size_t>(f) * oh + i) * ow + j];
          const double dz = df * (1.0 - a * a);
          for (int dy = 0; dy < kKernel; ++dy) {
            for (int dx = 0; dx < kKernel; ++dx) {
              for (int c = 0; c < 3; ++c) {
                grad.at(i + dy, j + dx, c) += dz * weight(f, dy, dx, c);
              }
            }
          }
        }
      }
    }
    return grad;
  }

 private:
  double weight(int f, int dy, int dx, int c) const {
    return conv_w_[((static_cast<std::size_t>(f) * kKernel + dy) * kKernel + dx) * 3 +
                   static_cast<std::size_t>(c)];
  }

  // Returns the 8 pooled features; when `act_out` is non-null it receives the
  // per-position tanh activations laid out [filter][i][j].
  std::vector<double> pooled_features(const ImageTensor& x, std::vector<double>* act_out) const {
    const int oh = x.height() - kKernel + 1;
    const int ow = x.width() - kKernel + 1;
    if (act_out) act_out->assign(static_cast<std::size_t>(kFilters) * oh * ow, 0.0);
    std::vector<double> pooled(kFilters, 0.0);
    for (int f = 0; f < kFilters; ++f) {
      double sum = 0.0;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double z = conv_b_[std::size_t(f)];
          for (int dy = 0; dy < kKernel; ++dy) {
            for (int dx = 0; dx < kKernel; ++dx) {
              for (int c = 0; c < 3; ++c) {
                z += weight(f, dy, dx, c) * x.at(i + dy, j + dx, c);
              }
            }
          }
          const double a = std::tanh(z);
          if (act_out) (*act_out)[(static_cast<std::size_t>(f) * oh + i) * ow + j] = a;
          sum += a;
        }
      }
      pooled[std::size_t(f)] = sum / (static_cast<double>(oh) * ow);
    }
    return pooled;
  }

  BackendDescriptor desc_;
  std::vector<double> conv_w_;
  std::vector<double> conv_b_;
  std::vector<double> proj_img_;
  std::vector<double> proj_text_;
};

}  // namespace

std::unique_ptr<EncoderBackend> make_backend(const BackendDescriptor& desc) {
  desc.validate();
  if (desc.id.rfind("toy", 0) == 0) {
    return std::make_unique<ToyBackend>(desc);
  }
  fail_invalid("backend id '" + desc.id +
               "' has no built-in implementation; plug an external adapter through the C API");
}

}  // namespace clipforge
