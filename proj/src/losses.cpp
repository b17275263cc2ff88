#include "clipforge/losses.hpp"

#include <cmath>

#include "clipforge/error.hpp"

namespace clipforge {

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail_invalid("loss weights: alpha must be finite and >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail_invalid("loss weights: beta must be finite and >= 0");
}

void Bounds::validate() const {
  if (!std::isfinite(lower) || !std::isfinite(upper)) fail_invalid("bounds must be finite");
  if (!(lower <= upper)) fail_invalid("bounds: lower must not exceed upper");
}

bool LossBreakdown::finite() const {
  return std::isfinite(align) && std::isfinite(var) && std::isfinite(pixel) && std::isfinite(total);
}

std::vector<double> prompt_similarities(const Embedding& g, const std::vector<UnitEmbedding>& texts) {
  if (texts.empty()) fail_invalid("prompt_similarities: needs at least one prompt embedding");
  const UnitEmbedding g_hat = normalize(g);
  std::vector<double> sims;
  sims.reserve(texts.size());
  for (const auto& f_hat : texts) sims.push_back(clip_score(g_hat, f_hat));
  return sims;
}

double alignment_loss_from_sims(const std::vector<double>& sims) {
  if (sims.empty()) fail_invalid("alignment loss: empty similarity list");
  double s = 0.0;
  for (double v : sims) s += v;
  return -s / static_cast<double>(sims.size());
}

double alignment_loss(const Embedding& g, const std::vector<Embedding>& text_embs) {
  if (text_embs.empty()) fail_invalid("alignment loss: needs at least one prompt embedding");
  std::vector<UnitEmbedding> texts;
  texts.reserve(text_embs.size());
  for (const auto& e : text_embs) texts.push_back(normalize(e));
  return alignment_loss_from_sims(prompt_similarities(g, texts));
}

double variance_loss(const std::vector<double>& sims) {
  if (sims.empty()) fail_invalid("variance loss: empty similarity list");
  const std::size_t n = sims.size();
  // Shift by the first element before centering: a constant list becomes all
  // zeros, so the result is exactly 0 rather than accumulated rounding noise.
  const double shift = sims[0];
  double mean = 0.0;
  for (double v : sims) mean += v - shift;
  mean /= static_cast<double>(n);
  double acc = 0.0;
  for (double v : sims) {
    const double d = (v - shift) - mean;
    acc += d * d;
  }
  return acc / static_cast<double>(n);
}

double pixel_guard_loss(const ImageTensor& x, const Bounds& b) {
  b.validate();
  if (x.size() == 0) fail_invalid("pixel guard loss: empty image");
  double acc = 0.0;
  for (double v : x.data()) {
    if (v > b.upper) acc += v - b.upper;
    if (v < b.lower) acc += b.lower - v;
  }
  return acc / static_cast<double>(x.size());
}

LossBreakdown total_loss(const Embedding& g, const std::vector<UnitEmbedding>& texts,
                         const ImageTensor& x, const Bounds& b, const LossWeights& w) {
  w.validate();
  LossBreakdown out;
  out.per_prompt_sims = prompt_similarities(g, texts);
  out.align = alignment_loss_from_sims(out.per_prompt_sims);
  out.var = variance_loss(out.per_prompt_sims);
  out.pixel = pixel_guard_loss(x, b);
  out.total = out.align + w.alpha * out.var + w.beta * out.pixel;
  return out;
}

std::vector<double> alignment_grad_tangent(const UnitEmbedding& g_hat,
                                           const std::vector<double>& f_bar) {
  if (g_hat.dim() != f_bar.size()) fail_invalid("alignment_grad_tangent: dimension mismatch");
  const double gf = dot(g_hat.v, f_bar);
  std::vector<double> grad(f_bar.size());
  for (std::size_t i = 0; i < f_bar.size(); ++i) grad[i] = -f_bar[i] + gf * g_hat.v[i];
  return grad;
}

std::vector<double> variance_grad(const std::vector<double>& sims,
                                  const std::vector<std::vector<double>>& sim_grads) {
  if (sims.empty()) fail_invalid("variance_grad: empty similarity list");
  if (sims.size() != sim_grads.size()) fail_invalid("variance_grad: sims/grads length mismatch");
  const std::size_t n = sims.size();
  const std::size_t dim = sim_grads[0].size();
  double mean = 0.0;
  for (double v : sims) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> grad(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (sim_grads[i].size() != dim) fail_invalid("variance_grad: ragged gradient list");
    const double c = 2.0 / static_cast<double>(n) * (sims[i] - mean);
    for (std::size_t k = 0; k < dim; ++k) grad[k] += c * sim_grads[i][k];
  }
  return grad;
}

ImageTensor pixel_guard_grad(const ImageTensor& x, const Bounds& b) {
  b.validate();
  if (x.size() == 0) fail_invalid("pixel guard grad: empty image");
  const double inv = 1.0 / static_cast<double>(x.size());
  ImageTensor grad(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    if (v > b.upper) {
      grad.data()[i] = inv;
    } else if (v < b.lower) {
      grad.data()[i] = -inv;
    }
  }
  return grad;
}

std::vector<double> mean_unit_embedding(const std::vector<UnitEmbedding>& texts) {
  if (texts.empty()) fail_invalid("mean_unit_embedding: empty list");
  std::vector<double> f_bar(texts[0].dim(), 0.0);
  for (const auto& t : texts) {
    if (t.dim() != f_bar.size()) fail_invalid("mean_unit_embedding: dimension mismatch");
    for (std::size_t i = 0; i < f_bar.size(); ++i) f_bar[i] += t.v[i];
  }
  for (double& v : f_bar) v /= static_cast<double>(texts.size());
  return f_bar;
}

ImageTensor loss_pixel_gradient(const EncoderBackend& backend, const ImageTensor& x,
                                const std::vector<UnitEmbedding>& texts, const Bounds& b,
                                const LossWeights& w, LossBreakdown* breakdown_out) {
  w.validate();
  b.validate();
  if (texts.empty()) fail_invalid("loss_pixel_gradient: needs at least one prompt embedding");

  const Embedding g = backend.encode_image(x);
  const double norm = l2_norm(g.v);
  const UnitEmbedding g_hat = normalize(g);
  const std::size_t n = texts.size();

  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) sims[i] = clip_score(g_hat, texts[i]);
  double s_bar = 0.0;
  for (double s : sims) s_bar += s;
  s_bar /= static_cast<double>(n);

  // dL/ds_i combines the alignment mean and the variance expansion; then
  // ds_i/dg = (f_i - s_i g_hat) / |g| maps it back to the raw embedding.
  std::vector<double> cotangent(g.dim(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double dl_dsi = -1.0 / static_cast<double>(n) +
                          w.alpha * 2.0 / static_cast<double>(n) * (sims[i] - s_bar);
    for (std::size_t k = 0; k < g.dim(); ++k) {
      cotangent[k] += dl_dsi * (texts[i].v[k] - sims[i] * g_hat.v[k]) / norm;
    }
  }

  ImageTensor grad = backend.image_gradient(x, cotangent);
  if (w.beta != 0.0) {
    const ImageTensor pg = pixel_guard_grad(x, b);
    for (std::size_t i = 0; i < grad.size(); ++i) grad.data()[i] += w.beta * pg.data()[i];
  }

  if (breakdown_out) {
    LossBreakdown bd;
    bd.per_prompt_sims = sims;
    bd.align = alignment_loss_from_sims(sims);
    bd.var = variance_loss(sims);
    bd.pixel = pixel_guard_loss(x, b);
    bd.total = bd.align + w.alpha * bd.var + w.beta * bd.pixel;
    *breakdown_out = std::move(bd);
  }
  return grad;
}

}  // namespace clipforge
