#pragma once

#include <vector>

#include "clipforge/backend.hpp"
#include "clipforge/embedding.hpp"
#include "clipforge/image.hpp"

namespace clipforge {

struct LossWeights {
  double alpha = 1.0;  // weight on the score-variance term
  double beta = 10.0;  // weight on the pixel-guard term
  void validate() const;
};

struct Bounds {
  double lower = 0.0;
  double upper = 1.0;
  void validate() const;
};

struct LossBreakdown {
  double align = 0.0;
  double var = 0.0;
  double pixel = 0.0;
  double total = 0.0;  // always align + alpha*var + beta*pixel, same arithmetic path
  std::vector<double> per_prompt_sims;

  bool finite() const;
};

// Cosine similarity of a raw image embedding against each unit text embedding.
std::vector<double> prompt_similarities(const Embedding& g, const std::vector<UnitEmbedding>& texts);

// Negative mean cosine similarity across prompts.
double alignment_loss(const Embedding& g, const std::vector<Embedding>& text_embs);
double alignment_loss_from_sims(const std::vector<double>& sims);

// Population variance (divide by N). Computed in shifted, centered form so it
// is exactly zero for a constant list and never negative.
double variance_loss(const std::vector<double>& sims);

// Mean over all H*W*3 components of relu(x - upper) + relu(lower - x).
double pixel_guard_loss(const ImageTensor& x, const Bounds& b);

LossBreakdown total_loss(const Embedding& g, const std::vector<UnitEmbedding>& texts,
                         const ImageTensor& x, const Bounds& b, const LossWeights& w);

// Gradient of the alignment loss on the unit sphere: -f_bar + <g_hat,f_bar> g_hat,
// where f_bar is the mean of the unit text embeddings. Lies in the tangent
// space (orthogonal to g_hat).
std::vector<double> alignment_grad_tangent(const UnitEmbedding& g_hat,
                                           const std::vector<double>& f_bar);

// (2/N) * sum_i (s_i - s_bar) * grad(s_i), with index-aligned inputs.
std::vector<double> variance_grad(const std::vector<double>& sims,
                                  const std::vector<std::vector<double>>& sim_grads);

// Sparse mask gradient of the pixel-guard term: per component,
// (+1 if x > upper, -1 if x < lower, 0 otherwise) / total_components.
// Strict inequalities: a component exactly at a bound gets subgradient 0, so
// in-bounds images have an exactly zero field.
ImageTensor pixel_guard_grad(const ImageTensor& x, const Bounds& b);

std::vector<double> mean_unit_embedding(const std::vector<UnitEmbedding>& texts);

// Full analytic pixel gradient of total_loss through the backend's
// vector-Jacobian product; optionally reports the breakdown evaluated at x.
ImageTensor loss_pixel_gradient(const EncoderBackend& backend, const ImageTensor& x,
                                const std::vector<UnitEmbedding>& texts, const Bounds& b,
                                const LossWeights& w, LossBreakdown* breakdown_out = nullptr);

}  // namespace clipforge
