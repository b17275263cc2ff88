#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace clipforge {

// Raw encoder output.
struct Embedding {
  std::vector<double> v;

  Embedding() = default;
  explicit Embedding(std::vector<double> values) : v(std::move(values)) {}
  std::size_t dim() const { return v.size(); }
};

// L2-normalized embedding; produced by normalize().
struct UnitEmbedding {
  std::vector<double> v;
  std::size_t dim() const { return v.size(); }
};

// Norms below this are treated as degenerate rather than silently zeroed.
inline constexpr double kNormFloor = 1e-12;

double l2_norm(const std::vector<double>& v);
double dot(const std::vector<double>& a, const std::vector<double>& b);

// Throws ErrorCode::numeric when the norm is at or below kNormFloor.
UnitEmbedding normalize(const Embedding& e);

// Cosine similarity of two unit embeddings, clamped to [-1, 1] against
// floating-point overshoot. Symmetric in its arguments.
double clip_score(const UnitEmbedding& g_hat, const UnitEmbedding& f_hat);

// Surrounding whitespace only; no case folding (contrastive text encoders are
// case-sensitive).
std::string trim_prompt(std::string_view s);

// Ordered list of trimmed, nonempty, unique prompt strings. Order is stable:
// per-prompt similarity vectors are index-aligned with it everywhere.
class PromptSet {
 public:
  static PromptSet from_strings(const std::vector<std::string>& raw);
  // UTF-8, one prompt per line, '#' starts a comment line, blank lines skipped.
  static PromptSet from_file(const std::string& path);

  std::size_t size() const { return prompts_.size(); }
  const std::string& operator[](std::size_t i) const { return prompts_[i]; }
  const std::vector<std::string>& items() const { return prompts_; }

 private:
  std::vector<std::string> prompts_;
};

}  // namespace clipforge
