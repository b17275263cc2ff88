#include "clipforge/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "clipforge/error.hpp"

namespace clipforge {

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

UnitEmbedding normalize(const Embedding& e) {
  if (e.dim() == 0) fail_invalid("normalize: empty embedding");
  const double n = l2_norm(e.v);
  if (!std::isfinite(n)) fail(ErrorCode::numeric, "normalize: non-finite embedding");
  if (n <= kNormFloor) fail(ErrorCode::numeric, "normalize: degenerate embedding (norm below floor)");
  UnitEmbedding out;
  out.v.resize(e.v.size());
  for (std::size_t i = 0; i < e.v.size(); ++i) out.v[i] = e.v[i] / n;
  return out;
}

double clip_score(const UnitEmbedding& g_hat, const UnitEmbedding& f_hat) {
  if (g_hat.dim() == 0 || g_hat.dim() != f_hat.dim()) {
    fail_invalid("clip_score: embedding dimensions differ");
  }
  return std::clamp(dot(g_hat.v, f_hat.v), -1.0, 1.0);
}

std::string trim_prompt(std::string_view s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

PromptSet PromptSet::from_strings(const std::vector<std::string>& raw) {
  PromptSet set;
  std::unordered_set<std::string> seen;
  for (const auto& r : raw) {
    std::string p = trim_prompt(r);
    if (p.empty()) fail_invalid("prompt set: empty prompt");
    if (!seen.insert(p).second) fail_invalid("prompt set: duplicate prompt '" + p + "'");
    set.prompts_.push_back(std::move(p));
  }
  if (set.prompts_.empty()) fail_invalid("prompt set: needs at least one prompt");
  return set;
}

PromptSet PromptSet::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open prompt file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim_prompt(line);
    if (t.empty() || t[0] == '#') continue;
    lines.push_back(t);
  }
  if (lines.empty()) fail_invalid("prompt file has no prompts: " + path);
  return from_strings(lines);
}

}  // namespace clipforge
