#include "clipforge/backend.hpp"

#include <fstream>
#include <sstream>

#include "clipforge/error.hpp"
#include "json.hpp"

namespace clipforge {

using nlohmann::json;

BackendDescriptor BackendDescriptor::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("backend descriptor is not valid JSON: ") + e.what());
  }
  BackendDescriptor d;
  try {
    d.id = j.at("id").get<std::string>();
    d.dim = j.at("dim").get<int>();
    d.resolution = j.at("resolution").get<int>();
    const auto shift = j.at("shift");
    const auto scale = j.at("scale");
    if (shift.size() != 3 || scale.size() != 3) {
      fail_invalid("backend descriptor: shift/scale must have 3 entries");
    }
    for (int c = 0; c < 3; ++c) {
      d.preprocess.shift[std::size_t(c)] = shift.at(std::size_t(c)).get<double>();
      d.preprocess.scale[std::size_t(c)] = scale.at(std::size_t(c)).get<double>();
    }
    d.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::io, std::string("backend descriptor: missing or mistyped field: ") + e.what());
  }
  d.validate();
  return d;
}

BackendDescriptor BackendDescriptor::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open backend descriptor: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string BackendDescriptor::to_json_text() const {
  json j;
  j["id"] = id;
  j["dim"] = dim;
  j["resolution"] = resolution;
  j["shift"] = preprocess.shift;
  j["scale"] = preprocess.scale;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

void BackendDescriptor::validate() const {
  if (id.empty()) fail_invalid("backend descriptor: empty id");
  if (dim <= 0) fail_invalid("backend descriptor: dim must be positive");
  if (resolution < 3) fail_invalid("backend descriptor: resolution must be at least 3");
  for (int c = 0; c < 3; ++c) {
    if (preprocess.scale[std::size_t(c)] == 0.0) {
      fail_invalid("backend descriptor: scale entries must be nonzero");
    }
  }
}

void EncoderBackend::check_image(const ImageTensor& x) const {
  const auto& d = descriptor();
  if (x.height() != d.resolution || x.width() != d.resolution) {
    fail_invalid("image shape " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                 " does not match backend resolution " + std::to_string(d.resolution));
  }
  if (!x.all_finite()) fail_invalid("image contains non-finite pixels");
}

void EncoderBackend::check_prompt(std::string_view prompt) const {
  if (trim_prompt(prompt).empty()) fail_invalid("empty prompt");
}

std::unique_ptr<EncoderBackend> load_backend(const std::string& descriptor_path) {
  return make_backend(BackendDescriptor::from_json_file(descriptor_path));
}

std::vector<UnitEmbedding> encode_prompts(const EncoderBackend& backend, const PromptSet& prompts) {
  std::vector<UnitEmbedding> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts.items()) {
    out.push_back(normalize(backend.encode_text(p)));
  }
  return out;
}

double image_text_score(const EncoderBackend& backend, const ImageTensor& x,
                        std::string_view prompt) {
  return clip_score(normalize(backend.encode_image(x)), normalize(backend.encode_text(prompt)));
}

}  // namespace clipforge
