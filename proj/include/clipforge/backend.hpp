#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "clipforge/embedding.hpp"
#include "clipforge/image.hpp"

namespace clipforge {

// On-disk backend descriptor: {id, dim, resolution, shift[3], scale[3], seed}.
struct BackendDescriptor {
  std::string id = "toy-v1";
  int dim = 32;
  int resolution = 8;
  PreprocessSpec preprocess;
  std::uint64_t seed = 42;

  static BackendDescriptor from_json_text(const std::string& text);
  static BackendDescriptor from_json_file(const std::string& path);
  std::string to_json_text() const;
  void validate() const;
};

// A matched image/text encoder pair. Contract:
//  - encode_* is deterministic given identical inputs,
//  - image_gradient is the exact vector-Jacobian product of encode_image,
//    i.e. d<cotangent, g(x)>/dx, enabling pixel gradients of any scalar
//    function of the image embedding.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;
  virtual Embedding encode_image(const ImageTensor& x) const = 0;
  virtual Embedding encode_text(std::string_view prompt) const = 0;
  virtual ImageTensor image_gradient(const ImageTensor& x,
                                     const std::vector<double>& cotangent) const = 0;

  // Backends that are not safe for concurrent read-only inference return
  // false; callers then serialize.
  virtual bool thread_safe() const { return true; }

  int dim() const { return descriptor().dim; }
  int resolution() const { return descriptor().resolution; }
  const std::string& id() const { return descriptor().id; }

  // Shared preconditions: shape match and finite pixels.
  void check_image(const ImageTensor& x) const;
  void check_prompt(std::string_view prompt) const;
};

// Builds the encoder named by the descriptor. Ids beginning with "toy" are
// built in; anything else needs an external adapter (see the C API's custom
// backend hooks) and is rejected here.
std::unique_ptr<EncoderBackend> make_backend(const BackendDescriptor& desc);
std::unique_ptr<EncoderBackend> load_backend(const std::string& descriptor_path);

// Convenience wrappers used throughout the higher layers.
std::vector<UnitEmbedding> encode_prompts(const EncoderBackend& backend, const PromptSet& prompts);
double image_text_score(const EncoderBackend& backend, const ImageTensor& x,
                        std::string_view prompt);

}  // namespace clipforge
