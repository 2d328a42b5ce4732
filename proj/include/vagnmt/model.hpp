#pragma once

// The full VAG-NMT parameter set and a per-example forward pass that feeds
// both objectives from one shared encoding.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vagnmt/decoder.hpp"
#include "vagnmt/encoder.hpp"
#include "vagnmt/forward.hpp"
#include "vagnmt/grounding.hpp"
#include "vagnmt/random.hpp"

namespace vagnmt {

struct ModelDims {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t embed = 256;
  std::size_t hidden = 512;  // per encoder direction and for the decoder
  std::size_t shared = 512;
  std::size_t visual_attention = 512;
  std::size_t decoder_attention = 512;
  std::size_t output = 256;  // width of the tanh layer before the vocabulary softmax
  std::size_t feature = 2048;

  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

void to_json(nlohmann::json& j, const ModelDims& d);
void from_json(const nlohmann::json& j, ModelDims& d);

struct Ablation {
  bool text_only = false;
  bool no_grounding_attention = false;
  bool no_attention_init = false;

  bool operator==(const Ablation&) const = default;
};

template <typename T>
struct ModelParams {
  ModelDims dims;
  EncoderParams<T> encoder;
  GroundingParams<T> grounding;
  DecoderParams<T> decoder;
};

// Stable names in a fixed order; the handles alias the model's storage.
template <typename T>
std::vector<std::pair<std::string, ad::BasicTensor<T>>> named_parameters(const ModelParams<T>& p);

// Glorot-uniform weight matrices (limit sqrt(6 / (fan_in + fan_out))), zero
// biases. Every tensor is a leaf requiring gradients.
template <typename T>
ModelParams<T> init_params(const ModelDims& dims, Rng& rng);

// Deep copy with fresh storage.
template <typename T>
ModelParams<T> clone_params(const ModelParams<T>& p);

struct Example {
  std::vector<int> source;  // ... EOS
  std::vector<int> target;  // BOS ... EOS
  std::span<const float> image;
};

template <typename T>
struct ExampleForward {
  ad::BasicTensor<T> translation_loss;  // J_T of this sentence
  ad::BasicTensor<T> text_emb;          // undefined under text_only
  ad::BasicTensor<T> image_emb;         // undefined under text_only
  ad::BasicTensor<T> s0;
};

// Grounding switches implied by the ablation flags on top of the base lambda
// and margin.
GroundingSettings grounding_settings(const Ablation& ablation, double lambda, double gamma);

// Encodes the source once, grounds it in the image (skipped under text_only)
// and scores the target with teacher forcing.
template <typename T>
ExampleForward<T> forward_example(ad::BasicGraph<T>& g, const ModelParams<T>& p,
                                  const Example& example, const GroundingSettings& settings,
                                  bool text_only, const ForwardContext& ctx);

// Decoder initial state, encoder states, and shared embeddings for inference.
struct InferenceEncoding {
  ad::Tensor s0;
  ad::Tensor states;
  ad::Tensor text_emb;   // undefined under text_only
  ad::Tensor image_emb;  // undefined under text_only
};

InferenceEncoding encode_for_inference(const ModelParams<float>& p, std::span<const int> source,
                                       std::span<const float> image,
                                       const GroundingSettings& settings, bool text_only);

}  // namespace vagnmt
