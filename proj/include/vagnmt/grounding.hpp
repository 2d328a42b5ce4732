#pragma once

// Visual-text attention, the shared visual-language embedding with its
// pairwise ranking loss, and the grounded decoder initialization.

#include <cstddef>
#include <span>
#include <vector>

#include "vagnmt/encoder.hpp"
#include "vagnmt/tensor.hpp"

namespace vagnmt {

template <typename T>
struct GroundingParams {
  ad::BasicTensor<T> W_v;      // {a, feature}: image side of the attention
  ad::BasicTensor<T> W_h;      // {a, 2h}: text side of the attention
  ad::BasicTensor<T> W_text;   // {shared, 2h}
  ad::BasicTensor<T> b_text;   // {shared}
  ad::BasicTensor<T> W_image;  // {shared, feature}
  ad::BasicTensor<T> b_image;  // {shared}
  ad::BasicTensor<T> W_init;   // {decoder hidden, 2h}
};

struct GroundingSettings {
  double lambda = 0.5;  // weight of the attended vector in the decoder init
  double gamma = 0.1;   // ranking margin
  // When false the shared embedding is built from the mean encoder state
  // instead of the attended vector.
  bool attention_in_embedding = true;

  void validate() const;
};

template <typename T>
struct VisualAttention {
  ad::BasicTensor<T> beta;  // {1, n}
  ad::BasicTensor<T> t;     // {1, 2h}
};

template <typename T>
struct SharedEmbedding {
  ad::BasicTensor<T> text;   // {1, shared}
  ad::BasicTensor<T> image;  // {1, shared}
};

template <typename T>
struct GroundingOutput {
  ad::BasicTensor<T> beta;
  ad::BasicTensor<T> t;
  ad::BasicTensor<T> text_emb;
  ad::BasicTensor<T> image_emb;
  ad::BasicTensor<T> s0;
};

// z_i = tanh(W_v v) · tanh(W_h h_i); beta = softmax(z); t = Σ beta_i h_i.
template <typename T>
VisualAttention<T> visual_attention(ad::BasicGraph<T>& g, const GroundingParams<T>& p,
                                    const EncodedSource<T>& source,
                                    const ad::BasicTensor<T>& image);

// tanh(W_text t + b_text) and tanh(W_image v + b_image).
template <typename T>
SharedEmbedding<T> project_shared(ad::BasicGraph<T>& g, const GroundingParams<T>& p,
                                  const ad::BasicTensor<T>& t, const ad::BasicTensor<T>& image);

// Bidirectional hinge loss over all in-batch non-matching pairs, summed:
//   Σ_p Σ_{k≠p} max(0, γ − s(v_p, t_p) + s(v_p, t_k))
// + Σ_k Σ_{p≠k} max(0, γ − s(t_k, v_k) + s(t_k, v_p))
// with s the cosine similarity.
template <typename T>
ad::BasicTensor<T> ranking_loss(ad::BasicGraph<T>& g, std::span<const ad::BasicTensor<T>> text,
                                std::span<const ad::BasicTensor<T>> image, double gamma);

// s0 = tanh(W_init(λ t + (1 − λ) mean)). With λ = 0 the attended vector is
// not touched and may be undefined.
template <typename T>
ad::BasicTensor<T> decoder_init(ad::BasicGraph<T>& g, const GroundingParams<T>& p,
                                const ad::BasicTensor<T>& t, const ad::BasicTensor<T>& mean_state,
                                double lambda);

// All of the above for one sentence/image pair.
template <typename T>
GroundingOutput<T> ground(ad::BasicGraph<T>& g, const GroundingParams<T>& p,
                          const EncodedSource<T>& source, const ad::BasicTensor<T>& image,
                          const GroundingSettings& settings);

struct RetrievalResult {
  // rankings[q] lists candidate indices by descending similarity.
  std::vector<std::vector<std::size_t>> rankings;
  // Position of candidate q in rankings[q].
  std::vector<std::size_t> true_rank;

  double recall_at(std::size_t k) const;
};

// Ranks candidates for each query by cosine similarity, ties to the lower
// index. Query q's true pair is candidate q.
RetrievalResult retrieve(std::span<const std::vector<float>> queries,
                         std::span<const std::vector<float>> candidates);

}  // namespace vagnmt
