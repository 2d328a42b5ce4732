#pragma once

#include <span>

#include "vagnmt/forward.hpp"
#include "vagnmt/tensor.hpp"

namespace vagnmt {

// GRU weights. W maps the input to the stacked [update, reset, candidate]
// pre-activations; U_gates and U_cand are the recurrent maps for the two
// gates and for the candidate (which sees the reset-gated state).
template <typename T>
struct GruParams {
  ad::BasicTensor<T> W;        // {3h, in}
  ad::BasicTensor<T> b;        // {3h}
  ad::BasicTensor<T> U_gates;  // {2h, h}
  ad::BasicTensor<T> U_cand;   // {h, h}

  std::size_t hidden() const { return U_cand.dim(0); }
  std::size_t input() const { return W.dim(1); }
};

// One GRU update from an already projected input x_proj = x·Wᵀ + b, shape
// {rows, 3h}. h_prev has shape {rows, h}.
//   z = σ(.. + U_z h), r = σ(.. + U_r h), h̃ = tanh(.. + U_h (r ⊙ h))
//   h' = (1 − z) ⊙ h + z ⊙ h̃
template <typename T>
ad::BasicTensor<T> gru_step(ad::BasicGraph<T>& g, const GruParams<T>& p,
                            const ad::BasicTensor<T>& h_prev, const ad::BasicTensor<T>& x_proj);

template <typename T>
ad::BasicTensor<T> gru_cell(ad::BasicGraph<T>& g, const GruParams<T>& p,
                            const ad::BasicTensor<T>& h_prev, const ad::BasicTensor<T>& x);

template <typename T>
struct EncoderParams {
  ad::BasicTensor<T> embedding;  // {vocab, embed}
  GruParams<T> forward;
  GruParams<T> backward;
};

template <typename T>
struct EncodedSource {
  ad::BasicTensor<T> states;      // {n, 2h}; row i is [backward_i, forward_i]
  ad::BasicTensor<T> mean_state;  // {1, 2h}
  std::size_t length = 0;
};

// Bidirectional encoding from zero initial states. Embedding dropout is
// applied when ctx.training is set.
template <typename T>
EncodedSource<T> encode(ad::BasicGraph<T>& g, const EncoderParams<T>& p,
                        std::span<const int> indices, const ForwardContext& ctx);

}  // namespace vagnmt
