#pragma once

// Conditional-GRU attention decoder: GRU1 over the previous target
// embedding, additive attention over the encoder states, GRU2 over the
// attended context, then a tanh output layer and a softmax over the target
// vocabulary. Every step operates on a batch of rows so the same code serves
// teacher-forced training (one row) and beam search (one row per hypothesis).

#include <span>
#include <vector>

#include "vagnmt/beam.hpp"
#include "vagnmt/encoder.hpp"
#include "vagnmt/forward.hpp"
#include "vagnmt/tensor.hpp"

namespace vagnmt {

template <typename T>
struct DecoderParams {
  ad::BasicTensor<T> embedding;  // {vocab, embed}
  GruParams<T> gru1;             // input embed
  ad::BasicTensor<T> U_a;        // {att, h}: query transform
  ad::BasicTensor<T> W_a;        // {att, 2h}: key transform
  ad::BasicTensor<T> b_a;        // {att}
  ad::BasicTensor<T> v_a;        // {att}
  GruParams<T> gru2;             // input 2h
  ad::BasicTensor<T> W_e;        // {out, embed}
  ad::BasicTensor<T> W_d;        // {out, h}
  ad::BasicTensor<T> W_c;        // {out, 2h}
  ad::BasicTensor<T> b_o;        // {out}
  ad::BasicTensor<T> W_o;        // {vocab, out}
  ad::BasicTensor<T> b_vocab;    // {vocab}

  std::size_t hidden() const { return gru1.hidden(); }
  std::size_t vocab_size() const { return W_o.dim(0); }
};

// Encoder states plus their attention keys, computed once per sentence.
template <typename T>
struct AttentionMemory {
  ad::BasicTensor<T> states;  // {n, 2h}
  ad::BasicTensor<T> keys;    // {n, att}
};

template <typename T>
AttentionMemory<T> prepare_attention(ad::BasicGraph<T>& g, const DecoderParams<T>& p,
                                     const ad::BasicTensor<T>& encoder_states);

template <typename T>
struct CgruOutput {
  ad::BasicTensor<T> state;     // s_j, {k, h}
  ad::BasicTensor<T> context;   // c_j, {k, 2h} (after context dropout)
  ad::BasicTensor<T> weights;   // {k, n}
  ad::BasicTensor<T> embedded;  // embedding of the previous token, {k, embed}
};

template <typename T>
CgruOutput<T> cgru_step(ad::BasicGraph<T>& g, const DecoderParams<T>& p,
                        const ad::BasicTensor<T>& s_prev, std::span<const int> prev_tokens,
                        const AttentionMemory<T>& memory, const ForwardContext& ctx);

// log softmax(W_o o + b) with o = tanh(W_e e + W_d s + W_c c + b_o).
template <typename T>
ad::BasicTensor<T> output_distribution(ad::BasicGraph<T>& g, const DecoderParams<T>& p,
                                       const ad::BasicTensor<T>& embedded,
                                       const ad::BasicTensor<T>& state,
                                       const ad::BasicTensor<T>& context,
                                       const ForwardContext& ctx);

// Teacher-forced negative log-likelihood of target[1..] given target[0..],
// summed over positions. target is framed BOS ... EOS.
template <typename T>
ad::BasicTensor<T> sequence_loss(ad::BasicGraph<T>& g, const DecoderParams<T>& p,
                                 const ad::BasicTensor<T>& s0,
                                 const ad::BasicTensor<T>& encoder_states,
                                 std::span<const int> target, const ForwardContext& ctx);

// Step model for beam_search over a trained float decoder.
class DecoderBeamModel {
 public:
  using State = ad::Tensor;

  DecoderBeamModel(const DecoderParams<float>& params, const ad::Tensor& s0,
                   const ad::Tensor& encoder_states);

  State initial() const { return s0_; }
  std::pair<State, StepScores> step(const State& state, std::span<const int> prev_tokens);
  State select(const State& state, std::span<const std::size_t> rows);

 private:
  const DecoderParams<float>& params_;
  ad::Tensor s0_;
  AttentionMemory<float> memory_;
};

BeamResult beam_search(const DecoderParams<float>& params, const ad::Tensor& s0,
                       const ad::Tensor& encoder_states, std::size_t beam_size,
                       std::size_t max_len);

// Argmax decoding, written independently of beam_search.
std::vector<int> greedy_decode(const DecoderParams<float>& params, const ad::Tensor& s0,
                               const ad::Tensor& encoder_states, std::size_t max_len);

// Default decoding length bound for a source of n tokens.
inline std::size_t default_max_len(std::size_t source_length) { return 3 * source_length + 5; }

}  // namespace vagnmt
