#include "vagnmt/decoder.hpp"

#include <algorithm>
#include <string>

#include "vagnmt/error.hpp"
#include "vagnmt/text.hpp"

namespace vagnmt {

namespace {

bool dropout_on(const ForwardContext& ctx, double p) { return ctx.training && p > 0.0; }

}  // namespace

template <typename T>
AttentionMemory<T> prepare_attention(ad::BasicGraph<T>& g, const DecoderParams<T>& p,
                                     const ad::BasicTensor<T>& encoder_states) {
  if (encoder_states.rank() != 2 || encoder_states.cols() != p.W_a.dim(1)) {
    throw DimensionError("prepare_attention: encoder states " +
                         ad::shape_string(encoder_states.shape()) + " vs W_a " +
                         ad::shape_string(p.W_a.shape()));
  }
  return {encoder_states, g.linear(encoder_states, p.W_a, p.b_a)};
}

template <typename T>
CgruOutput<T> cgru_step(ad::BasicGraph<T>& g, const DecoderParams<T>& p,
                        const ad::BasicTensor<T>& s_prev, std::span<const int> prev_tokens,
                        const AttentionMemory<T>& memory, const ForwardContext& ctx) {
  if (s_prev.rows() != prev_tokens.size()) {
    throw DimensionError("cgru_step: " + std::to_string(s_prev.rows()) + " states vs " +
                         std::to_string(prev_tokens.size()) + " previous tokens");
  }
  CgruOutput<T> out;
  out.embedded = g.gather_rows(p.embedding, prev_tokens);
  const auto s_mid = gru_cell(g, p.gru1, s_prev, out.embedded);
  const auto energies = g.additive_scores(g.linear(s_mid, p.U_a), memory.keys, p.v_a);
  out.weights = g.softmax(energies);
  auto context = g.matmul(out.weights, memory.states);
  if (dropout_on(ctx, ctx.dropout.context)) {
    context = g.dropout(context, ctx.dropout.context, true, *ctx.rng);
  }
  out.context = context;
  out.state = gru_cell(g, p.gru2, s_mid, context);
  return out;
}

template <typename T>
ad::BasicTensor<T> output_distribution(ad::BasicGraph<T>& g, const DecoderParams<T>& p,
                                       const ad::BasicTensor<T>& embedded,
                                       const ad::BasicTensor<T>& state,
                                       const ad::BasicTensor<T>& context,
                                       const ForwardContext& ctx) {
  const std::vector<ad::BasicTensor<T>> terms = {g.linear(embedded, p.W_e),
                                                 g.linear(state, p.W_d, p.b_o),
                                                 g.linear(context, p.W_c)};
  auto o = g.tanh(g.add_n(terms));
  if (dropout_on(ctx, ctx.dropout.output)) {
    o = g.dropout(o, ctx.dropout.output, true, *ctx.rng);
  }
  return g.log_softmax(g.linear(o, p.W_o, p.b_vocab));
}

template <typename T>
ad::BasicTensor<T> sequence_loss(ad::BasicGraph<T>& g, const DecoderParams<T>& p,
                                 const ad::BasicTensor<T>& s0,
                                 const ad::BasicTensor<T>& encoder_states,
                                 std::span<const int> target, const ForwardContext& ctx) {
  if (target.size() < 2) throw InputError("sequence_loss: target needs at least one token after BOS");
  const auto memory = prepare_attention(g, p, encoder_states);
  auto state = s0;
  std::vector<ad::BasicTensor<T>> picked;
  picked.reserve(target.size() - 1);
  for (std::size_t j = 1; j < target.size(); ++j) {
    const auto step = cgru_step(g, p, state, target.subspan(j - 1, 1), memory, ctx);
    const auto log_probs = output_distribution(g, p, step.embedded, step.state, step.context, ctx);
    picked.push_back(g.pick(log_probs, target.subspan(j, 1)));
    state = step.state;
  }
  return g.scale(g.add_n(picked), T(-1));
}

DecoderBeamModel::DecoderBeamModel(const DecoderParams<float>& params, const ad::Tensor& s0,
                                   const ad::Tensor& encoder_states)
    : params_(params), s0_(s0) {
  ad::Graph g(ad::GradMode::kNoGrad);
  memory_ = prepare_attention(g, params_, encoder_states);
}

std::pair<ad::Tensor, StepScores> DecoderBeamModel::step(const ad::Tensor& state,
                                                         std::span<const int> prev_tokens) {
  ad::Graph g(ad::GradMode::kNoGrad);
  const auto ctx = ForwardContext::inference();
  const auto out = cgru_step(g, params_, state, prev_tokens, memory_, ctx);
  const auto log_probs = output_distribution(g, params_, out.embedded, out.state, out.context, ctx);
  StepScores scores;
  scores.rows = log_probs.rows();
  scores.vocab = log_probs.cols();
  scores.log_probs.assign(log_probs.data().begin(), log_probs.data().end());
  return {out.state, std::move(scores)};
}

ad::Tensor DecoderBeamModel::select(const ad::Tensor& state, std::span<const std::size_t> rows) {
  std::vector<int> indices(rows.begin(), rows.end());
  ad::Graph g(ad::GradMode::kNoGrad);
  return g.gather_rows(state, indices);
}

BeamResult beam_search(const DecoderParams<float>& params, const ad::Tensor& s0,
                       const ad::Tensor& encoder_states, std::size_t beam_size,
                       std::size_t max_len) {
  DecoderBeamModel model(params, s0, encoder_states);
  return beam_search(model, text::Vocabulary::kBos, text::Vocabulary::kEos, beam_size, max_len);
}

std::vector<int> greedy_decode(const DecoderParams<float>& params, const ad::Tensor& s0,
                               const ad::Tensor& encoder_states, std::size_t max_len) {
  ad::Graph g(ad::GradMode::kNoGrad);
  const auto ctx = ForwardContext::inference();
  const auto memory = prepare_attention(g, params, encoder_states);
  auto state = s0;
  std::vector<int> out;
  int prev = text::Vocabulary::kBos;
  for (std::size_t j = 0; j < max_len; ++j) {
    const auto step = cgru_step(g, params, state, std::span<const int>(&prev, 1), memory, ctx);
    const auto log_probs = output_distribution(g, params, step.embedded, step.state, step.context, ctx);
    const auto values = log_probs.data();
    const int best = static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
    if (best == text::Vocabulary::kEos) break;
    out.push_back(best);
    prev = best;
    state = step.state;
  }
  return out;
}

#define VAGNMT_INSTANTIATE(T)                                                                   \
  template AttentionMemory<T> prepare_attention(ad::BasicGraph<T>&, const DecoderParams<T>&,    \
                                                const ad::BasicTensor<T>&);                     \
  template CgruOutput<T> cgru_step(ad::BasicGraph<T>&, const DecoderParams<T>&,                 \
                                   const ad::BasicTensor<T>&, std::span<const int>,             \
                                   const AttentionMemory<T>&, const ForwardContext&);           \
  template ad::BasicTensor<T> output_distribution(ad::BasicGraph<T>&, const DecoderParams<T>&,  \
                                                  const ad::BasicTensor<T>&,                    \
                                                  const ad::BasicTensor<T>&,                    \
                                                  const ad::BasicTensor<T>&, const ForwardContext&); \
  template ad::BasicTensor<T> sequence_loss(ad::BasicGraph<T>&, const DecoderParams<T>&,        \
                                            const ad::BasicTensor<T>&, const ad::BasicTensor<T>&, \
                                            std::span<const int>, const ForwardContext&);
VAGNMT_INSTANTIATE(float)
VAGNMT_INSTANTIATE(double)
#undef VAGNMT_INSTANTIATE

}  // namespace vagnmt
