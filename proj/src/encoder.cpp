#include "vagnmt/encoder.hpp"

#include <string>
#include <vector>

#include "vagnmt/error.hpp"

namespace vagnmt {

template <typename T>
ad::BasicTensor<T> gru_step(ad::BasicGraph<T>& g, const GruParams<T>& p,
                            const ad::BasicTensor<T>& h_prev, const ad::BasicTensor<T>& x_proj) {
  const std::size_t h = p.hidden();
  if (h_prev.cols() != h || x_proj.cols() != 3 * h || h_prev.rows() != x_proj.rows()) {
    throw DimensionError("gru_step: state " + ad::shape_string(h_prev.shape()) + " and input " +
                         ad::shape_string(x_proj.shape()) + " do not fit hidden size " +
                         std::to_string(h));
  }
  const auto recurrent = g.linear(h_prev, p.U_gates);
  const auto z = g.sigmoid(g.add(g.slice_cols(x_proj, 0, h), g.slice_cols(recurrent, 0, h)));
  const auto r = g.sigmoid(g.add(g.slice_cols(x_proj, h, h), g.slice_cols(recurrent, h, h)));
  const auto candidate =
      g.tanh(g.add(g.slice_cols(x_proj, 2 * h, h), g.linear(g.mul(r, h_prev), p.U_cand)));
  return g.add(g.mul(g.affine(z, T(-1), T(1)), h_prev), g.mul(z, candidate));
}

template <typename T>
ad::BasicTensor<T> gru_cell(ad::BasicGraph<T>& g, const GruParams<T>& p,
                            const ad::BasicTensor<T>& h_prev, const ad::BasicTensor<T>& x) {
  if (x.cols() != p.input()) {
    throw DimensionError("gru_cell: input " + ad::shape_string(x.shape()) + " vs weights " +
                         ad::shape_string(p.W.shape()));
  }
  return gru_step(g, p, h_prev, g.linear(x, p.W, p.b));
}

template <typename T>
EncodedSource<T> encode(ad::BasicGraph<T>& g, const EncoderParams<T>& p,
                        std::span<const int> indices, const ForwardContext& ctx) {
  if (indices.empty()) throw InputError("encode: empty source sentence");
  const std::size_t n = indices.size();
  const std::size_t h = p.forward.hidden();

  auto embedded = g.gather_rows(p.embedding, indices);
  if (ctx.training && ctx.dropout.embedding > 0.0) {
    embedded = g.dropout(embedded, ctx.dropout.embedding, true, *ctx.rng);
  }
  // Input projections for all positions at once.
  const auto fwd_in = g.linear(embedded, p.forward.W, p.forward.b);
  const auto bwd_in = g.linear(embedded, p.backward.W, p.backward.b);

  std::vector<ad::BasicTensor<T>> fwd(n), bwd(n);
  auto state = ad::BasicTensor<T>::zeros({1, h});
  for (std::size_t i = 0; i < n; ++i) {
    state = gru_step(g, p.forward, state, g.row(fwd_in, i));
    fwd[i] = state;
  }
  state = ad::BasicTensor<T>::zeros({1, p.backward.hidden()});
  for (std::size_t i = n; i-- > 0;) {
    state = gru_step(g, p.backward, state, g.row(bwd_in, i));
    bwd[i] = state;
  }
  const std::vector<ad::BasicTensor<T>> halves = {g.stack_rows(bwd), g.stack_rows(fwd)};
  EncodedSource<T> out;
  out.states = g.concat_cols(halves);
  out.mean_state = g.mean_rows(out.states);
  out.length = n;
  return out;
}

#define VAGNMT_INSTANTIATE(T)                                                               \
  template ad::BasicTensor<T> gru_step(ad::BasicGraph<T>&, const GruParams<T>&,             \
                                       const ad::BasicTensor<T>&, const ad::BasicTensor<T>&); \
  template ad::BasicTensor<T> gru_cell(ad::BasicGraph<T>&, const GruParams<T>&,             \
                                       const ad::BasicTensor<T>&, const ad::BasicTensor<T>&); \
  template EncodedSource<T> encode(ad::BasicGraph<T>&, const EncoderParams<T>&,             \
                                   std::span<const int>, const ForwardContext&);
VAGNMT_INSTANTIATE(float)
VAGNMT_INSTANTIATE(double)
#undef VAGNMT_INSTANTIATE

}  // namespace vagnmt
