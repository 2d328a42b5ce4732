#pragma once

// Tiny model shapes for unit tests and gradient checks.

#include <vector>

#include "vagnmt/model.hpp"
#include "vagnmt/random.hpp"

namespace vagnmt::testing {

inline ModelDims tiny_dims() {
  ModelDims d;
  d.source_vocab = 7;
  d.target_vocab = 6;
  d.embed = 3;
  d.hidden = 4;
  d.shared = 5;
  d.visual_attention = 3;
  d.decoder_attention = 3;
  d.output = 4;
  d.feature = 6;
  return d;
}

// Glorot weights plus small random biases, so bias gradients are exercised
// away from zero.
template <typename T>
ModelParams<T> tiny_model(std::uint64_t seed, const ModelDims& dims = tiny_dims()) {
  Rng rng(seed);
  auto p = init_params<T>(dims, rng);
  for (auto& [name, t] : named_parameters(p)) {
    if (t.rank() != 1) continue;
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-0.3, 0.3));
  }
  return p;
}

template <typename T>
std::vector<ad::BasicTensor<T>> all_leaves(const ModelParams<T>& p) {
  std::vector<ad::BasicTensor<T>> out;
  for (auto& [name, t] : named_parameters(p)) out.push_back(t);
  return out;
}

template <typename T>
void set_all(const GruParams<T>& p, T value) {
  for (auto t : {p.W, p.b, p.U_gates, p.U_cand}) {
    for (auto& v : t.mutable_data()) v = value;
  }
}

}  // namespace vagnmt::testing
