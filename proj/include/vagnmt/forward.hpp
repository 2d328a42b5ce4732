#pragma once

#include "vagnmt/random.hpp"

namespace vagnmt {

// Dropout probabilities at the encoder embeddings, at the attention context
// vectors, and at the decoder output layer.
struct DropoutRates {
  double embedding = 0.3;
  double context = 0.5;
  double output = 0.5;
};

// Per-pass switches shared by every model component.
struct ForwardContext {
  bool training = false;
  DropoutRates dropout;
  Rng* rng = nullptr;  // required when training with nonzero dropout

  static ForwardContext inference() { return {}; }
};

}  // namespace vagnmt
