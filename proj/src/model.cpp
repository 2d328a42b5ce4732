#include "vagnmt/model.hpp"

#include <cmath>
#include <string>

#include "vagnmt/error.hpp"

namespace vagnmt {

void ModelDims::validate() const {
  const std::pair<const char*, std::size_t> fields[] = {
      {"source_vocab", source_vocab}, {"target_vocab", target_vocab},
      {"embed", embed},               {"hidden", hidden},
      {"shared", shared},             {"visual_attention", visual_attention},
      {"decoder_attention", decoder_attention}, {"output", output},
      {"feature", feature}};
  for (const auto& [name, value] : fields) {
    if (value == 0) throw ConfigError(std::string("model dimension ") + name + " must be positive");
  }
}

void to_json(nlohmann::json& j, const ModelDims& d) {
  j = {{"source_vocab", d.source_vocab},
       {"target_vocab", d.target_vocab},
       {"embed", d.embed},
       {"hidden", d.hidden},
       {"shared", d.shared},
       {"visual_attention", d.visual_attention},
       {"decoder_attention", d.decoder_attention},
       {"output", d.output},
       {"feature", d.feature}};
}

void from_json(const nlohmann::json& j, ModelDims& d) {
  const ModelDims defaults;
  d.source_vocab = j.value("source_vocab", defaults.source_vocab);
  d.target_vocab = j.value("target_vocab", defaults.target_vocab);
  d.embed = j.value("embed", defaults.embed);
  d.hidden = j.value("hidden", defaults.hidden);
  d.shared = j.value("shared", defaults.shared);
  d.visual_attention = j.value("visual_attention", defaults.visual_attention);
  d.decoder_attention = j.value("decoder_attention", defaults.decoder_attention);
  d.output = j.value("output", defaults.output);
  d.feature = j.value("feature", defaults.feature);
}

namespace {

template <typename T>
void add_gru(std::vector<std::pair<std::string, ad::BasicTensor<T>>>& out,
             const std::string& prefix, const GruParams<T>& p) {
  out.emplace_back(prefix + ".W", p.W);
  out.emplace_back(prefix + ".b", p.b);
  out.emplace_back(prefix + ".U_gates", p.U_gates);
  out.emplace_back(prefix + ".U_cand", p.U_cand);
}

template <typename T>
ad::BasicTensor<T> glorot(Rng& rng, std::size_t rows, std::size_t cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<T> values(rows * cols);
  for (T& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
  return ad::BasicTensor<T>::matrix(rows, cols, std::move(values), true);
}

template <typename T>
ad::BasicTensor<T> zero_bias(std::size_t n) {
  return ad::BasicTensor<T>::zeros({n}, true);
}

template <typename T>
GruParams<T> init_gru(Rng& rng, std::size_t input, std::size_t hidden) {
  return {glorot<T>(rng, 3 * hidden, input), zero_bias<T>(3 * hidden),
          glorot<T>(rng, 2 * hidden, hidden), glorot<T>(rng, hidden, hidden)};
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, ad::BasicTensor<T>>> named_parameters(const ModelParams<T>& p) {
  std::vector<std::pair<std::string, ad::BasicTensor<T>>> out;
  out.emplace_back("encoder.embedding", p.encoder.embedding);
  add_gru(out, "encoder.forward", p.encoder.forward);
  add_gru(out, "encoder.backward", p.encoder.backward);

  const auto& g = p.grounding;
  out.emplace_back("grounding.W_v", g.W_v);
  out.emplace_back("grounding.W_h", g.W_h);
  out.emplace_back("grounding.W_text", g.W_text);
  out.emplace_back("grounding.b_text", g.b_text);
  out.emplace_back("grounding.W_image", g.W_image);
  out.emplace_back("grounding.b_image", g.b_image);
  out.emplace_back("grounding.W_init", g.W_init);

  const auto& d = p.decoder;
  out.emplace_back("decoder.embedding", d.embedding);
  add_gru(out, "decoder.gru1", d.gru1);
  out.emplace_back("decoder.U_a", d.U_a);
  out.emplace_back("decoder.W_a", d.W_a);
  out.emplace_back("decoder.b_a", d.b_a);
  out.emplace_back("decoder.v_a", d.v_a);
  add_gru(out, "decoder.gru2", d.gru2);
  out.emplace_back("decoder.W_e", d.W_e);
  out.emplace_back("decoder.W_d", d.W_d);
  out.emplace_back("decoder.W_c", d.W_c);
  out.emplace_back("decoder.b_o", d.b_o);
  out.emplace_back("decoder.W_o", d.W_o);
  out.emplace_back("decoder.b_vocab", d.b_vocab);
  return out;
}

template <typename T>
ModelParams<T> init_params(const ModelDims& dims, Rng& rng) {
  dims.validate();
  const std::size_t h = dims.hidden;
  ModelParams<T> p;
  p.dims = dims;
  p.encoder.embedding = glorot<T>(rng, dims.source_vocab, dims.embed);
  p.encoder.forward = init_gru<T>(rng, dims.embed, h);
  p.encoder.backward = init_gru<T>(rng, dims.embed, h);

  auto& g = p.grounding;
  g.W_v = glorot<T>(rng, dims.visual_attention, dims.feature);
  g.W_h = glorot<T>(rng, dims.visual_attention, 2 * h);
  g.W_text = glorot<T>(rng, dims.shared, 2 * h);
  g.b_text = zero_bias<T>(dims.shared);
  g.W_image = glorot<T>(rng, dims.shared, dims.feature);
  g.b_image = zero_bias<T>(dims.shared);
  g.W_init = glorot<T>(rng, h, 2 * h);

  auto& d = p.decoder;
  d.embedding = glorot<T>(rng, dims.target_vocab, dims.embed);
  d.gru1 = init_gru<T>(rng, dims.embed, h);
  d.U_a = glorot<T>(rng, dims.decoder_attention, h);
  d.W_a = glorot<T>(rng, dims.decoder_attention, 2 * h);
  d.b_a = zero_bias<T>(dims.decoder_attention);
  {
    auto v = glorot<T>(rng, 1, dims.decoder_attention);
    d.v_a = ad::BasicTensor<T>::vector(std::vector<T>(v.data().begin(), v.data().end()), false, true);
  }
  d.gru2 = init_gru<T>(rng, 2 * h, h);
  d.W_e = glorot<T>(rng, dims.output, dims.embed);
  d.W_d = glorot<T>(rng, dims.output, h);
  d.W_c = glorot<T>(rng, dims.output, 2 * h);
  d.b_o = zero_bias<T>(dims.output);
  d.W_o = glorot<T>(rng, dims.target_vocab, dims.output);
  d.b_vocab = zero_bias<T>(dims.target_vocab);
  return p;
}

template <typename T>
ModelParams<T> clone_params(const ModelParams<T>& p) {
  ModelParams<T> out;
  out.dims = p.dims;
  out.encoder = p.encoder;
  out.grounding = p.grounding;
  out.decoder = p.decoder;
  auto clone_gru = [](GruParams<T>& g) {
    g.W = g.W.clone();
    g.b = g.b.clone();
    g.U_gates = g.U_gates.clone();
    g.U_cand = g.U_cand.clone();
  };
  out.encoder.embedding = out.encoder.embedding.clone();
  clone_gru(out.encoder.forward);
  clone_gru(out.encoder.backward);
  auto& g = out.grounding;
  for (auto* t : {&g.W_v, &g.W_h, &g.W_text, &g.b_text, &g.W_image, &g.b_image, &g.W_init}) {
    *t = t->clone();
  }
  auto& d = out.decoder;
  clone_gru(d.gru1);
  clone_gru(d.gru2);
  for (auto* t : {&d.embedding, &d.U_a, &d.W_a, &d.b_a, &d.v_a, &d.W_e, &d.W_d, &d.W_c, &d.b_o,
                  &d.W_o, &d.b_vocab}) {
    *t = t->clone();
  }
  return out;
}

GroundingSettings grounding_settings(const Ablation& ablation, double lambda, double gamma) {
  GroundingSettings s;
  s.lambda = (ablation.text_only || ablation.no_attention_init) ? 0.0 : lambda;
  s.gamma = gamma;
  s.attention_in_embedding = !ablation.no_grounding_attention;
  return s;
}

template <typename T>
ExampleForward<T> forward_example(ad::BasicGraph<T>& g, const ModelParams<T>& p,
                                  const Example& example, const GroundingSettings& settings,
                                  bool text_only, const ForwardContext& ctx) {
  const auto source = encode(g, p.encoder, example.source, ctx);
  ExampleForward<T> out;
  if (text_only) {
    out.s0 = decoder_init(g, p.grounding, ad::BasicTensor<T>{}, source.mean_state, 0.0);
  } else {
    if (example.image.size() != p.dims.feature) {
      throw DimensionError("forward_example: image feature has " +
                           std::to_string(example.image.size()) + " values, model expects " +
                           std::to_string(p.dims.feature));
    }
    const auto image = ad::BasicTensor<T>::vector(
        std::vector<T>(example.image.begin(), example.image.end()), true);
    const auto grounded = ground(g, p.grounding, source, image, settings);
    out.s0 = grounded.s0;
    out.text_emb = grounded.text_emb;
    out.image_emb = grounded.image_emb;
  }
  out.translation_loss = sequence_loss(g, p.decoder, out.s0, source.states, example.target, ctx);
  return out;
}

InferenceEncoding encode_for_inference(const ModelParams<float>& p, std::span<const int> source,
                                       std::span<const float> image,
                                       const GroundingSettings& settings, bool text_only) {
  ad::Graph g(ad::GradMode::kNoGrad);
  const auto ctx = ForwardContext::inference();
  const auto encoded = encode(g, p.encoder, source, ctx);
  InferenceEncoding out;
  out.states = encoded.states;
  if (text_only) {
    out.s0 = decoder_init(g, p.grounding, ad::Tensor{}, encoded.mean_state, 0.0);
    return out;
  }
  if (image.size() != p.dims.feature) {
    throw DimensionError("image feature has " + std::to_string(image.size()) +
                         " values, model expects " + std::to_string(p.dims.feature));
  }
  const auto v = ad::Tensor::vector(std::vector<float>(image.begin(), image.end()), true);
  const auto grounded = ground(g, p.grounding, encoded, v, settings);
  out.s0 = grounded.s0;
  out.text_emb = grounded.text_emb;
  out.image_emb = grounded.image_emb;
  return out;
}

#define VAGNMT_INSTANTIATE(T)                                                                  \
  template std::vector<std::pair<std::string, ad::BasicTensor<T>>> named_parameters(           \
      const ModelParams<T>&);                                                                  \
  template ModelParams<T> init_params(const ModelDims&, Rng&);                                 \
  template ModelParams<T> clone_params(const ModelParams<T>&);                                 \
  template ExampleForward<T> forward_example(ad::BasicGraph<T>&, const ModelParams<T>&,        \
                                             const Example&, const GroundingSettings&, bool,   \
                                             const ForwardContext&);
VAGNMT_INSTANTIATE(float)
VAGNMT_INSTANTIATE(double)
#undef VAGNMT_INSTANTIATE

}  // namespace vagnmt
