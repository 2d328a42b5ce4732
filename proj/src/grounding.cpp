#include "vagnmt/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vagnmt/error.hpp"

namespace vagnmt {

namespace {

template <typename T>
ad::BasicTensor<T> as_row(ad::BasicGraph<T>& g, const ad::BasicTensor<T>& v) {
  return v.rank() == 2 ? v : g.reshape(v, {1, v.size()});
}

}  // namespace

void GroundingSettings::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(gamma > 0.0)) throw ConfigError("ranking margin gamma must be positive");
}

template <typename T>
VisualAttention<T> visual_attention(ad::BasicGraph<T>& g, const GroundingParams<T>& p,
                                    const EncodedSource<T>& source,
                                    const ad::BasicTensor<T>& image) {
  for (T x : image.data()) {
    if (!std::isfinite(x)) throw NumericDomainError("visual_attention: non-finite image feature");
  }
  if (image.size() != p.W_v.dim(1)) {
    throw DimensionError("visual_attention: image feature " + ad::shape_string(image.shape()) +
                         " vs W_v " + ad::shape_string(p.W_v.shape()));
  }
  if (source.states.cols() != p.W_h.dim(1)) {
    throw DimensionError("visual_attention: encoder states " +
                         ad::shape_string(source.states.shape()) + " vs W_h " +
                         ad::shape_string(p.W_h.shape()));
  }
  const auto query = g.tanh(g.linear(as_row(g, image), p.W_v));  // {1, a}
  const auto keys = g.tanh(g.linear(source.states, p.W_h));      // {n, a}
  VisualAttention<T> out;
  out.beta = g.softmax(g.matmul(query, g.transpose(keys)));       // {1, n}
  out.t = g.matmul(out.beta, source.states);                      // {1, 2h}
  return out;
}

template <typename T>
SharedEmbedding<T> project_shared(ad::BasicGraph<T>& g, const GroundingParams<T>& p,
                                  const ad::BasicTensor<T>& t, const ad::BasicTensor<T>& image) {
  if (t.size() != p.W_text.dim(1) || image.size() != p.W_image.dim(1)) {
    throw DimensionError("project_shared: inputs " + ad::shape_string(t.shape()) + ", " +
                         ad::shape_string(image.shape()) + " vs projections " +
                         ad::shape_string(p.W_text.shape()) + ", " +
                         ad::shape_string(p.W_image.shape()));
  }
  return {g.tanh(g.linear(as_row(g, t), p.W_text, p.b_text)),
          g.tanh(g.linear(as_row(g, image), p.W_image, p.b_image))};
}

template <typename T>
ad::BasicTensor<T> ranking_loss(ad::BasicGraph<T>& g, std::span<const ad::BasicTensor<T>> text,
                                std::span<const ad::BasicTensor<T>> image, double gamma) {
  if (text.size() != image.size()) {
    throw InputError("ranking_loss: " + std::to_string(text.size()) + " texts vs " +
                     std::to_string(image.size()) + " images");
  }
  const std::size_t batch = text.size();
  if (batch < 2) throw InputError("ranking_loss: need at least two pairs for contrastive terms");

  // sim[i][j] = s(t_i, v_j)
  std::vector<std::vector<ad::BasicTensor<T>>> sim(batch, std::vector<ad::BasicTensor<T>>(batch));
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < batch; ++j) sim[i][j] = g.cosine_similarity(text[i], image[j]);
  }
  const T margin = static_cast<T>(gamma);
  std::vector<ad::BasicTensor<T>> hinges;
  hinges.reserve(2 * batch * (batch - 1));
  // Image p as the anchor against contrastive sentences k.
  for (std::size_t p = 0; p < batch; ++p) {
    for (std::size_t k = 0; k < batch; ++k) {
      if (k == p) continue;
      hinges.push_back(g.relu(g.affine(g.sub(sim[k][p], sim[p][p]), T(1), margin)));
    }
  }
  // Sentence k as the anchor against contrastive images p.
  for (std::size_t k = 0; k < batch; ++k) {
    for (std::size_t p = 0; p < batch; ++p) {
      if (p == k) continue;
      hinges.push_back(g.relu(g.affine(g.sub(sim[k][p], sim[k][k]), T(1), margin)));
    }
  }
  return g.add_n(hinges);
}

template <typename T>
ad::BasicTensor<T> decoder_init(ad::BasicGraph<T>& g, const GroundingParams<T>& p,
                                const ad::BasicTensor<T>& t, const ad::BasicTensor<T>& mean_state,
                                double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("decoder_init: lambda outside [0, 1]");
  ad::BasicTensor<T> mixed;
  if (lambda == 0.0) {
    mixed = mean_state;
  } else if (lambda == 1.0) {
    mixed = t;
  } else {
    if (t.shape() != mean_state.shape()) {
      throw DimensionError("decoder_init: t " + ad::shape_string(t.shape()) + " vs mean " +
                           ad::shape_string(mean_state.shape()));
    }
    mixed = g.add(g.scale(t, static_cast<T>(lambda)), g.scale(mean_state, static_cast<T>(1.0 - lambda)));
  }
  return g.tanh(g.linear(as_row(g, mixed), p.W_init));
}

template <typename T>
GroundingOutput<T> ground(ad::BasicGraph<T>& g, const GroundingParams<T>& p,
                          const EncodedSource<T>& source, const ad::BasicTensor<T>& image,
                          const GroundingSettings& settings) {
  settings.validate();
  GroundingOutput<T> out;
  const auto attention = visual_attention(g, p, source, image);
  out.beta = attention.beta;
  out.t = attention.t;
  const auto shared = project_shared(
      g, p, settings.attention_in_embedding ? attention.t : source.mean_state, image);
  out.text_emb = shared.text;
  out.image_emb = shared.image;
  out.s0 = decoder_init(g, p, attention.t, source.mean_state, settings.lambda);
  return out;
}

double RetrievalResult::recall_at(std::size_t k) const {
  if (true_rank.empty()) return 0.0;
  const auto hits = std::count_if(true_rank.begin(), true_rank.end(),
                                  [k](std::size_t r) { return r < k; });
  return static_cast<double>(hits) / static_cast<double>(true_rank.size());
}

RetrievalResult retrieve(std::span<const std::vector<float>> queries,
                         std::span<const std::vector<float>> candidates) {
  if (queries.empty() || candidates.empty()) throw InputError("retrieve: empty query or candidate list");
  if (queries.size() != candidates.size()) {
    throw InputError("retrieve: " + std::to_string(queries.size()) + " queries vs " +
                     std::to_string(candidates.size()) + " candidates");
  }
  const auto unit = [](const std::vector<float>& v) {
    double norm = 0;
    for (float x : v) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericDomainError("retrieve: zero-norm or non-finite embedding");
    }
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
    return out;
  };
  std::vector<std::vector<double>> cands;
  for (const auto& c : candidates) cands.push_back(unit(c));

  RetrievalResult result;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto query = unit(queries[q]);
    if (query.size() != cands[0].size()) throw DimensionError("retrieve: embedding sizes differ");
    std::vector<double> scores(cands.size());
    for (std::size_t c = 0; c < cands.size(); ++c) {
      if (cands[c].size() != query.size()) throw DimensionError("retrieve: embedding sizes differ");
      scores[c] = std::inner_product(query.begin(), query.end(), cands[c].begin(), 0.0);
    }
    std::vector<std::size_t> order(cands.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    result.true_rank.push_back(
        static_cast<std::size_t>(std::find(order.begin(), order.end(), q) - order.begin()));
    result.rankings.push_back(std::move(order));
  }
  return result;
}

#define VAGNMT_INSTANTIATE(T)                                                                  \
  template VisualAttention<T> visual_attention(ad::BasicGraph<T>&, const GroundingParams<T>&,  \
                                               const EncodedSource<T>&, const ad::BasicTensor<T>&); \
  template SharedEmbedding<T> project_shared(ad::BasicGraph<T>&, const GroundingParams<T>&,    \
                                             const ad::BasicTensor<T>&, const ad::BasicTensor<T>&); \
  template ad::BasicTensor<T> ranking_loss(ad::BasicGraph<T>&,                                 \
                                           std::span<const ad::BasicTensor<T>>,                \
                                           std::span<const ad::BasicTensor<T>>, double);       \
  template ad::BasicTensor<T> decoder_init(ad::BasicGraph<T>&, const GroundingParams<T>&,      \
                                           const ad::BasicTensor<T>&, const ad::BasicTensor<T>&, \
                                           double);                                            \
  template GroundingOutput<T> ground(ad::BasicGraph<T>&, const GroundingParams<T>&,            \
                                     const EncodedSource<T>&, const ad::BasicTensor<T>&,       \
                                     const GroundingSettings&);
VAGNMT_INSTANTIATE(float)
VAGNMT_INSTANTIATE(double)
#undef VAGNMT_INSTANTIATE

}  // namespace vagnmt
