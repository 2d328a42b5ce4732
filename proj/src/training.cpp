#include "vagnmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "vagnmt/error.hpp"
#include "vagnmt/grounding.hpp"

namespace vagnmt {

TrainConfig TrainConfig::preset(const std::string& name) {
  TrainConfig c;
  if (name == "default") return c;
  if (name == "french") {
    c.learning_rate = 1e-3;
    c.dropout = {0.2, 0.4, 0.4};
    return c;
  }
  if (name == "ikea") {
    c.batch_size = 12;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected default, french or ikea)");
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (grounding_active() && batch_size < 2) {
    throw ConfigError("batch_size must be at least 2 while the ranking loss is active");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  for (double p : {dropout.embedding, dropout.context, dropout.output}) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probabilities must lie in [0, 1)");
  }
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (beam_size < 1) throw ConfigError("beam_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"alpha", c.alpha},
       {"lambda", c.lambda},
       {"gamma", c.gamma},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"clip_norm", c.clip_norm},
       {"dropout", {c.dropout.embedding, c.dropout.context, c.dropout.output}},
       {"patience", c.patience},
       {"beam_size", c.beam_size},
       {"seed", c.seed},
       {"text_only", c.ablation.text_only},
       {"no_grounding_attention", c.ablation.no_grounding_attention},
       {"no_attention_init", c.ablation.no_attention_init},
       {"max_epochs", c.max_epochs},
       {"smoothing", c.smoothing},
       {"bpe_merges", c.bpe_merges},
       {"joint_bpe", c.joint_bpe},
       {"dims", c.dims}};
  j["target_bleu"] = c.target_bleu ? nlohmann::json(*c.target_bleu) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const char* const kKnown[] = {
      "preset",     "alpha",     "lambda",    "gamma",     "learning_rate",
      "batch_size", "clip_norm", "dropout",   "patience",  "beam_size",
      "seed",       "text_only", "no_grounding_attention", "no_attention_init",
      "max_epochs", "smoothing", "bpe_merges", "joint_bpe", "dims", "target_bleu"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw ConfigError("unknown training config field '" + key + "'");
    }
  }
  try {
    c = TrainConfig::preset(j.value("preset", std::string("default")));
    c.alpha = j.value("alpha", c.alpha);
    c.lambda = j.value("lambda", c.lambda);
    c.gamma = j.value("gamma", c.gamma);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    if (j.contains("dropout")) {
      const auto& d = j.at("dropout");
      if (!d.is_array() || d.size() != 3) {
        throw ConfigError("dropout must be [embedding, context, output]");
      }
      c.dropout = {d[0].get<double>(), d[1].get<double>(), d[2].get<double>()};
    }
    c.patience = j.value("patience", c.patience);
    c.beam_size = j.value("beam_size", c.beam_size);
    c.seed = j.value("seed", c.seed);
    c.ablation.text_only = j.value("text_only", c.ablation.text_only);
    c.ablation.no_grounding_attention =
        j.value("no_grounding_attention", c.ablation.no_grounding_attention);
    c.ablation.no_attention_init = j.value("no_attention_init", c.ablation.no_attention_init);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.smoothing = j.value("smoothing", c.smoothing);
    c.bpe_merges = j.value("bpe_merges", c.bpe_merges);
    c.joint_bpe = j.value("joint_bpe", c.joint_bpe);
    if (j.contains("dims")) c.dims = j.at("dims").get<ModelDims>();
    if (j.contains("target_bleu") && !j.at("target_bleu").is_null()) {
      c.target_bleu = j.at("target_bleu").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
}

template <typename T>
BasicAdam<T>::BasicAdam(std::vector<ad::BasicTensor<T>> params, double learning_rate, double beta1,
                        double beta2, double epsilon)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

template <typename T>
void BasicAdam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    const auto grad = p.grad();
    auto value = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      value[i] -= static_cast<T>(lr_ * m_hat / (std::sqrt(v_hat) + epsilon_));
    }
  }
}

template class BasicAdam<float>;
template class BasicAdam<double>;

double clip_global_norm(std::span<const ad::Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float factor = static_cast<float>(max_norm / norm);
    for (auto p : params) {
      if (!p.has_grad()) continue;
      for (float& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

Example TrainingSet::example(std::size_t i) const {
  Example e;
  e.source = pairs[i].source;
  e.target = pairs[i].target;
  if (features.count > 0) e.image = features.row(i);
  return e;
}

namespace {

std::vector<ad::Tensor> handles(const ModelParams<float>& params) {
  std::vector<ad::Tensor> out;
  for (auto& [name, t] : named_parameters(params)) out.push_back(t);
  return out;
}

}  // namespace

StepStats joint_gradients(const ModelParams<float>& params, const TrainingSet& data,
                          std::span<const std::size_t> batch, const TrainConfig& config, Rng& rng) {
  if (batch.empty()) throw InputError("joint_step: empty batch");
  const bool grounding = config.grounding_active();
  if (grounding && batch.size() < 2) {
    throw InputError("joint_step: the ranking loss needs a batch of at least two pairs");
  }
  const auto settings = config.grounding();
  ForwardContext ctx;
  ctx.training = true;
  ctx.dropout = config.dropout;
  ctx.rng = &rng;

  ad::Graph g;
  std::vector<ad::Tensor> translation, text_emb, image_emb;
  for (std::size_t i : batch) {
    ExampleForward<float> fwd;
    try {
      fwd = forward_example(g, params, data.example(i), settings, config.ablation.text_only, ctx);
    } catch (const NumericDomainError& e) {
      throw NumericError("non-finite values in the forward pass of training pair " +
                         std::to_string(i) + ": " + e.what());
    }
    translation.push_back(fwd.translation_loss);
    if (grounding) {
      text_emb.push_back(fwd.text_emb);
      image_emb.push_back(fwd.image_emb);
    }
  }
  const auto J_T = g.scale(g.add_n(translation), 1.0f / static_cast<float>(batch.size()));
  ad::Tensor J = config.alpha == 1.0 || !grounding ? J_T : ad::Tensor{};
  ad::Tensor J_V;
  if (grounding) {
    J_V = ranking_loss<float>(g, text_emb, image_emb, config.gamma);
    const std::vector<ad::Tensor> terms = {g.scale(J_T, static_cast<float>(config.alpha)),
                                           g.scale(J_V, static_cast<float>(1.0 - config.alpha))};
    J = g.add_n(terms);
  }

  StepStats stats;
  stats.J = J.item();
  stats.J_T = J_T.item();
  stats.J_V = J_V.defined() ? J_V.item() : 0.0;
  if (!std::isfinite(stats.J)) {
    std::ostringstream msg;
    msg << "non-finite training loss: J = " << stats.J << ", J_T = " << stats.J_T
        << ", J_V = " << stats.J_V << " over a batch of " << batch.size();
    throw NumericError(msg.str());
  }
  const auto params_list = handles(params);
  for (auto p : params_list) p.zero_grad();
  g.backward(J);
  double sq = 0.0;
  for (const auto& p : params_list) {
    if (!p.has_grad()) continue;
    for (float x : p.grad()) sq += static_cast<double>(x) * x;
  }
  stats.grad_norm = std::sqrt(sq);
  if (!std::isfinite(stats.grad_norm)) {
    throw NumericError("non-finite gradient norm at J = " + std::to_string(stats.J));
  }
  return stats;
}

StepStats joint_step(const ModelParams<float>& params, const TrainingSet& data,
                     std::span<const std::size_t> batch, const TrainConfig& config, Adam& adam,
                     Rng& rng) {
  auto stats = joint_gradients(params, data, batch, config, rng);
  const auto params_list = handles(params);
  clip_global_norm(params_list, config.clip_norm);
  adam.step();
  return stats;
}

void write_history(const std::filesystem::path& path, std::span<const HistoryRow> history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "epoch,J,J_T,J_V,val_bleu\n";
  out.precision(9);
  for (const auto& row : history) {
    out << row.epoch << ',' << row.J << ',' << row.J_T << ',' << row.J_V << ',' << row.val_bleu
        << '\n';
  }
}

std::vector<std::vector<std::size_t>> make_batches(const TrainingSet& data,
                                                   std::size_t batch_size, bool min_two,
                                                   Rng& rng) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span(order));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data.pairs[a].source.size() < data.pairs[b].source.size();
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const auto end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (min_two && batches.size() > 1 && batches.back().size() < 2) {
    const auto last = batches.back();
    batches.pop_back();
    batches.back().insert(batches.back().end(), last.begin(), last.end());
  }
  rng.shuffle(std::span(batches));
  return batches;
}

TrainResult train(ModelParams<float> params, const TrainingSet& data, const TrainConfig& config,
                  const Validator& validate, const EpochCallback& on_epoch) {
  config.validate();
  if (data.size() == 0) throw InputError("train: empty training corpus");
  const bool grounding = config.grounding_active();
  if (!config.ablation.text_only) {
    if (data.features.count != data.size()) {
      throw AlignmentError("train: " + std::to_string(data.size()) + " sentence pairs vs " +
                           std::to_string(data.features.count) + " feature rows");
    }
    if (data.features.dim != params.dims.feature) {
      throw DimensionError("train: features have dimension " + std::to_string(data.features.dim) +
                           ", model expects " + std::to_string(params.dims.feature));
    }
  }
  if (grounding && data.size() < 2) {
    throw InputError("train: the ranking loss needs at least two training pairs");
  }

  Rng rng(config.seed);
  Rng batch_rng = rng.split();
  Adam adam(handles(params), config.learning_rate);

  TrainResult result;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    HistoryRow row;
    row.epoch = epoch;
    const auto batches = make_batches(data, config.batch_size, grounding, batch_rng);
    for (const auto& batch : batches) {
      const auto stats = joint_step(params, data, batch, config, adam, rng);
      row.J += stats.J;
      row.J_T += stats.J_T;
      row.J_V += stats.J_V;
    }
    const auto n = static_cast<double>(batches.size());
    row.J /= n;
    row.J_T /= n;
    row.J_V /= n;
    row.val_bleu = validate(params);
    result.history.push_back(row);
    result.epochs = epoch;

    const bool improved = row.val_bleu > result.best_bleu;
    if (improved) {
      result.best_bleu = row.val_bleu;
      result.best_epoch = epoch;
      result.best = clone_params(params);
      stale = 0;
    } else {
      ++stale;
    }
    if (on_epoch) on_epoch(row, improved);
    if (stale >= config.patience) break;
    if (config.target_bleu && result.best_bleu >= *config.target_bleu) break;
  }
  result.steps = adam.steps();
  return result;
}

}  // namespace vagnmt
