#pragma once

// Joint optimization of the translation and shared-embedding objectives.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vagnmt/corpus.hpp"
#include "vagnmt/forward.hpp"
#include "vagnmt/model.hpp"
#include "vagnmt/random.hpp"

namespace vagnmt {

struct TrainConfig {
  double alpha = 0.99;
  double lambda = 0.5;
  double gamma = 0.1;
  double learning_rate = 4e-4;
  std::size_t batch_size = 32;
  double clip_norm = 1.0;
  DropoutRates dropout;
  std::size_t patience = 10;
  std::size_t beam_size = 12;
  std::uint64_t seed = 1;
  Ablation ablation;

  std::size_t max_epochs = 100;
  std::optional<double> target_bleu;  // stop once validation BLEU reaches it
  bool smoothing = true;              // smoothed BLEU during validation
  std::size_t bpe_merges = 2000;
  bool joint_bpe = false;             // one BPE model learned on both sides
  ModelDims dims;                     // vocabulary sizes are filled from the data

  // "default", "french" (lr 1e-3, dropout 0.2/0.4/0.4) or "ikea" (batch 12).
  static TrainConfig preset(const std::string& name);

  bool grounding_active() const { return !ablation.text_only && alpha < 1.0; }
  GroundingSettings grounding() const { return grounding_settings(ablation, lambda, gamma); }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing fields keep the values of the named "preset" (default "default").
void from_json(const nlohmann::json& j, TrainConfig& c);

// Adam with bias correction over a fixed list of parameter handles.
template <typename T>
class BasicAdam {
 public:
  BasicAdam(std::vector<ad::BasicTensor<T>> params, double learning_rate, double beta1 = 0.9,
            double beta2 = 0.999, double epsilon = 1e-8);

  void step();
  std::size_t steps() const { return t_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  std::vector<ad::BasicTensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
};

using Adam = BasicAdam<float>;

// Scales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_global_norm(std::span<const ad::Tensor> params, double max_norm);

struct StepStats {
  double J = 0.0;
  double J_T = 0.0;  // mean over the batch
  double J_V = 0.0;  // summed over in-batch pairs
  double grad_norm = 0.0;
};

// One pre-processed training pair.
struct TrainingPair {
  std::vector<int> source;
  std::vector<int> target;
};

struct TrainingSet {
  std::vector<TrainingPair> pairs;
  corpus::FeatureMatrix features;

  std::size_t size() const { return pairs.size(); }
  Example example(std::size_t i) const;
};

// Forward over the batch, J = α·mean J_T + (1 − α)·J_V, one backward pass,
// global clipping and an Adam update. Returns the unclipped norm.
StepStats joint_step(const ModelParams<float>& params, const TrainingSet& data,
                     std::span<const std::size_t> batch, const TrainConfig& config, Adam& adam,
                     Rng& rng);

// Computes the losses and gradients of one batch without updating anything.
StepStats joint_gradients(const ModelParams<float>& params, const TrainingSet& data,
                          std::span<const std::size_t> batch, const TrainConfig& config, Rng& rng);

struct HistoryRow {
  std::size_t epoch = 0;
  double J = 0.0, J_T = 0.0, J_V = 0.0;
  double val_bleu = 0.0;
};

void write_history(const std::filesystem::path& path, std::span<const HistoryRow> history);

struct TrainResult {
  ModelParams<float> best;
  double best_bleu = -1.0;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
  std::size_t steps = 0;
  std::vector<HistoryRow> history;
};

// Validation score of the current parameters; higher is better.
using Validator = std::function<double(const ModelParams<float>&)>;
// Called after every epoch with the newest history row.
using EpochCallback = std::function<void(const HistoryRow&, bool improved)>;

// Bucketed mini-batches in seeded order, one validation per epoch, patience
// counted in validations without improvement.
TrainResult train(ModelParams<float> params, const TrainingSet& data, const TrainConfig& config,
                  const Validator& validate, const EpochCallback& on_epoch = {});

// Batches of indices with similar source lengths, in a seeded random order.
// A trailing batch of one is folded into its neighbour when grounding is on.
std::vector<std::vector<std::size_t>> make_batches(const TrainingSet& data,
                                                   std::size_t batch_size, bool min_two, Rng& rng);

}  // namespace vagnmt
