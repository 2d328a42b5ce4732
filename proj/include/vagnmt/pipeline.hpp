#pragma once

// End-to-end plumbing: raw text to indices and back, translation and
// embedding of whole corpora, and a complete training run on a data directory.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vagnmt/checkpoint.hpp"
#include "vagnmt/corpus.hpp"
#include "vagnmt/evaluation.hpp"
#include "vagnmt/model.hpp"
#include "vagnmt/text.hpp"
#include "vagnmt/training.hpp"

namespace vagnmt {

// A BPE model and a vocabulary per side. With joint set, one BPE model is
// learned on both sides together and shared.
struct Preprocessor {
  text::BpeModel source_bpe;
  text::BpeModel target_bpe;
  text::Vocabulary source_vocab;
  text::Vocabulary target_vocab;

  static Preprocessor fit(std::span<const std::string> source_lines,
                          std::span<const std::string> target_lines, std::size_t merges,
                          bool joint = false);

  // Subword indices followed by EOS.
  std::vector<int> encode_source(std::string_view line) const;
  // BOS, subword indices, EOS.
  std::vector<int> encode_target(std::string_view line) const;
  // Detokenized sentence for generated target indices.
  std::string decode(std::span<const int> indices) const;

  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& j);
};

TrainingSet make_training_set(const Preprocessor& pre, const corpus::ParallelCorpus& corpus);

// Inference over frozen parameters.
class Translator {
 public:
  Translator(const ModelParams<float>& params, const Preprocessor& pre,
             const GroundingSettings& settings, bool text_only);

  bool text_only() const { return text_only_; }

  // Generated target indices, without BOS/EOS. beam 1 runs the same search
  // as greedy decoding.
  std::vector<int> translate_indices(std::span<const int> source, std::span<const float> image,
                                     std::size_t beam) const;
  std::string translate(std::string_view line, std::span<const float> image,
                        std::size_t beam) const;
  // features may be null for text-only models.
  std::vector<std::string> translate_all(std::span<const std::string> lines,
                                         const corpus::FeatureMatrix* features,
                                         std::size_t beam) const;

  struct Embeddings {
    std::vector<std::vector<float>> text;
    std::vector<std::vector<float>> image;
  };
  Embeddings embed_all(std::span<const std::string> lines,
                       const corpus::FeatureMatrix& features) const;

 private:
  const ModelParams<float>& params_;
  const Preprocessor& pre_;
  GroundingSettings settings_;
  bool text_only_;
};

// BLEU of translations against references after re-tokenizing both.
eval::BleuReport score_translations(std::span<const std::string> hypotheses,
                                    std::span<const std::string> references, bool smoothing);

struct TranslationOutcome {
  std::vector<std::string> translations;
  eval::BleuReport bleu;
  std::optional<corpus::SlotAccuracy> slot_accuracy;  // when references hold sense words
};

TranslationOutcome evaluate_translation(const Translator& translator,
                                        const corpus::ParallelCorpus& corpus, std::size_t beam,
                                        bool smoothing);

eval::RetrievalReport evaluate_retrieval(const Translator& translator,
                                         const corpus::ParallelCorpus& corpus,
                                         std::span<const std::size_t> ks);

// A trained model with everything needed to use it.
struct TrainedModel {
  ModelParams<float> params;
  Preprocessor pre;
  TrainConfig config;

  Translator translator() const {
    return Translator(params, pre, config.grounding(), config.ablation.text_only);
  }
};

Checkpoint to_checkpoint(const TrainedModel& model, const nlohmann::json& extra = {});
TrainedModel from_checkpoint(const Checkpoint& checkpoint);
TrainedModel load_model(const std::filesystem::path& checkpoint_path);

struct TrainingRun {
  TrainedModel model;
  TrainResult result;
};

// Loads {data_dir}/train and valid splits, fits the preprocessor, trains with
// per-epoch validation BLEU, and when out_dir is given writes model.vagc,
// history.csv, bpe.src, bpe.tgt, vocab.src and vocab.tgt there.
TrainingRun run_training(const TrainConfig& config, const std::filesystem::path& data_dir,
                         const std::optional<std::filesystem::path>& out_dir,
                         const std::function<void(const std::string&)>& log = {});

// Same, on corpora already in memory.
TrainingRun run_training(const TrainConfig& config, const corpus::ParallelCorpus& train_corpus,
                         const corpus::ParallelCorpus& valid_corpus,
                         const std::optional<std::filesystem::path>& out_dir,
                         const std::function<void(const std::string&)>& log = {});

}  // namespace vagnmt
