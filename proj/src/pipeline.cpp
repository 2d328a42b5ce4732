#include "vagnmt/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include "vagnmt/beam.hpp"
#include "vagnmt/decoder.hpp"
#include "vagnmt/error.hpp"

namespace vagnmt {

namespace fs = std::filesystem;

namespace {

std::vector<text::Tokens> segment_all(const text::BpeModel& bpe, std::span<const std::string> lines) {
  std::vector<text::Tokens> out;
  out.reserve(lines.size());
  for (const auto& line : lines) out.push_back(bpe.apply(text::tokenize(line)));
  return out;
}

}  // namespace

Preprocessor Preprocessor::fit(std::span<const std::string> source_lines,
                               std::span<const std::string> target_lines, std::size_t merges,
                               bool joint) {
  std::vector<text::Tokens> src, tgt;
  for (const auto& line : source_lines) src.push_back(text::tokenize(line));
  for (const auto& line : target_lines) tgt.push_back(text::tokenize(line));
  Preprocessor p;
  if (joint) {
    std::vector<text::Tokens> both = src;
    both.insert(both.end(), tgt.begin(), tgt.end());
    p.source_bpe = text::BpeModel::learn(both, merges);
    p.target_bpe = p.source_bpe;
  } else {
    p.source_bpe = text::BpeModel::learn(src, merges);
    p.target_bpe = text::BpeModel::learn(tgt, merges);
  }
  p.source_vocab = text::Vocabulary::build(segment_all(p.source_bpe, source_lines));
  p.target_vocab = text::Vocabulary::build(segment_all(p.target_bpe, target_lines));
  return p;
}

std::vector<int> Preprocessor::encode_source(std::string_view line) const {
  auto ids = source_vocab.numericalize(source_bpe.apply(text::tokenize(line)), false);
  ids.push_back(text::Vocabulary::kEos);
  return ids;
}

std::vector<int> Preprocessor::encode_target(std::string_view line) const {
  return target_vocab.numericalize(target_bpe.apply(text::tokenize(line)), true);
}

std::string Preprocessor::decode(std::span<const int> indices) const {
  return text::postprocess(target_vocab.symbols(indices));
}

nlohmann::json Preprocessor::to_json() const {
  const auto strip = [](const text::Vocabulary& v) {
    return std::vector<std::string>(v.tokens().begin() + text::Vocabulary::kReserved.size(),
                                    v.tokens().end());
  };
  return {{"source_bpe", source_bpe.serialize()},
          {"target_bpe", target_bpe.serialize()},
          {"source_vocab", strip(source_vocab)},
          {"target_vocab", strip(target_vocab)}};
}

Preprocessor Preprocessor::from_json(const nlohmann::json& j) {
  try {
    Preprocessor p;
    p.source_bpe = text::BpeModel::parse(j.at("source_bpe").get<std::string>());
    p.target_bpe = text::BpeModel::parse(j.at("target_bpe").get<std::string>());
    const auto src = j.at("source_vocab").get<std::vector<std::string>>();
    const auto tgt = j.at("target_vocab").get<std::vector<std::string>>();
    p.source_vocab = text::Vocabulary(src);
    p.target_vocab = text::Vocabulary(tgt);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad preprocessing metadata: ") + e.what());
  }
}

TrainingSet make_training_set(const Preprocessor& pre, const corpus::ParallelCorpus& corpus) {
  TrainingSet set;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto source = pre.encode_source(corpus.source[i]);
    auto target = pre.encode_target(corpus.target[i]);
    if (source.size() < 2) throw InputError("empty source sentence at line " + std::to_string(i + 1));
    if (target.size() < 3) throw InputError("empty target sentence at line " + std::to_string(i + 1));
    set.pairs.push_back({std::move(source), std::move(target)});
  }
  set.features = corpus.features;
  return set;
}

Translator::Translator(const ModelParams<float>& params, const Preprocessor& pre,
                       const GroundingSettings& settings, bool text_only)
    : params_(params), pre_(pre), settings_(settings), text_only_(text_only) {}

std::vector<int> Translator::translate_indices(std::span<const int> source,
                                               std::span<const float> image,
                                               std::size_t beam) const {
  const auto enc = encode_for_inference(params_, source, image, settings_, text_only_);
  return beam_search(params_.decoder, enc.s0, enc.states, beam, default_max_len(source.size()))
      .tokens;
}

std::string Translator::translate(std::string_view line, std::span<const float> image,
                                  std::size_t beam) const {
  const auto source = pre_.encode_source(line);
  return pre_.decode(translate_indices(source, image, beam));
}

std::vector<std::string> Translator::translate_all(std::span<const std::string> lines,
                                                   const corpus::FeatureMatrix* features,
                                                   std::size_t beam) const {
  if (!text_only_) {
    if (features == nullptr) throw InputError("image features are required for this model");
    if (features->count != lines.size()) {
      throw AlignmentError(std::to_string(lines.size()) + " sentences vs " +
                           std::to_string(features->count) + " feature rows");
    }
  }
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::span<const float> image =
        text_only_ || features == nullptr ? std::span<const float>{} : features->row(i);
    out.push_back(translate(lines[i], image, beam));
  }
  return out;
}

Translator::Embeddings Translator::embed_all(std::span<const std::string> lines,
                                             const corpus::FeatureMatrix& features) const {
  if (text_only_) throw ConfigError("text-only models have no shared embedding");
  if (features.count != lines.size()) {
    throw AlignmentError(std::to_string(lines.size()) + " sentences vs " +
                         std::to_string(features.count) + " feature rows");
  }
  Embeddings out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto enc = encode_for_inference(params_, pre_.encode_source(lines[i]), features.row(i),
                                          settings_, false);
    out.text.emplace_back(enc.text_emb.data().begin(), enc.text_emb.data().end());
    out.image.emplace_back(enc.image_emb.data().begin(), enc.image_emb.data().end());
  }
  return out;
}

eval::BleuReport score_translations(std::span<const std::string> hypotheses,
                                    std::span<const std::string> references, bool smoothing) {
  std::vector<text::Tokens> hyp, ref;
  for (const auto& h : hypotheses) hyp.push_back(text::tokenize(h));
  for (const auto& r : references) ref.push_back(text::tokenize(r));
  return eval::corpus_bleu(hyp, ref, smoothing);
}

TranslationOutcome evaluate_translation(const Translator& translator,
                                        const corpus::ParallelCorpus& corpus, std::size_t beam,
                                        bool smoothing) {
  TranslationOutcome out;
  out.translations = translator.translate_all(
      corpus.source, corpus.features.count > 0 ? &corpus.features : nullptr, beam);
  out.bleu = score_translations(out.translations, corpus.target, smoothing);
  std::vector<text::Tokens> hyp, ref;
  for (const auto& h : out.translations) hyp.push_back(text::tokenize(h));
  for (const auto& r : corpus.target) ref.push_back(text::tokenize(r));
  const auto acc = corpus::ambiguous_slot_accuracy(hyp, ref);
  if (acc.total > 0) out.slot_accuracy = acc;
  return out;
}

eval::RetrievalReport evaluate_retrieval(const Translator& translator,
                                         const corpus::ParallelCorpus& corpus,
                                         std::span<const std::size_t> ks) {
  const auto emb = translator.embed_all(corpus.source, corpus.features);
  return eval::report_retrieval(emb.text, emb.image, ks);
}

Checkpoint to_checkpoint(const TrainedModel& model, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.params = model.params;
  ck.meta = extra.is_object() ? extra : nlohmann::json::object();
  ck.meta["config"] = model.config;
  ck.meta["preprocessing"] = model.pre.to_json();
  return ck;
}

TrainedModel from_checkpoint(const Checkpoint& checkpoint) {
  TrainedModel m;
  m.params = checkpoint.params;
  try {
    m.config = checkpoint.meta.at("config").get<TrainConfig>();
    m.pre = Preprocessor::from_json(checkpoint.meta.at("preprocessing"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint trailer lacks model metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid config: ") + e.what());
  }
  if (m.pre.source_vocab.size() != m.params.dims.source_vocab ||
      m.pre.target_vocab.size() != m.params.dims.target_vocab) {
    throw FormatError("checkpoint vocabularies do not match the embedding sizes");
  }
  return m;
}

TrainedModel load_model(const fs::path& checkpoint_path) {
  return from_checkpoint(load_checkpoint(checkpoint_path));
}

TrainingRun run_training(const TrainConfig& config, const fs::path& data_dir,
                         const std::optional<fs::path>& out_dir,
                         const std::function<void(const std::string&)>& log) {
  const auto train_corpus = corpus::load_split(data_dir, "train");
  const auto valid_corpus = corpus::load_split(data_dir, "valid");
  return run_training(config, train_corpus, valid_corpus, out_dir, log);
}

TrainingRun run_training(const TrainConfig& config, const corpus::ParallelCorpus& train_corpus,
                         const corpus::ParallelCorpus& valid_corpus,
                         const std::optional<fs::path>& out_dir,
                         const std::function<void(const std::string&)>& log) {
  config.validate();
  if (train_corpus.size() == 0) throw InputError("empty training corpus");
  if (valid_corpus.size() == 0) throw InputError("empty validation corpus");

  TrainingRun run;
  run.model.config = config;
  run.model.pre = Preprocessor::fit(train_corpus.source, train_corpus.target, config.bpe_merges,
                                     config.joint_bpe);
  const auto data = make_training_set(run.model.pre, train_corpus);

  ModelDims dims = config.dims;
  dims.source_vocab = run.model.pre.source_vocab.size();
  dims.target_vocab = run.model.pre.target_vocab.size();
  if (!config.ablation.text_only) dims.feature = train_corpus.features.dim;
  run.model.config.dims = dims;
  Rng init_rng(config.seed);
  auto params = init_params<float>(dims, init_rng);

  const auto& pre = run.model.pre;
  const auto validator = [&](const ModelParams<float>& p) {
    const Translator translator(p, pre, config.grounding(), config.ablation.text_only);
    return evaluate_translation(translator, valid_corpus, config.beam_size, config.smoothing).bleu.bleu;
  };
  const auto on_epoch = [&](const HistoryRow& row, bool improved) {
    if (!log) return;
    std::ostringstream msg;
    msg << "epoch " << row.epoch << " J=" << row.J << " J_T=" << row.J_T << " J_V=" << row.J_V
        << " val_bleu=" << row.val_bleu << (improved ? " *" : "");
    log(msg.str());
  };
  run.result = train(std::move(params), data, config, validator, on_epoch);
  run.model.params = run.result.best;

  if (out_dir) {
    fs::create_directories(*out_dir);
    const nlohmann::json extra = {{"epoch", run.result.best_epoch},
                                  {"epochs_run", run.result.epochs},
                                  {"step", run.result.steps},
                                  {"best_bleu", run.result.best_bleu}};
    save_checkpoint(*out_dir / "model.vagc", to_checkpoint(run.model, extra));
    write_history(*out_dir / "history.csv", run.result.history);
    pre.source_bpe.save(*out_dir / "bpe.src");
    pre.target_bpe.save(*out_dir / "bpe.tgt");
    pre.source_vocab.save(*out_dir / "vocab.src");
    pre.target_vocab.save(*out_dir / "vocab.tgt");
  }
  return run;
}

}  // namespace vagnmt
