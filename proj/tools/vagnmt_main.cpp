// vagnmt command-line driver.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vagnmt/corpus.hpp"
#include "vagnmt/error.hpp"
#include "vagnmt/evaluation.hpp"
#include "vagnmt/pipeline.hpp"
#include "vagnmt/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void log_line(const std::string& line) { std::cerr << line << '\n'; }

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw vagnmt::InputError("cannot write " + path);
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw vagnmt::InputError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw vagnmt::ConfigError(path.string() + ": " + e.what());
  }
}

struct TrainOverrides {
  std::string data;
  bool text_only = false;
  bool no_grounding_attention = false;
  bool no_attention_init = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
};

// Splits a config file into the data directory and the training config,
// applying command-line overrides on top.
std::pair<fs::path, vagnmt::TrainConfig> load_train_config(const std::string& path,
                                                            const TrainOverrides& o) {
  json j = read_json(path);
  if (!j.is_object()) throw vagnmt::ConfigError(path + ": config must be a JSON object");
  std::string data = j.value("data", std::string());
  j.erase("data");
  auto config = j.get<vagnmt::TrainConfig>();
  if (!o.data.empty()) data = o.data;
  if (data.empty()) throw vagnmt::ConfigError("no data directory (set \"data\" or pass --data)");
  if (o.text_only) config.ablation.text_only = true;
  if (o.no_grounding_attention) config.ablation.no_grounding_attention = true;
  if (o.no_attention_init) config.ablation.no_attention_init = true;
  if (o.seed) config.seed = *o.seed;
  if (o.max_epochs) config.max_epochs = *o.max_epochs;
  config.validate();
  return {fs::path(data), config};
}

void add_train_overrides(CLI::App* cmd, TrainOverrides& o) {
  cmd->add_option("--data", o.data, "Directory with train/valid splits (overrides config)");
  cmd->add_flag("--text-only", o.text_only, "Ignore images entirely");
  cmd->add_flag("--no-grounding-attention", o.no_grounding_attention,
                "Use the mean encoder state in the shared embedding");
  cmd->add_flag("--no-attention-init", o.no_attention_init,
                "Initialize the decoder from the mean encoder state only");
  cmd->add_option("--seed", o.seed, "Random seed (overrides config)");
  cmd->add_option("--max-epochs", o.max_epochs, "Epoch limit (overrides config)");
}

std::vector<vagnmt::text::Tokens> tokenized_lines(const std::vector<std::string>& files) {
  std::vector<vagnmt::text::Tokens> out;
  for (const auto& f : files) {
    for (const auto& line : vagnmt::text::read_lines(f)) out.push_back(vagnmt::text::tokenize(line));
  }
  return out;
}

struct SeedOutcome {
  std::uint64_t seed;
  double bleu;
  std::optional<double> slot_accuracy;
  std::size_t epochs;
};

std::string mean_std(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << mean << " ± " << sd;
  return s.str();
}

json stats_json(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {{"mean", mean}, {"std", values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0},
          {"values", values}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual-attention grounded neural machine translation"};
  app.require_subcommand(1);

  // learn-bpe
  std::vector<std::string> bpe_inputs;
  std::size_t bpe_merges = 10000;
  std::string bpe_output;
  auto* learn_bpe = app.add_subcommand("learn-bpe", "Learn BPE merges from text files");
  learn_bpe->add_option("--input", bpe_inputs, "Training text (repeatable)")->required()->check(CLI::ExistingFile);
  learn_bpe->add_option("--merges", bpe_merges, "Number of merge operations");
  learn_bpe->add_option("--output", bpe_output, "Merges file to write")->required();

  // build-vocab
  std::vector<std::string> vocab_inputs;
  std::string vocab_bpe, vocab_output;
  auto* build_vocab = app.add_subcommand("build-vocab", "Build a vocabulary of BPE symbols");
  build_vocab->add_option("--input", vocab_inputs, "Text (repeatable)")->required()->check(CLI::ExistingFile);
  build_vocab->add_option("--bpe", vocab_bpe, "Merges file")->required()->check(CLI::ExistingFile);
  build_vocab->add_option("--output", vocab_output, "Vocabulary file to write")->required();

  // synth
  std::string synth_task = "copy", synth_out;
  vagnmt::corpus::SynthSpec synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth_cmd->add_option("--task", synth_task, "copy, reverse or ambiguous");
  synth_cmd->add_option("--n", synth.train, "Training pairs");
  synth_cmd->add_option("--valid", synth.valid, "Validation pairs (default max(4, n/4))");
  synth_cmd->add_option("--test", synth.test, "Test pairs (default max(4, n/4))");
  synth_cmd->add_option("--vocab", synth.vocab, "Word types");
  synth_cmd->add_option("--min-len", synth.min_length, "Shortest sentence");
  synth_cmd->add_option("--max-len", synth.max_length, "Longest sentence");
  synth_cmd->add_option("--feature-dim", synth.feature_dim, "Image feature dimension");
  synth_cmd->add_option("--clusters", synth.clusters, "Feature clusters (copy/reverse)");
  synth_cmd->add_option("--noise", synth.noise, "Feature noise standard deviation");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();

  // train
  std::string train_config, train_out;
  TrainOverrides train_over;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", train_config, "JSON config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  add_train_overrides(train_cmd, train_over);

  // translate
  std::string tr_checkpoint, tr_input, tr_features, tr_output;
  std::size_t tr_beam = 12;
  auto* translate_cmd = app.add_subcommand("translate", "Translate sentences");
  translate_cmd->add_option("--checkpoint", tr_checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  translate_cmd->add_option("--input", tr_input, "Source sentences")->required()->check(CLI::ExistingFile);
  translate_cmd->add_option("--features", tr_features, "VAGF image features")->check(CLI::ExistingFile);
  translate_cmd->add_option("--beam", tr_beam, "Beam size")->check(CLI::PositiveNumber);
  translate_cmd->add_option("--output", tr_output, "Translations file (default stdout)");

  // retrieve
  std::string rt_checkpoint, rt_corpus, rt_k = "1,5,10", rt_output;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Image/text retrieval recall");
  retrieve_cmd->add_option("--checkpoint", rt_checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  retrieve_cmd->add_option("--corpus", rt_corpus, "Corpus prefix: PREFIX.src.txt, PREFIX.feat.vagf")->required();
  retrieve_cmd->add_option("--k", rt_k, "Comma-separated cutoffs");
  retrieve_cmd->add_option("--output", rt_output, "JSON report (default stdout)");

  // eval-bleu
  std::string eb_hyp, eb_ref, eb_output;
  bool eb_no_smoothing = false;
  auto* bleu_cmd = app.add_subcommand("eval-bleu", "Corpus BLEU of a translations file");
  bleu_cmd->add_option("--hyp", eb_hyp, "Hypotheses")->required()->check(CLI::ExistingFile);
  bleu_cmd->add_option("--ref", eb_ref, "References")->required()->check(CLI::ExistingFile);
  bleu_cmd->add_flag("--no-smoothing", eb_no_smoothing, "Plain BLEU without add-one smoothing");
  bleu_cmd->add_option("--output", eb_output, "JSON report (default stdout)");

  // experiment
  std::string ex_config, ex_out;
  std::size_t ex_seeds = 5;
  TrainOverrides ex_over;
  auto* experiment_cmd = app.add_subcommand("experiment", "Train and test over several seeds");
  experiment_cmd->add_option("--config", ex_config, "JSON config")->required()->check(CLI::ExistingFile);
  experiment_cmd->add_option("--seeds", ex_seeds, "Number of seeds")->check(CLI::PositiveNumber);
  experiment_cmd->add_option("--out", ex_out, "Output directory")->required();
  add_train_overrides(experiment_cmd, ex_over);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*learn_bpe) {
      const auto corpus = tokenized_lines(bpe_inputs);
      const auto model = vagnmt::text::BpeModel::learn(corpus, bpe_merges);
      model.save(bpe_output);
      log_line("learned " + std::to_string(model.merges().size()) + " merges");
    } else if (*build_vocab) {
      const auto bpe = vagnmt::text::BpeModel::load(vocab_bpe);
      std::vector<vagnmt::text::Tokens> segmented;
      for (const auto& tokens : tokenized_lines(vocab_inputs)) segmented.push_back(bpe.apply(tokens));
      const auto vocab = vagnmt::text::Vocabulary::build(segmented);
      vocab.save(vocab_output);
      log_line("vocabulary of " + std::to_string(vocab.size()) + " symbols");
    } else if (*synth_cmd) {
      synth.task = vagnmt::corpus::parse_task(synth_task);
      const auto corpus = vagnmt::corpus::synthesize_corpus(synth);
      vagnmt::corpus::write_synthetic(synth_out, corpus);
      log_line("wrote " + std::to_string(corpus.train.size()) + "/" +
               std::to_string(corpus.valid.size()) + "/" + std::to_string(corpus.test.size()) +
               " train/valid/test pairs to " + synth_out);
    } else if (*train_cmd) {
      const auto [data, config] = load_train_config(train_config, train_over);
      const auto run = vagnmt::run_training(config, data, fs::path(train_out), log_line);
      log_line("best validation BLEU " + std::to_string(run.result.best_bleu) + " at epoch " +
               std::to_string(run.result.best_epoch));
    } else if (*translate_cmd) {
      const auto model = vagnmt::load_model(tr_checkpoint);
      const auto translator = model.translator();
      const auto lines = vagnmt::text::read_lines(tr_input);
      std::optional<vagnmt::corpus::FeatureMatrix> features;
      if (!tr_features.empty()) features = vagnmt::corpus::read_features(tr_features);
      if (!translator.text_only() && !features) {
        throw vagnmt::ConfigError("--features is required unless the checkpoint is text-only");
      }
      const auto out = translator.translate_all(lines, features ? &*features : nullptr, tr_beam);
      if (tr_output.empty()) {
        for (const auto& line : out) std::cout << line << '\n';
      } else {
        vagnmt::text::write_lines(tr_output, out);
      }
    } else if (*retrieve_cmd) {
      std::vector<std::size_t> ks;
      std::stringstream ss(rt_k);
      for (std::string item; std::getline(ss, item, ',');) {
        try {
          const long k = std::stol(item);
          if (k < 1) throw std::invalid_argument("k");
          ks.push_back(static_cast<std::size_t>(k));
        } catch (const std::exception&) {
          throw vagnmt::ConfigError("--k expects positive integers, got '" + item + "'");
        }
      }
      const auto model = vagnmt::load_model(rt_checkpoint);
      const auto translator = model.translator();
      vagnmt::corpus::ParallelCorpus corpus;
      corpus.source = vagnmt::text::read_lines(rt_corpus + ".src.txt");
      corpus.features = vagnmt::corpus::read_features(rt_corpus + ".feat.vagf");
      const auto report = vagnmt::evaluate_retrieval(translator, corpus, ks);
      write_json(rt_output, vagnmt::eval::metrics_json(std::nullopt, report));
    } else if (*bleu_cmd) {
      const auto hyp = vagnmt::text::read_lines(eb_hyp);
      const auto ref = vagnmt::text::read_lines(eb_ref);
      const auto report = vagnmt::score_translations(hyp, ref, !eb_no_smoothing);
      write_json(eb_output, vagnmt::eval::metrics_json(report, std::nullopt));
    } else if (*experiment_cmd) {
      const auto [data, base] = load_train_config(ex_config, ex_over);
      const auto test_split = fs::exists(vagnmt::corpus::split_paths(data, "test").source) ? "test" : "valid";
      const auto test = vagnmt::corpus::load_split(data, test_split);
      std::vector<SeedOutcome> outcomes;
      for (std::size_t s = 0; s < ex_seeds; ++s) {
        auto config = base;
        config.seed = base.seed + s;
        const fs::path dir = fs::path(ex_out) / ("seed_" + std::to_string(config.seed));
        log_line("seed " + std::to_string(config.seed));
        const auto run = vagnmt::run_training(config, data, dir, log_line);
        const auto outcome = vagnmt::evaluate_translation(run.model.translator(), test,
                                                          config.beam_size, config.smoothing);
        vagnmt::text::write_lines(dir / (std::string(test_split) + ".hyp.txt"), outcome.translations);
        SeedOutcome o{config.seed, outcome.bleu.bleu, std::nullopt, run.result.epochs};
        if (outcome.slot_accuracy) o.slot_accuracy = outcome.slot_accuracy->value();
        write_json((dir / "metrics.json").string(),
                   vagnmt::eval::metrics_json(outcome.bleu, std::nullopt));
        outcomes.push_back(o);
      }
      std::vector<double> bleus, accs;
      json per_seed = json::array();
      for (const auto& o : outcomes) {
        bleus.push_back(o.bleu);
        json row = {{"seed", o.seed}, {"bleu", o.bleu}, {"epochs", o.epochs}};
        if (o.slot_accuracy) {
          accs.push_back(*o.slot_accuracy);
          row["ambiguous_accuracy"] = *o.slot_accuracy;
        }
        per_seed.push_back(row);
      }
      json summary = {{"split", test_split}, {"seeds", per_seed}, {"bleu", stats_json(bleus)}};
      if (!accs.empty()) summary["ambiguous_accuracy"] = stats_json(accs);
      write_json((fs::path(ex_out) / "summary.json").string(), summary);

      std::ostringstream table;
      table << "metric\tmean ± std (" << outcomes.size() << " seeds, " << test_split << ")\n";
      table << "BLEU\t" << mean_std(bleus) << '\n';
      if (!accs.empty()) table << "ambiguous accuracy\t" << mean_std(accs) << '\n';
      std::ofstream(fs::path(ex_out) / "summary.txt") << table.str();
      std::cout << table.str();
    }
  } catch (const vagnmt::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const vagnmt::ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const vagnmt::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const vagnmt::NumericDomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const vagnmt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
