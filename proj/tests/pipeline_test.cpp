#include "vagnmt/pipeline.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "model_fixture.hpp"
#include "test_util.hpp"
#include "vagnmt/checkpoint.hpp"
#include "vagnmt/error.hpp"

namespace vagnmt {
namespace {

using testing::TempDir;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const std::string& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

std::vector<std::uint32_t> bits(const ModelParams<float>& p) {
  std::vector<std::uint32_t> out;
  for (const auto& [name, t] : named_parameters(p)) {
    for (float v : t.data()) {
      std::uint32_t b;
      std::memcpy(&b, &v, 4);
      out.push_back(b);
    }
  }
  return out;
}

TEST(Checkpoint, RoundTripIsBitExactWithMetadata) {
  TempDir dir("ckpt");
  Checkpoint c{testing::tiny_model<float>(1), {{"note", "x"}, {"step", 7}}};
  c.params.decoder.b_o.mutable_data()[0] = -0.0f;
  save_checkpoint(dir.file("m.vagc"), c);
  const auto back = load_checkpoint(dir.file("m.vagc"));
  EXPECT_EQ(bits(back.params), bits(c.params));
  EXPECT_EQ(back.params.dims, c.params.dims);
  EXPECT_EQ(back.meta.at("note"), "x");
  EXPECT_EQ(back.meta.at("step"), 7);
  EXPECT_EQ(back.meta.at("dims").get<ModelDims>(), c.params.dims);
  // Saving again reproduces the file byte for byte.
  save_checkpoint(dir.file("again.vagc"), back);
  EXPECT_EQ(slurp(dir.file("m.vagc")), slurp(dir.file("again.vagc")));
}

TEST(Checkpoint, HeaderLayout) {
  TempDir dir("ckpt");
  const auto p = testing::tiny_model<float>(2);
  save_checkpoint(dir.file("m.vagc"), Checkpoint{p, {}});
  const auto bytes = slurp(dir.file("m.vagc"));
  ASSERT_GT(bytes.size(), 20u);
  EXPECT_EQ(bytes.substr(0, 4), "VAGC");
  std::uint32_t version, count;
  std::memcpy(&version, &bytes[4], 4);
  std::memcpy(&count, &bytes[8], 4);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(count, named_parameters(p).size());
  std::uint16_t name_len;
  std::memcpy(&name_len, &bytes[12], 2);
  EXPECT_EQ(bytes.substr(14, name_len), named_parameters(p).front().first);
}

TEST(Checkpoint, CorruptionIsAFormatError) {
  TempDir dir("ckpt");
  save_checkpoint(dir.file("m.vagc"), Checkpoint{testing::tiny_model<float>(3), {}});
  const auto good = slurp(dir.file("m.vagc"));
  const auto expect_bad = [&](const std::string& bytes, const char* what) {
    dump(dir.file("bad.vagc"), bytes);
    EXPECT_THROW(load_checkpoint(dir.file("bad.vagc")), FormatError) << what;
  };
  std::string magic = good;
  magic[3] = 'F';
  expect_bad(magic, "magic");
  std::string version = good;
  version[4] = 9;
  expect_bad(version, "version");
  expect_bad(good.substr(0, good.size() / 2), "truncated");
  expect_bad(good + "z", "trailing");
  std::string count = good;
  count[8] = static_cast<char>(count[8] - 1);
  expect_bad(count, "missing tensor");
  std::string name = good;
  name[14] = 'X';
  expect_bad(name, "unknown tensor");
  std::string trailer = good;
  trailer[trailer.size() - 1] = '{';
  expect_bad(trailer, "json");
}

TEST(Checkpoint, ShapeMismatchIsAFormatError) {
  TempDir dir("ckpt");
  auto p = testing::tiny_model<float>(4);
  Checkpoint c{p, {}};
  save_checkpoint(dir.file("m.vagc"), c);
  auto bytes = slurp(dir.file("m.vagc"));
  // Claim different dims in the trailer than the tensors carry.
  auto dims = p.dims;
  dims.hidden += 1;
  nlohmann::json meta = {{"dims", dims}};
  const std::string trailer = meta.dump();
  const auto old_len_pos = bytes.rfind(nlohmann::json{{"dims", p.dims}}.dump()) - 4;
  bytes.resize(old_len_pos);
  const auto n = static_cast<std::uint32_t>(trailer.size());
  bytes.append(reinterpret_cast<const char*>(&n), 4);
  bytes += trailer;
  dump(dir.file("bad.vagc"), bytes);
  EXPECT_THROW(load_checkpoint(dir.file("bad.vagc")), FormatError);
}

TEST(Preprocessor, FramingAndRoundTrip) {
  const std::vector<std::string> src = {"the river bank", "the money bank", "a bank"};
  const std::vector<std::string> tgt = {"la rive", "la banque", "une banque"};
  const auto pre = Preprocessor::fit(src, tgt, 20);
  const auto s = pre.encode_source("the river bank");
  ASSERT_FALSE(s.empty());
  EXPECT_EQ(s.back(), text::Vocabulary::kEos);
  const auto t = pre.encode_target("la banque");
  EXPECT_EQ(t.front(), text::Vocabulary::kBos);
  EXPECT_EQ(t.back(), text::Vocabulary::kEos);
  const std::vector<int> inner(t.begin() + 1, t.end() - 1);
  EXPECT_EQ(pre.decode(inner), "la banque");

  const auto back = Preprocessor::from_json(pre.to_json());
  EXPECT_EQ(back.encode_source("the money bank"), pre.encode_source("the money bank"));
  EXPECT_EQ(back.encode_target("une rive"), pre.encode_target("une rive"));
  EXPECT_EQ(back.source_vocab.size(), pre.source_vocab.size());
  EXPECT_EQ(back.target_vocab.size(), pre.target_vocab.size());
}

TEST(Preprocessor, UnseenWordsMapToUnknown) {
  const std::vector<std::string> lines = {"ab ab", "ab"};
  const auto pre = Preprocessor::fit(lines, lines, 5);
  const auto s = pre.encode_source("zz");
  EXPECT_NE(std::find(s.begin(), s.end(), text::Vocabulary::kUnk), s.end());
}

TEST(Preprocessor, PerLanguageByDefaultJointOnRequest) {
  const std::vector<std::string> src = {"aaaa aaaa aaaa", "aaaa aaaa"};
  const std::vector<std::string> tgt = {"bbbb bbbb bbbb", "bbbb bbbb"};
  const auto per = Preprocessor::fit(src, tgt, 10);
  const auto learn = [](const std::vector<std::string>& lines) {
    std::vector<text::Tokens> toks;
    for (const auto& l : lines) toks.push_back(text::tokenize(l));
    return text::BpeModel::learn(toks, 10);
  };
  EXPECT_EQ(per.source_bpe.merges(), learn(src).merges());
  EXPECT_EQ(per.target_bpe.merges(), learn(tgt).merges());
  EXPECT_NE(per.source_bpe.merges(), per.target_bpe.merges());

  const auto joint = Preprocessor::fit(src, tgt, 10, true);
  std::vector<std::string> both = src;
  both.insert(both.end(), tgt.begin(), tgt.end());
  EXPECT_EQ(joint.source_bpe.merges(), joint.target_bpe.merges());
  EXPECT_EQ(joint.source_bpe.merges(), learn(both).merges());
  EXPECT_EQ(Preprocessor::from_json(joint.to_json()).target_bpe.merges(),
            joint.target_bpe.merges());
}

TEST(Score, RetokenizesBothSides) {
  const std::vector<std::string> hyp = {"a  b c d"};
  const std::vector<std::string> ref = {"a b c d"};
  EXPECT_DOUBLE_EQ(score_translations(hyp, ref, true).bleu, 1.0);
}

corpus::SynthCorpus small_copy_corpus() {
  corpus::SynthSpec spec;
  spec.train = 16;
  spec.valid = 4;
  spec.test = 4;
  spec.vocab = 10;
  spec.max_length = 4;
  spec.feature_dim = 8;
  return corpus::synthesize_corpus(spec);
}

TrainConfig small_config() {
  TrainConfig c;
  c.dims.embed = 8;
  c.dims.hidden = 12;
  c.dims.shared = 6;
  c.dims.visual_attention = 5;
  c.dims.decoder_attention = 5;
  c.dims.output = 8;
  c.batch_size = 4;
  c.max_epochs = 3;
  c.beam_size = 3;
  c.bpe_merges = 30;
  c.learning_rate = 5e-3;
  return c;
}

TEST(RunTraining, WritesArtifactsAndReloadReproducesTranslations) {
  TempDir dir("run");
  const auto data = small_copy_corpus();
  corpus::write_synthetic(dir.path() / "data", data);
  std::vector<std::string> log;
  const auto run = run_training(small_config(), dir.path() / "data", dir.path() / "out",
                                [&](const std::string& line) { log.push_back(line); });
  EXPECT_EQ(log.size(), run.result.epochs);
  for (const char* f : {"model.vagc", "history.csv", "bpe.src", "bpe.tgt", "vocab.src", "vocab.tgt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "out" / f)) << f;
  }
  EXPECT_EQ(text::read_lines(dir.path() / "out" / "history.csv").size(), run.result.epochs + 1);

  const auto loaded = load_model(dir.path() / "out" / "model.vagc");
  EXPECT_EQ(bits(loaded.params), bits(run.model.params));
  EXPECT_EQ(nlohmann::json(loaded.config), nlohmann::json(run.model.config));
  const auto a = run.model.translator();
  const auto b = loaded.translator();
  const auto ta = a.translate_all(data.test.source, &data.test.features, 3);
  const auto tb = b.translate_all(data.test.source, &data.test.features, 3);
  EXPECT_EQ(ta, tb);
  const auto oa = evaluate_translation(a, data.valid, 3, true);
  const auto ob = evaluate_translation(b, data.valid, 3, true);
  EXPECT_EQ(oa.bleu.bleu, ob.bleu.bleu);
  EXPECT_NEAR(oa.bleu.bleu, run.result.best_bleu, 1e-12);

  const auto ckpt = load_checkpoint(dir.path() / "out" / "model.vagc");
  EXPECT_EQ(ckpt.meta.at("epoch").get<std::size_t>(), run.result.best_epoch);
  EXPECT_EQ(ckpt.meta.at("step").get<std::size_t>(), run.result.steps);
}

TEST(RunTraining, SameSeedSameModel) {
  const auto data = small_copy_corpus();
  auto config = small_config();
  config.max_epochs = 2;
  const auto a = run_training(config, data.train, data.valid, std::nullopt);
  const auto b = run_training(config, data.train, data.valid, std::nullopt);
  EXPECT_EQ(bits(a.model.params), bits(b.model.params));
  EXPECT_EQ(a.result.history.size(), b.result.history.size());
  for (std::size_t i = 0; i < a.result.history.size(); ++i) {
    EXPECT_EQ(a.result.history[i].J, b.result.history[i].J);
  }
}

TEST(RunTraining, TextOnlyModelTranslatesWithoutFeatures) {
  const auto data = small_copy_corpus();
  auto config = small_config();
  config.max_epochs = 1;
  config.ablation.text_only = true;
  const auto run = run_training(config, data.train, data.valid, std::nullopt);
  const auto t = run.model.translator();
  EXPECT_EQ(t.translate_all(data.test.source, nullptr, 2).size(), data.test.size());
  EXPECT_EQ(t.translate_all(data.test.source, nullptr, 2),
            t.translate_all(data.test.source, &data.test.features, 2));
}

TEST(Translator, GroundedModelNeedsAlignedFeatures) {
  const auto data = small_copy_corpus();
  auto config = small_config();
  config.max_epochs = 1;
  const auto run = run_training(config, data.train, data.valid, std::nullopt);
  const auto t = run.model.translator();
  EXPECT_THROW(t.translate_all(data.test.source, nullptr, 1), InputError);
  EXPECT_THROW(t.translate_all(data.test.source, &data.train.features, 1), AlignmentError);
  const auto emb = t.embed_all(data.test.source, data.test.features);
  ASSERT_EQ(emb.text.size(), data.test.size());
  EXPECT_EQ(emb.text.front().size(), config.dims.shared);
  EXPECT_EQ(emb.image.front().size(), config.dims.shared);
  const std::vector<std::size_t> ks = {1, 2};
  const auto r = evaluate_retrieval(t, data.test, ks);
  EXPECT_EQ(r.pairs, data.test.size());
}

TEST(Translator, BeamOneEqualsGreedy) {
  const auto data = small_copy_corpus();
  auto config = small_config();
  config.max_epochs = 2;
  const auto run = run_training(config, data.train, data.valid, std::nullopt);
  const auto& m = run.model;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto src = m.pre.encode_source(data.test.source[i]);
    const auto enc = encode_for_inference(m.params, src, data.test.features.row(i),
                                          m.config.grounding(), false);
    const auto greedy = greedy_decode(m.params.decoder, enc.s0, enc.states, default_max_len(src.size()));
    EXPECT_EQ(m.translator().translate_indices(src, data.test.features.row(i), 1), greedy);
  }
}

TEST(Checkpoint, VocabularyMismatchIsRejected) {
  const auto data = small_copy_corpus();
  auto config = small_config();
  config.max_epochs = 1;
  auto run = run_training(config, data.train, data.valid, std::nullopt);
  auto ckpt = to_checkpoint(run.model);
  ckpt.meta["preprocessing"] = Preprocessor::fit(std::vector<std::string>{"q"},
                                                 std::vector<std::string>{"r"}, 1)
                                   .to_json();
  EXPECT_THROW(from_checkpoint(ckpt), FormatError);
  ckpt.meta.erase("config");
  EXPECT_THROW(from_checkpoint(ckpt), FormatError);
}

}  // namespace
}  // namespace vagnmt
