// Runs the vagnmt executable end to end.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "test_util.hpp"
#include "vagnmt/corpus.hpp"
#include "vagnmt/decoder.hpp"
#include "vagnmt/pipeline.hpp"
#include "vagnmt/text.hpp"

namespace vagnmt {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

struct Result {
  int code;
  std::string err;
};

Result run(const TempDir& dir, const std::string& args) {
  const std::string err = dir.file("stderr.txt");
  const std::string cmd = std::string(VAGNMT_CLI) + " " + args + " > " + dir.file("stdout.txt") +
                          " 2> " + err;
  const int status = std::system(cmd.c_str());
  std::ifstream in(err);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, {std::istreambuf_iterator<char>(in), {}}};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

nlohmann::json small_config(const fs::path& data) {
  return {{"data", data.string()},
          {"dims", {{"embed", 8}, {"hidden", 12}, {"shared", 6}, {"visual_attention", 5},
                    {"decoder_attention", 5}, {"output", 8}}},
          {"batch_size", 4},
          {"max_epochs", 3},
          {"beam_size", 3},
          {"bpe_merges", 30},
          {"learning_rate", 5e-3}};
}

std::string synth_args(const TempDir& dir, const std::string& out) {
  return "synth --task copy --n 16 --vocab 10 --max-len 4 --feature-dim 8 --seed 5 --out " +
         dir.file(out);
}

TEST(Cli, UsageErrorsExitOne) {
  TempDir dir("cli");
  EXPECT_EQ(run(dir, "").code, 1);
  EXPECT_EQ(run(dir, "frobnicate").code, 1);
  const auto r = run(dir, "eval-bleu --hyp " + dir.file("missing") + " --ref " + dir.file("missing"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_EQ(run(dir, "synth --task copy --bogus 1 --out " + dir.file("x")).code, 1);
  EXPECT_EQ(run(dir, "synth --task nonsense --out " + dir.file("x")).code, 1);
}

TEST(Cli, EvalBleuIdentical) {
  TempDir dir("cli");
  write(dir.file("h.txt"), "the cat sat on the mat\na dog ran in the park\n");
  ASSERT_EQ(run(dir, "eval-bleu --hyp " + dir.file("h.txt") + " --ref " + dir.file("h.txt")).code, 0);
  const auto j = nlohmann::json::parse(slurp(dir.file("stdout.txt")));
  EXPECT_DOUBLE_EQ(j.at("bleu").get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j.at("bp").get<double>(), 1.0);
}

TEST(Cli, EvalBleuLineCountMismatchIsADataError) {
  TempDir dir("cli");
  write(dir.file("h.txt"), "a b\n");
  write(dir.file("r.txt"), "a b\nc d\n");
  const auto r = run(dir, "eval-bleu --hyp " + dir.file("h.txt") + " --ref " + dir.file("r.txt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, SynthIsDeterministic) {
  TempDir dir("cli");
  ASSERT_EQ(run(dir, synth_args(dir, "a")).code, 0);
  ASSERT_EQ(run(dir, synth_args(dir, "b")).code, 0);
  for (const char* split : {"train", "valid", "test"}) {
    const auto a = corpus::split_paths(dir.path() / "a", split);
    const auto b = corpus::split_paths(dir.path() / "b", split);
    EXPECT_EQ(slurp(a.source.string()), slurp(b.source.string())) << split;
    EXPECT_EQ(slurp(a.target.string()), slurp(b.target.string())) << split;
    EXPECT_EQ(slurp(a.features.string()), slurp(b.features.string())) << split;
  }
  EXPECT_EQ(corpus::load_split(dir.path() / "a", "train").size(), 16u);
}

TEST(Cli, LearnBpeAndBuildVocab) {
  TempDir dir("cli");
  write(dir.file("t.txt"), "lower lowest newer newest\nlow new\n");
  ASSERT_EQ(run(dir, "learn-bpe --input " + dir.file("t.txt") + " --merges 5 --output " +
                         dir.file("m.bpe")).code, 0);
  const auto bpe = text::BpeModel::load(dir.file("m.bpe"));
  EXPECT_EQ(bpe.merges().size(), 5u);
  ASSERT_EQ(run(dir, "build-vocab --input " + dir.file("t.txt") + " --bpe " + dir.file("m.bpe") +
                         " --output " + dir.file("v.txt")).code, 0);
  std::vector<text::Tokens> segmented;
  for (const auto& line : text::read_lines(dir.file("t.txt"))) {
    segmented.push_back(bpe.apply(text::tokenize(line)));
  }
  text::Vocabulary::build(segmented).save(dir.file("expected.txt"));
  EXPECT_EQ(slurp(dir.file("v.txt")), slurp(dir.file("expected.txt")));
}

TEST(Cli, TrainTranslateRetrieve) {
  TempDir dir("cli");
  ASSERT_EQ(run(dir, synth_args(dir, "data")).code, 0);
  write(dir.file("c.json"), small_config(dir.path() / "data").dump());
  ASSERT_EQ(run(dir, "train --config " + dir.file("c.json") + " --out " + dir.file("out")).code, 0);
  const std::string ckpt = dir.file("out/model.vagc");
  ASSERT_TRUE(fs::exists(ckpt));
  ASSERT_TRUE(fs::exists(dir.file("out/history.csv")));

  const auto valid = corpus::split_paths(dir.path() / "data", "valid");
  const auto model = load_model(ckpt);
  const auto data = corpus::load_split(dir.path() / "data", "valid");

  // beam 1 against the library's greedy decoder
  ASSERT_EQ(run(dir, "translate --checkpoint " + ckpt + " --input " + valid.source.string() +
                         " --features " + valid.features.string() + " --beam 1 --output " +
                         dir.file("greedy.txt")).code, 0);
  const auto lines = text::read_lines(dir.file("greedy.txt"));
  ASSERT_EQ(lines.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto src = model.pre.encode_source(data.source[i]);
    const auto enc = encode_for_inference(model.params, src, data.features.row(i),
                                          model.config.grounding(), false);
    const auto greedy = greedy_decode(model.params.decoder, enc.s0, enc.states,
                                      default_max_len(src.size()));
    EXPECT_EQ(lines[i], model.pre.decode(greedy)) << i;
  }

  // translating the validation split at the training beam reproduces the best BLEU
  ASSERT_EQ(run(dir, "translate --checkpoint " + ckpt + " --input " + valid.source.string() +
                         " --features " + valid.features.string() + " --beam 3 --output " +
                         dir.file("hyp.txt")).code, 0);
  ASSERT_EQ(run(dir, "eval-bleu --hyp " + dir.file("hyp.txt") + " --ref " + valid.target.string() +
                         " --output " + dir.file("bleu.json")).code, 0);
  const auto bleu = nlohmann::json::parse(slurp(dir.file("bleu.json"))).at("bleu").get<double>();
  const auto history = text::read_lines(dir.file("out/history.csv"));
  ASSERT_EQ(history.front(), "epoch,J,J_T,J_V,val_bleu");
  double best = -1;
  for (std::size_t r = 1; r < history.size(); ++r) {
    best = std::max(best, std::stod(history[r].substr(history[r].rfind(',') + 1)));
  }
  EXPECT_NEAR(bleu, best, 1e-8);

  // grounded checkpoints need features
  EXPECT_EQ(run(dir, "translate --checkpoint " + ckpt + " --input " + valid.source.string()).code, 1);

  ASSERT_EQ(run(dir, "retrieve --checkpoint " + ckpt + " --corpus " +
                         (dir.path() / "data" / "valid").string() + " --k 1,2,4").code, 0);
  const auto rr = nlohmann::json::parse(slurp(dir.file("stdout.txt")));
  EXPECT_LE(rr.at("r_at").at("1").get<double>(), rr.at("r_at").at("2").get<double>());
  EXPECT_DOUBLE_EQ(rr.at("r_at").at("4").get<double>(), 1.0);
  EXPECT_EQ(run(dir, "retrieve --checkpoint " + ckpt + " --corpus " +
                         (dir.path() / "data" / "valid").string() + " --k 0").code, 1);

  // a damaged checkpoint is a data error
  auto bytes = slurp(ckpt);
  bytes[0] = 'X';
  std::ofstream(dir.file("bad.vagc"), std::ios::binary) << bytes;
  EXPECT_EQ(run(dir, "translate --checkpoint " + dir.file("bad.vagc") + " --input " +
                         valid.source.string() + " --features " + valid.features.string()).code, 2);
}

TEST(Cli, TrainIsDeterministicAndTextOnlyNeedsNoFeatures) {
  TempDir dir("cli");
  ASSERT_EQ(run(dir, synth_args(dir, "data")).code, 0);
  write(dir.file("c.json"), small_config(dir.path() / "data").dump());
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(run(dir, "train --config " + dir.file("c.json") + " --out " + dir.file(out)).code, 0);
  }
  EXPECT_EQ(slurp(dir.file("a/model.vagc")), slurp(dir.file("b/model.vagc")));

  ASSERT_EQ(run(dir, "train --config " + dir.file("c.json") + " --text-only --max-epochs 1 --out " +
                         dir.file("t")).code, 0);
  const auto valid = corpus::split_paths(dir.path() / "data", "valid");
  EXPECT_EQ(run(dir, "translate --checkpoint " + dir.file("t/model.vagc") + " --input " +
                         valid.source.string()).code, 0);
  EXPECT_EQ(text::read_lines(dir.file("stdout.txt")).size(), 4u);
}

TEST(Cli, ConfigErrorsExitOne) {
  TempDir dir("cli");
  ASSERT_EQ(run(dir, synth_args(dir, "data")).code, 0);
  auto c = small_config(dir.path() / "data");
  c["alpha"] = 2.0;
  write(dir.file("bad.json"), c.dump());
  EXPECT_EQ(run(dir, "train --config " + dir.file("bad.json") + " --out " + dir.file("o")).code, 1);
  c = small_config(dir.path() / "data");
  c["learning_rat"] = 0.1;
  write(dir.file("typo.json"), c.dump());
  const auto r = run(dir, "train --config " + dir.file("typo.json") + " --out " + dir.file("o"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("learning_rat"), std::string::npos);
  write(dir.file("broken.json"), "{");
  EXPECT_EQ(run(dir, "train --config " + dir.file("broken.json") + " --out " + dir.file("o")).code, 1);
  c = small_config(dir.path() / "nowhere");
  write(dir.file("nodata.json"), c.dump());
  EXPECT_EQ(run(dir, "train --config " + dir.file("nodata.json") + " --out " + dir.file("o")).code, 2);
}

TEST(Cli, ExperimentReportsMeanAndStd) {
  TempDir dir("cli");
  ASSERT_EQ(run(dir, synth_args(dir, "data")).code, 0);
  auto c = small_config(dir.path() / "data");
  c["max_epochs"] = 2;
  write(dir.file("c.json"), c.dump());
  ASSERT_EQ(run(dir, "experiment --config " + dir.file("c.json") + " --seeds 3 --out " +
                         dir.file("ex")).code, 0);
  const auto s = nlohmann::json::parse(slurp(dir.file("ex/summary.json")));
  EXPECT_EQ(s.at("seeds").size(), 3u);
  EXPECT_TRUE(std::isfinite(s.at("bleu").at("std").get<double>()));
  const auto& values = s.at("bleu").at("values");
  double mean = 0;
  for (const auto& v : values) mean += v.get<double>() / 3.0;
  EXPECT_NEAR(s.at("bleu").at("mean").get<double>(), mean, 1e-12);
  EXPECT_TRUE(fs::exists(dir.file("ex/summary.txt")));
}

}  // namespace
}  // namespace vagnmt
