#include "vagnmt/decoder.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "gradcheck.hpp"
#include "markov_toy.hpp"
#include "model_fixture.hpp"
#include "reference.hpp"
#include "test_util.hpp"
#include "vagnmt/beam.hpp"
#include "vagnmt/error.hpp"
#include "vagnmt/text.hpp"

namespace vagnmt {
namespace {

using testing::check_gradients;
using testing::GraphD;
using testing::random_tensor;
using testing::TensorD;
using testing::enumerate;
using testing::markov_from_probs;
using testing::markov_greedy;
using testing::MarkovModel;
using testing::random_markov;

constexpr double kTol = 1e-3;
constexpr int kBos = text::Vocabulary::kBos;
constexpr int kEos = text::Vocabulary::kEos;

struct Fixture {
  ModelParams<double> model;
  TensorD s0;
  TensorD H;
};

Fixture make_fixture(std::uint64_t seed, std::size_t n = 4) {
  auto model = testing::tiny_model<double>(seed);
  Rng rng(seed + 100);
  const std::size_t h = model.decoder.hidden();
  return {model, random_tensor({1, h}, rng), random_tensor({n, 2 * h}, rng)};
}

TEST(Decoder, SequenceLossMatchesScalarReference) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto f = make_fixture(seed, 1 + seed);
    const std::vector<int> target = {kBos, 4, 5, 3, kEos};
    GraphD g;
    const double loss =
        sequence_loss(g, f.model.decoder, f.s0, f.H, target, ForwardContext::inference()).item();
    const double expect = testing::reference_sequence_loss(
        f.model.decoder, testing::row_of(f.s0, 0), f.H, target);
    EXPECT_NEAR(loss, expect, 1e-10 * std::max(1.0, expect));
  }
}

TEST(Decoder, StepMatchesReferenceAndIsNormalized) {
  const auto f = make_fixture(7, 5);
  GraphD g;
  const auto& p = f.model.decoder;
  const auto memory = prepare_attention(g, p, f.H);
  const int prev = 4;
  const auto step = cgru_step(g, p, f.s0, std::span<const int>(&prev, 1), memory,
                              ForwardContext::inference());
  const auto log_probs = output_distribution(g, p, step.embedded, step.state, step.context,
                                             ForwardContext::inference());
  const auto ref = testing::reference_decoder_step(p, testing::row_of(f.s0, 0), prev, f.H);
  double weight_sum = 0, prob_sum = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(step.weights.at(i), ref.weights[i], 1e-12);
    weight_sum += step.weights.at(i);
  }
  for (std::size_t j = 0; j < p.hidden(); ++j) EXPECT_NEAR(step.state.at(j), ref.state[j], 1e-12);
  for (std::size_t v = 0; v < p.vocab_size(); ++v) {
    EXPECT_NEAR(log_probs.at(v), ref.log_probs[v], 1e-12);
    prob_sum += std::exp(log_probs.at(v));
  }
  EXPECT_NEAR(weight_sum, 1.0, 1e-12);
  EXPECT_NEAR(prob_sum, 1.0, 1e-12);
}

TEST(Decoder, BatchedRowsMatchSingleRows) {
  const auto f = make_fixture(8);
  Rng rng(8);
  const auto& p = f.model.decoder;
  const auto states = random_tensor({3, p.hidden()}, rng);
  const std::vector<int> prev = {1, 4, 5};
  GraphD g;
  const auto memory = prepare_attention(g, p, f.H);
  const auto ctx = ForwardContext::inference();
  const auto batch = cgru_step(g, p, states, prev, memory, ctx);
  const auto batch_lp = output_distribution(g, p, batch.embedded, batch.state, batch.context, ctx);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto single = cgru_step(g, p, g.row(states, r), std::span<const int>(&prev[r], 1), memory, ctx);
    const auto lp = output_distribution(g, p, single.embedded, single.state, single.context, ctx);
    for (std::size_t v = 0; v < p.vocab_size(); ++v) EXPECT_NEAR(batch_lp.at(r, v), lp.at(v), 1e-13);
  }
}

TEST(Decoder, SequenceLossIsPositiveAndAdditive) {
  const auto f = make_fixture(9);
  const auto& p = f.model.decoder;
  GraphD g;
  const auto ctx = ForwardContext::inference();
  const std::vector<int> target = {kBos, 4, 5, kEos};
  const double full = sequence_loss(g, p, f.s0, f.H, target, ctx).item();
  EXPECT_GT(full, 0.0);
  // Splitting the sum: first term alone plus the rest from the carried state.
  const auto ref1 = testing::reference_decoder_step(p, testing::row_of(f.s0, 0), kBos, f.H);
  const double first = -ref1.log_probs[4];
  const double rest = testing::reference_sequence_loss(p, ref1.state, f.H, {4, 5, kEos});
  EXPECT_NEAR(full, first + rest, 1e-10);
}

TEST(Decoder, TooShortTargetThrows) {
  const auto f = make_fixture(10);
  GraphD g;
  const std::vector<int> target = {kBos};
  EXPECT_THROW(sequence_loss(g, f.model.decoder, f.s0, f.H, target, ForwardContext::inference()),
               InputError);
}

TEST(Decoder, MismatchedShapesThrow) {
  const auto f = make_fixture(11);
  GraphD g;
  Rng rng(11);
  EXPECT_THROW(prepare_attention(g, f.model.decoder, random_tensor({3, 5}, rng)), DimensionError);
  const auto memory = prepare_attention(g, f.model.decoder, f.H);
  const std::vector<int> two = {1, 4};
  EXPECT_THROW(cgru_step(g, f.model.decoder, f.s0, two, memory, ForwardContext::inference()),
               DimensionError);
}

TEST(Decoder, DropoutOnlyWhenTraining) {
  const auto f = make_fixture(12);
  const std::vector<int> target = {kBos, 4, 5, kEos};
  GraphD g;
  const double a = sequence_loss(g, f.model.decoder, f.s0, f.H, target, ForwardContext::inference()).item();
  ForwardContext eval;
  eval.dropout = {0.9, 0.9, 0.9};
  const double b = sequence_loss(g, f.model.decoder, f.s0, f.H, target, eval).item();
  EXPECT_EQ(a, b);
  Rng rng(1);
  ForwardContext train;
  train.training = true;
  train.rng = &rng;
  const double c = sequence_loss(g, f.model.decoder, f.s0, f.H, target, train).item();
  EXPECT_NE(a, c);
}

TEST(Decoder, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {13u, 14u}) {
    auto f = make_fixture(seed, 3);
    const auto& p = f.model.decoder;
    std::vector<TensorD> leaves = {p.embedding, p.gru1.W, p.gru1.b, p.gru1.U_gates, p.gru1.U_cand,
                                   p.U_a, p.W_a, p.b_a, p.v_a, p.gru2.W, p.gru2.b, p.gru2.U_gates,
                                   p.gru2.U_cand, p.W_e, p.W_d, p.W_c, p.b_o, p.W_o, p.b_vocab,
                                   f.s0, f.H};
    const std::vector<int> target = {kBos, 4, 3, 5, kEos};
    const auto report = check_gradients(leaves, [&](GraphD& g) {
      return sequence_loss(g, p, f.s0, f.H, target, ForwardContext::inference());
    });
    EXPECT_TRUE(report.ok(kTol)) << report.worst;
    EXPECT_GT(report.checked, 200u);
  }
}

TEST(Decoder, DefaultMaxLength) {
  EXPECT_EQ(default_max_len(0), 5u);
  EXPECT_EQ(default_max_len(10), 35u);
}

TEST(BeamSearch, WideBeamMatchesExhaustiveSearch) {
  Rng rng(20);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_markov(rng);
    const auto expect = enumerate(m, 4);
    const auto got = beam_search(m, MarkovModel::kToyBos, MarkovModel::kToyEos, 1000, 4);
    ASSERT_TRUE(got.finished);
    EXPECT_EQ(got.tokens, expect.tokens);
    EXPECT_NEAR(got.score, expect.score, 1e-12);
  }
}

TEST(BeamSearch, BeamOneIsGreedyOnToys) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_markov(rng);
    const auto got = beam_search(m, MarkovModel::kToyBos, MarkovModel::kToyEos, 1, 6);
    EXPECT_EQ(got.tokens, markov_greedy(m, 6));
  }
}

TEST(BeamSearch, BeamTwoFindsWhatGreedyMisses) {
  // Greedy takes token 0 (p 0.5) then EOS (0.4): normalized log(0.2)/2.
  // Token 1 (p 0.4) then EOS (0.97) scores log(0.388)/2.
  auto m = markov_from_probs({{0.2, 0.2, 0.2, 0.4},
                              {0.01, 0.01, 0.01, 0.97},
                              {0.25, 0.25, 0.25, 0.25},
                              {0.25, 0.25, 0.25, 0.25},
                              {0.5, 0.4, 0.05, 0.05}});
  EXPECT_EQ(markov_greedy(m, 5), (std::vector<int>{0}));
  const auto one = beam_search(m, MarkovModel::kToyBos, MarkovModel::kToyEos, 1, 5);
  const auto two = beam_search(m, MarkovModel::kToyBos, MarkovModel::kToyEos, 2, 5);
  EXPECT_EQ(one.tokens, (std::vector<int>{0}));
  EXPECT_EQ(two.tokens, (std::vector<int>{1}));
  EXPECT_NEAR(two.score, std::log(0.4 * 0.97) / 2.0, 1e-12);
  EXPECT_GT(two.score, one.score);
}

TEST(BeamSearch, StopsAtMaxLengthWithoutEos) {
  // EOS is never likely; the best unfinished hypothesis is returned.
  auto m = markov_from_probs({{0.7, 0.2, 0.09, 0.01},
                              {0.7, 0.2, 0.09, 0.01},
                              {0.7, 0.2, 0.09, 0.01},
                              {0.25, 0.25, 0.25, 0.25},
                              {0.7, 0.2, 0.09, 0.01}});
  const auto r = beam_search(m, MarkovModel::kToyBos, MarkovModel::kToyEos, 1, 3);
  EXPECT_FALSE(r.finished);
  EXPECT_EQ(r.tokens, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(m.steps, 3);
}

TEST(BeamSearch, ImmediateEosGivesEmptyOutput) {
  auto m = markov_from_probs({{0.25, 0.25, 0.25, 0.25},
                              {0.25, 0.25, 0.25, 0.25},
                              {0.25, 0.25, 0.25, 0.25},
                              {0.25, 0.25, 0.25, 0.25},
                              {0.01, 0.01, 0.01, 0.97}});
  const auto r = beam_search(m, MarkovModel::kToyBos, MarkovModel::kToyEos, 1, 10);
  EXPECT_TRUE(r.finished);
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_NEAR(r.score, std::log(0.97), 1e-12);
}

TEST(BeamSearch, ScoreIsLogProbOverLengthWithEos) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_markov(rng);
    const auto r = beam_search(m, MarkovModel::kToyBos, MarkovModel::kToyEos, 3, 5);
    if (!r.finished) continue;
    double lp = 0;
    int prev = MarkovModel::kToyBos;
    for (int t : r.tokens) {
      lp += m.table[prev][t];
      prev = t;
    }
    lp += m.table[prev][MarkovModel::kToyEos];
    EXPECT_NEAR(r.log_prob, lp, 1e-12);
    EXPECT_NEAR(r.score, lp / static_cast<double>(r.tokens.size() + 1), 1e-12);
  }
}

TEST(BeamSearch, DecoderBeamOneEqualsGreedy) {
  for (std::uint64_t seed = 30; seed < 50; ++seed) {
    auto model = testing::tiny_model<float>(seed);
    Rng rng(seed);
    const std::size_t h = model.decoder.hidden();
    const auto s0 = random_tensor<float>({1, h}, rng, 1.0, false);
    const auto H = random_tensor<float>({3, 2 * h}, rng, 1.0, false);
    const auto beam = beam_search(model.decoder, s0, H, 1, 12);
    EXPECT_EQ(beam.tokens, greedy_decode(model.decoder, s0, H, 12)) << "seed " << seed;
  }
}

TEST(BeamSearch, DecoderIsDeterministicAndBounded) {
  auto model = testing::tiny_model<float>(60);
  Rng rng(60);
  const std::size_t h = model.decoder.hidden();
  const auto s0 = random_tensor<float>({1, h}, rng, 1.0, false);
  const auto H = random_tensor<float>({4, 2 * h}, rng, 1.0, false);
  for (std::size_t beam : {1u, 3u, 12u}) {
    const auto a = beam_search(model.decoder, s0, H, beam, 7);
    const auto b = beam_search(model.decoder, s0, H, beam, 7);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.score, b.score);
    EXPECT_LE(a.tokens.size(), 7u);
    for (int t : a.tokens) EXPECT_NE(t, kEos);
  }
}

}  // namespace
}  // namespace vagnmt
