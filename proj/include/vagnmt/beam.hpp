#pragma once

// Beam search over any step model that scores a batch of hypotheses at once.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace vagnmt {

// Row-major {rows, vocab} log-probabilities for the next token.
struct StepScores {
  std::size_t rows = 0;
  std::size_t vocab = 0;
  std::vector<double> log_probs;

  double at(std::size_t row, std::size_t token) const { return log_probs[row * vocab + token]; }
};

// initial() yields the one-row start state; step() advances every row given
// its previous token; select() keeps the listed rows (repeats allowed).
template <class M>
concept BeamModel = requires(M& m, const typename M::State& state, std::span<const int> tokens,
                             std::span<const std::size_t> rows) {
  { m.initial() } -> std::same_as<typename M::State>;
  { m.step(state, tokens) } -> std::same_as<std::pair<typename M::State, StepScores>>;
  { m.select(state, rows) } -> std::same_as<typename M::State>;
};

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens, EOS included when finished
  double log_prob = 0.0;
  std::size_t state_row = 0;
  bool finished = false;

  double normalized_score() const {
    return tokens.empty() ? 0.0 : log_prob / static_cast<double>(tokens.size());
  }
};

struct BeamResult {
  std::vector<int> tokens;  // without EOS
  double log_prob = 0.0;
  double score = 0.0;  // log_prob divided by generated length (EOS counted)
  bool finished = false;
};

// Each finished hypothesis shrinks the live beam by one. Returns the finished
// hypothesis with the best length-normalized score, or the best unfinished
// one when nothing finished within max_len steps. Candidate ties resolve to
// the lower row, then the lower token index, so beam size 1 is exactly greedy
// argmax decoding.
template <BeamModel M>
BeamResult beam_search(M& model, int bos, int eos, std::size_t beam_size, std::size_t max_len) {
  beam_size = std::max<std::size_t>(beam_size, 1);
  max_len = std::max<std::size_t>(max_len, 1);

  std::vector<Hypothesis> live = {Hypothesis{}};
  std::vector<Hypothesis> finished;
  auto state = model.initial();
  std::vector<int> previous = {bos};

  struct Candidate {
    double log_prob;
    std::size_t row;
    int token;
  };
  const auto better = [](const Candidate& a, const Candidate& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    if (a.row != b.row) return a.row < b.row;
    return a.token < b.token;
  };

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    auto [next_state, scores] = model.step(state, previous);
    std::vector<Candidate> candidates;
    candidates.reserve(live.size() * scores.vocab);
    for (std::size_t r = 0; r < live.size(); ++r) {
      for (std::size_t v = 0; v < scores.vocab; ++v) {
        candidates.push_back({live[r].log_prob + scores.at(r, v), r, static_cast<int>(v)});
      }
    }
    const std::size_t keep = std::min(beam_size - finished.size(), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);

    std::vector<Hypothesis> next_live;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = candidates[i];
      Hypothesis h;
      h.tokens = live[c.row].tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      if (c.token == eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.state_row = next_live.size();
        rows.push_back(c.row);
        next_live.push_back(std::move(h));
      }
    }
    live = std::move(next_live);
    if (live.empty() || finished.size() >= beam_size) break;
    state = model.select(next_state, rows);
    previous.clear();
    for (const Hypothesis& h : live) previous.push_back(h.tokens.back());
  }

  const std::vector<Hypothesis>& pool = finished.empty() ? live : finished;
  const auto best = std::max_element(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    return a.normalized_score() < b.normalized_score();
  });
  BeamResult result;
  result.tokens = best->tokens;
  result.log_prob = best->log_prob;
  result.score = best->normalized_score();
  result.finished = best->finished;
  if (result.finished) result.tokens.pop_back();
  return result;
}

}  // namespace vagnmt
