#pragma once

// Corpus BLEU-4 and retrieval recall reporting.

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vagnmt/grounding.hpp"

namespace vagnmt::eval {

struct BleuReport {
  double bleu = 0.0;
  std::array<double, 4> precisions{};  // after smoothing, if enabled
  double brevity_penalty = 0.0;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;
  std::array<std::size_t, 4> matches{};  // clipped n-gram matches
  std::array<std::size_t, 4> totals{};   // hypothesis n-gram counts
};

// Corpus-level BLEU-4 with clipped counts against one reference per
// sentence. With smoothing, an order with no matches uses (0 + 1) / (total + 1).
BleuReport corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                       std::span<const std::vector<std::string>> references, bool smoothing = true);

// R@K for the listed cutoffs in both directions.
struct RetrievalReport {
  std::map<std::size_t, double> text_to_image;
  std::map<std::size_t, double> image_to_text;
  std::size_t pairs = 0;
};

RetrievalReport report_retrieval(std::span<const std::vector<float>> text_embeddings,
                                 std::span<const std::vector<float>> image_embeddings,
                                 std::span<const std::size_t> ks);

// {bleu, p1..p4, bp, r_at: {1, 5, 10}}; absent parts are omitted.
nlohmann::json metrics_json(const std::optional<BleuReport>& bleu,
                            const std::optional<RetrievalReport>& retrieval);

}  // namespace vagnmt::eval
