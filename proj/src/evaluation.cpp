#include "vagnmt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "vagnmt/error.hpp"

namespace vagnmt::eval {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuReport corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                       std::span<const std::vector<std::string>> references, bool smoothing) {
  if (hypotheses.size() != references.size()) {
    throw InputError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                     std::to_string(references.size()) + " references");
  }
  if (references.empty()) throw InputError("corpus_bleu: no references");

  BleuReport r;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    r.hypothesis_length += hyp.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hyp_counts = count_ngrams(hyp, n);
      const auto ref_counts = count_ngrams(ref, n);
      for (const auto& [gram, count] : hyp_counts) {
        r.totals[n - 1] += count;
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) r.matches[n - 1] += std::min(count, it->second);
      }
    }
  }

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    double p;
    if (r.matches[n] == 0 && smoothing) {
      p = 1.0 / static_cast<double>(r.totals[n] + 1);
    } else if (r.totals[n] == 0) {
      p = 0.0;
    } else {
      p = static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
    }
    r.precisions[n] = p;
    if (p == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }

  const double c = static_cast<double>(r.hypothesis_length);
  const double ref_len = static_cast<double>(r.reference_length);
  if (c == 0.0) {
    r.brevity_penalty = 0.0;
  } else {
    r.brevity_penalty = c > ref_len ? 1.0 : std::exp(1.0 - ref_len / c);
  }
  r.bleu = zero ? 0.0 : r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

RetrievalReport report_retrieval(std::span<const std::vector<float>> text_embeddings,
                                 std::span<const std::vector<float>> image_embeddings,
                                 std::span<const std::size_t> ks) {
  RetrievalReport report;
  report.pairs = text_embeddings.size();
  const auto t2i = retrieve(text_embeddings, image_embeddings);
  const auto i2t = retrieve(image_embeddings, text_embeddings);
  for (std::size_t k : ks) {
    if (k == 0) throw ConfigError("retrieval cutoff K must be at least 1");
    report.text_to_image[k] = t2i.recall_at(k);
    report.image_to_text[k] = i2t.recall_at(k);
  }
  return report;
}

nlohmann::json metrics_json(const std::optional<BleuReport>& bleu,
                            const std::optional<RetrievalReport>& retrieval) {
  nlohmann::json j = nlohmann::json::object();
  if (bleu) {
    j["bleu"] = bleu->bleu;
    for (std::size_t n = 0; n < 4; ++n) j["p" + std::to_string(n + 1)] = bleu->precisions[n];
    j["bp"] = bleu->brevity_penalty;
    j["hyp_len"] = bleu->hypothesis_length;
    j["ref_len"] = bleu->reference_length;
  }
  if (retrieval) {
    nlohmann::json r_at = nlohmann::json::object();
    nlohmann::json i2t = nlohmann::json::object();
    for (const auto& [k, v] : retrieval->text_to_image) r_at[std::to_string(k)] = v;
    for (const auto& [k, v] : retrieval->image_to_text) i2t[std::to_string(k)] = v;
    j["r_at"] = r_at;
    j["image_to_text_r_at"] = i2t;
    j["pairs"] = retrieval->pairs;
  }
  return j;
}

}  // namespace vagnmt::eval
