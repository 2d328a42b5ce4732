#pragma once

// Parallel corpora with aligned image features, the VAGF feature file format,
// and the synthetic task generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vagnmt::corpus {

// Row-major count x dim matrix of image features.
struct FeatureMatrix {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  bool operator==(const FeatureMatrix&) const = default;
};

// VAGF: "VAGF", u32 version = 1, u32 count, u32 dim, then count*dim f32, all
// little-endian.
inline constexpr char kFeatureMagic[4] = {'V', 'A', 'G', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

void write_features(const std::filesystem::path& path, const FeatureMatrix& features);
// Throws FormatError on a bad header or payload size, and on non-finite values.
FeatureMatrix read_features(const std::filesystem::path& path);

struct ParallelCorpus {
  std::vector<std::string> source;
  std::vector<std::string> target;
  FeatureMatrix features;

  std::size_t size() const { return source.size(); }
};

// Line i of both text files pairs with feature row i. Throws AlignmentError
// when the three counts differ.
ParallelCorpus load_corpus(const std::filesystem::path& source_path,
                           const std::filesystem::path& target_path,
                           const std::filesystem::path& feature_path);

// {dir}/{split}.src.txt, {split}.tgt.txt, {split}.feat.vagf
struct SplitPaths {
  std::filesystem::path source, target, features;
};
SplitPaths split_paths(const std::filesystem::path& dir, std::string_view split);
ParallelCorpus load_split(const std::filesystem::path& dir, std::string_view split);
void write_split(const std::filesystem::path& dir, std::string_view split,
                 const ParallelCorpus& corpus);

enum class SynthTask { kCopy, kReverse, kAmbiguous };

SynthTask parse_task(std::string_view name);
std::string_view task_name(SynthTask task);

// The ambiguous source word and its two target-side senses.
inline constexpr std::string_view kAmbiguousWord = "bank";
inline constexpr std::string_view kSenseWords[2] = {"riverbank", "moneybank"};

struct SynthSpec {
  SynthTask task = SynthTask::kCopy;
  std::size_t train = 50;
  std::size_t valid = 0;  // 0 means max(4, train / 4)
  std::size_t test = 0;   // 0 means max(4, train / 4)
  std::size_t vocab = 30;
  std::size_t min_length = 3;
  std::size_t max_length = 8;
  std::size_t feature_dim = 2048;
  std::size_t clusters = 4;  // copy and reverse; the ambiguous task uses one per sense
  double noise = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthCorpus {
  ParallelCorpus train, valid, test;
};

// Copy and reverse: each image is the centroid of cluster (i mod clusters)
// plus a content signature (the sum of fixed per-word random vectors over
// the sentence, divided by sqrt(length)) plus Gaussian noise.
//
// Ambiguous: every source holds the word "bank" once and appears twice, once
// per sense; the target copies the source with "bank" replaced by the sense
// word, and the image is the sense centroid plus noise. The text alone
// therefore cannot do better than one sense out of two.
SynthCorpus synthesize_corpus(const SynthSpec& spec);

// Writes train, valid and test splits under dir.
void write_synthetic(const std::filesystem::path& dir, const SynthCorpus& corpus);

// Among references that contain a sense word, the fraction whose hypothesis
// contains the same sense word and not the other one.
struct SlotAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;

  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};
SlotAccuracy ambiguous_slot_accuracy(std::span<const std::vector<std::string>> hypotheses,
                                     std::span<const std::vector<std::string>> references);

}  // namespace vagnmt::corpus
