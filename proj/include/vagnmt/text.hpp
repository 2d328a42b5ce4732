#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vagnmt::text {

using Tokens = std::vector<std::string>;

bool is_valid_utf8(std::string_view text);

// Lowercases, splits punctuation into standalone tokens and splits on
// whitespace. Throws EncodingError on malformed UTF-8.
Tokens tokenize(std::string_view text);

std::string join(std::span<const std::string> tokens, std::string_view sep = " ");

// Learned byte-pair-encoding merges over UTF-8 characters. Non-final pieces
// of a segmented word carry the "@@" continuation marker.
class BpeModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  static constexpr std::string_view kMarker = "@@";
  static constexpr std::string_view kHeader = "#version: vagnmt-bpe-1";

  BpeModel() = default;
  explicit BpeModel(std::vector<Merge> merges);

  // Greedy most-frequent-pair merging. Ties go to the lexicographically
  // smallest pair; learning stops early once no pair occurs twice.
  static BpeModel learn(std::span<const Tokens> corpus, std::size_t num_merges);

  const std::vector<Merge>& merges() const { return merges_; }

  // Pieces of one word, without markers.
  std::vector<std::string> segment_word(std::string_view word) const;
  // Subwords for a token list, with markers on non-final pieces.
  Tokens apply(std::span<const std::string> tokens) const;

  std::string serialize() const;
  static BpeModel parse(std::string_view contents);
  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

 private:
  std::vector<Merge> merges_;
  std::unordered_map<std::string, std::size_t> ranks_;  // "left right" -> order
};

// Inverse of BpeModel::apply followed by space-joining.
std::string postprocess(std::span<const std::string> subwords);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::array<std::string_view, 4> kReserved = {"<pad>", "<s>", "</s>", "<unk>"};

  Vocabulary();
  // Reserved entries followed by the given tokens in order.
  explicit Vocabulary(std::span<const std::string> tokens);

  // Every symbol of the segmented corpus, most frequent first, ties by token.
  static Vocabulary build(std::span<const Tokens> segmented_corpus);

  std::size_t size() const { return tokens_.size(); }
  int index(std::string_view token) const;
  const std::string& token(int index) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> numericalize(std::span<const std::string> subwords, bool add_bos_eos) const;
  // Maps indices back to symbols, dropping PAD/BOS/EOS.
  Tokens symbols(std::span<const int> indices) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

}  // namespace vagnmt::text
