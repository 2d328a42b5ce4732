#include "vagnmt/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vagnmt/error.hpp"

namespace vagnmt::text {

namespace {

// Decodes one code point starting at text[pos]; returns 0 length on error.
std::size_t decode(std::string_view text, std::size_t pos, char32_t& cp) {
  const auto byte = [&](std::size_t i) { return static_cast<unsigned char>(text[i]); };
  const unsigned char lead = byte(pos);
  std::size_t len;
  char32_t min;
  if (lead < 0x80) {
    cp = lead;
    return 1;
  } else if ((lead & 0xE0) == 0xC0) {
    len = 2, cp = lead & 0x1F, min = 0x80;
  } else if ((lead & 0xF0) == 0xE0) {
    len = 3, cp = lead & 0x0F, min = 0x800;
  } else if ((lead & 0xF8) == 0xF0) {
    len = 4, cp = lead & 0x07, min = 0x10000;
  } else {
    return 0;
  }
  if (pos + len > text.size()) return 0;
  for (std::size_t i = 1; i < len; ++i) {
    if ((byte(pos + i) & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (byte(pos + i) & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  return len;
}

void encode(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

std::vector<std::string> characters(std::string_view word) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < word.size()) {
    char32_t cp;
    std::size_t len = decode(word, pos, cp);
    if (len == 0) len = 1;  // pass stray bytes through as their own symbol
    out.emplace_back(word.substr(pos, len));
    pos += len;
  }
  return out;
}

bool is_space(char32_t c) {
  return c == ' ' || (c >= 0x09 && c <= 0x0D) || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  return c == 0xA1 || c == 0xAB || c == 0xB7 || c == 0xBB || c == 0xBF ||
         (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || c == 0x3001 ||
         c == 0x3002;
}

char32_t lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 0x20;
  if (c < 0xC0) return c;
  if (c <= 0xDE && c != 0xD7) return c + 0x20;
  if (c >= 0x100 && c <= 0x137) return c | 1;
  if (c >= 0x139 && c <= 0x148) return (c & 1) ? c + 1 : c;
  if (c >= 0x14A && c <= 0x177) return c | 1;
  if (c == 0x178) return 0xFF;
  if (c >= 0x179 && c <= 0x17E) return (c & 1) ? c + 1 : c;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 0x20;
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;
  if (c >= 0x410 && c <= 0x42F) return c + 0x20;
  return c;
}

std::string pair_key(std::string_view left, std::string_view right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key.append(left).append(" ").append(right);
  return key;
}

}  // namespace

bool is_valid_utf8(std::string_view text) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    char32_t cp;
    const std::size_t len = decode(text, pos, cp);
    if (len == 0) return false;
    pos += len;
  }
  return true;
}

Tokens tokenize(std::string_view text) {
  Tokens tokens;
  std::string current;
  const auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    char32_t cp;
    const std::size_t len = decode(text, pos, cp);
    if (len == 0) throw EncodingError("invalid UTF-8 at byte offset " + std::to_string(pos));
    pos += len;
    if (is_space(cp)) {
      flush();
    } else if (is_punct(cp)) {
      flush();
      std::string symbol;
      encode(cp, symbol);
      tokens.push_back(std::move(symbol));
    } else {
      encode(lower(cp), current);
    }
  }
  flush();
  return tokens;
}

std::string join(std::span<const std::string> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// BPE

BpeModel::BpeModel(std::vector<Merge> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    ranks_.emplace(pair_key(merges_[i].first, merges_[i].second), i);
  }
}

BpeModel BpeModel::learn(std::span<const Tokens> corpus, std::size_t num_merges) {
  std::map<std::string, long> word_counts;
  for (const Tokens& sentence : corpus) {
    for (const std::string& word : sentence) ++word_counts[word];
  }
  if (word_counts.empty()) throw InputError("learn_bpe: empty corpus");

  struct Word {
    std::vector<std::string> symbols;
    long freq;
  };
  std::vector<Word> words;
  for (const auto& [word, count] : word_counts) words.push_back({characters(word), count});

  using Pair = std::pair<std::string, std::string>;
  std::map<Pair, long> counts;
  std::map<Pair, std::set<std::size_t>> where;
  // Ordered by descending count, then ascending pair.
  std::set<std::pair<long, Pair>, std::less<>> ranked;
  const auto bump = [&](const Pair& p, long delta) {
    long& c = counts[p];
    if (c > 0) ranked.erase({-c, p});
    c += delta;
    if (c > 0) ranked.insert({-c, p});
  };
  const auto visit = [&](std::size_t id, long sign) {
    const Word& w = words[id];
    for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
      Pair p{w.symbols[i], w.symbols[i + 1]};
      bump(p, sign * w.freq);
      if (sign > 0) {
        where[p].insert(id);
      } else {
        where[p].erase(id);
      }
    }
  };
  for (std::size_t id = 0; id < words.size(); ++id) visit(id, +1);

  std::vector<Merge> merges;
  while (merges.size() < num_merges && !ranked.empty()) {
    const auto [neg_count, best] = *ranked.begin();
    if (-neg_count < 2) break;
    const std::string merged = best.first + best.second;
    const std::set<std::size_t> affected = where[best];
    for (std::size_t id : affected) {
      visit(id, -1);
      auto& syms = words[id].symbols;
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
      visit(id, +1);
    }
    merges.push_back(best);
  }
  return BpeModel(std::move(merges));
}

std::vector<std::string> BpeModel::segment_word(std::string_view word) const {
  std::vector<std::string> symbols = characters(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = SIZE_MAX;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const auto it = ranks_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != ranks_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == SIZE_MAX) break;
    const Merge& m = merges_[best_rank];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == m.first && symbols[i + 1] == m.second) {
        next.push_back(m.first + m.second);
        ++i;
      } else {
        next.push_back(std::move(symbols[i]));
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

Tokens BpeModel::apply(std::span<const std::string> tokens) const {
  Tokens out;
  for (const std::string& token : tokens) {
    auto pieces = segment_word(token);
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (i + 1 < pieces.size()) pieces[i].append(kMarker);
      out.push_back(std::move(pieces[i]));
    }
  }
  return out;
}

std::string BpeModel::serialize() const {
  std::string out(kHeader);
  out += '\n';
  for (const auto& [left, right] : merges_) out.append(left).append(" ").append(right).append("\n");
  return out;
}

BpeModel BpeModel::parse(std::string_view contents) {
  std::istringstream in{std::string(contents)};
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw FormatError("BPE model: missing header '" + std::string(kHeader) + "'");
  }
  std::vector<Merge> merges;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 == line.size() ||
        line.find(' ', space + 1) != std::string::npos) {
      throw FormatError("BPE model: malformed merge on line " + std::to_string(line_no));
    }
    merges.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  return BpeModel(std::move(merges));
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << serialize();
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string postprocess(std::span<const std::string> subwords) {
  std::string out;
  bool glue = false;  // previous piece carried the marker
  for (const std::string& piece : subwords) {
    if (!out.empty() && !glue) out += ' ';
    const bool marked = piece.size() >= BpeModel::kMarker.size() &&
                        piece.ends_with(BpeModel::kMarker);
    out.append(piece, 0, marked ? piece.size() - BpeModel::kMarker.size() : piece.size());
    glue = marked;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  for (std::string_view r : kReserved) add(std::string(r));
}

Vocabulary::Vocabulary(std::span<const std::string> tokens) : Vocabulary() {
  for (const std::string& t : tokens) {
    if (contains(t)) throw FormatError("vocabulary: duplicate token '" + t + "'");
    add(t);
  }
}

void Vocabulary::add(const std::string& token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const Tokens> segmented_corpus) {
  std::map<std::string, long> counts;
  for (const Tokens& sentence : segmented_corpus) {
    for (const std::string& s : sentence) ++counts[s];
  }
  std::vector<std::pair<std::string, long>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [token, count] : ordered) {
    if (!vocab.contains(token)) vocab.add(token);
  }
  return vocab;
}

int Vocabulary::index(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= tokens_.size()) {
    throw InputError("vocabulary index " + std::to_string(index) + " out of range");
  }
  return tokens_[index];
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

std::vector<int> Vocabulary::numericalize(std::span<const std::string> subwords,
                                          bool add_bos_eos) const {
  std::vector<int> out;
  out.reserve(subwords.size() + 2);
  if (add_bos_eos) out.push_back(kBos);
  for (const std::string& s : subwords) out.push_back(index(s));
  if (add_bos_eos) out.push_back(kEos);
  return out;
}

Tokens Vocabulary::symbols(std::span<const int> indices) const {
  Tokens out;
  for (int i : indices) {
    if (i == kPad || i == kBos || i == kEos) continue;
    out.push_back(token(i));
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const { write_lines(path, tokens_); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  if (lines.size() < kReserved.size()) throw FormatError("vocabulary file too short: " + path.string());
  for (std::size_t i = 0; i < kReserved.size(); ++i) {
    if (lines[i] != kReserved[i]) {
      throw FormatError("vocabulary line " + std::to_string(i) + " must be '" +
                        std::string(kReserved[i]) + "'");
    }
  }
  return Vocabulary(std::span(lines).subspan(kReserved.size()));
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const std::string& line : lines) out << line << '\n';
}

}  // namespace vagnmt::text
