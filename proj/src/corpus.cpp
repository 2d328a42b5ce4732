#include "vagnmt/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "vagnmt/error.hpp"
#include "vagnmt/random.hpp"
#include "vagnmt/text.hpp"

namespace vagnmt::corpus {

static_assert(std::endian::native == std::endian::little,
              "feature files are read and written with native little-endian layout");

namespace fs = std::filesystem;

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::ifstream& in, const fs::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError("truncated feature header in " + path.string());
  }
  return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw FormatError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

std::string word(std::size_t i) {
  static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::string w;
  w += kConsonants[i % kConsonants.size()];
  w += kVowels[(i / kConsonants.size()) % kVowels.size()];
  w += kConsonants[(i * 5 + 3) % kConsonants.size()];
  w += kVowels[(i * 7 + 2) % kVowels.size()];
  const std::size_t block = kConsonants.size() * kVowels.size();
  if (i >= block) w += std::to_string(i / block);
  return w;
}

std::vector<float> gaussian_vector(Rng& rng, std::size_t dim, double scale = 1.0) {
  std::vector<float> v(dim);
  for (float& x : v) x = static_cast<float>(scale * rng.normal());
  return v;
}

struct Generator {
  const SynthSpec& spec;
  Rng rng;
  std::vector<std::string> words;
  std::vector<std::vector<float>> centroids;
  std::vector<std::vector<float>> word_vectors;
  std::set<std::vector<std::size_t>> used;

  explicit Generator(const SynthSpec& s) : spec(s), rng(s.seed) {
    for (std::size_t i = 0; i < spec.vocab; ++i) words.push_back(word(i));
    const std::size_t n_centroids = spec.task == SynthTask::kAmbiguous ? 2 : spec.clusters;
    for (std::size_t c = 0; c < n_centroids; ++c) {
      centroids.push_back(gaussian_vector(rng, spec.feature_dim));
    }
    for (std::size_t i = 0; i < spec.vocab; ++i) {
      word_vectors.push_back(gaussian_vector(rng, spec.feature_dim));
    }
  }

  // A sentence of word ids not produced before by this generator.
  std::vector<std::size_t> fresh_sentence(std::size_t min_len, std::size_t max_len) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const std::size_t len = min_len + rng.below(max_len - min_len + 1);
      std::vector<std::size_t> ids(len);
      for (auto& id : ids) id = rng.below(spec.vocab);
      if (used.insert(ids).second) return ids;
    }
    throw ConfigError("synthetic generator ran out of distinct sentences; raise vocab or length");
  }

  std::vector<float> noisy(const std::vector<float>& base) {
    std::vector<float> v = base;
    for (float& x : v) x += static_cast<float>(spec.noise * rng.normal());
    return v;
  }

  std::string render(const std::vector<std::size_t>& ids) {
    std::vector<std::string> toks;
    for (auto id : ids) toks.push_back(words[id]);
    return text::join(toks);
  }

  ParallelCorpus split(std::size_t n, std::size_t first_index) {
    ParallelCorpus out;
    out.features.dim = spec.feature_dim;
    if (spec.task == SynthTask::kAmbiguous) {
      for (std::size_t i = 0; i < n / 2; ++i) {
        auto ids = fresh_sentence(spec.min_length - 1, spec.max_length - 1);
        const std::size_t slot = rng.below(ids.size() + 1);
        std::vector<std::string> toks;
        for (auto id : ids) toks.push_back(words[id]);
        for (std::size_t sense = 0; sense < 2; ++sense) {
          auto src = toks;
          auto tgt = toks;
          src.insert(src.begin() + static_cast<std::ptrdiff_t>(slot), std::string(kAmbiguousWord));
          tgt.insert(tgt.begin() + static_cast<std::ptrdiff_t>(slot),
                     std::string(kSenseWords[sense]));
          out.source.push_back(text::join(src));
          out.target.push_back(text::join(tgt));
          const auto f = noisy(centroids[sense]);
          out.features.values.insert(out.features.values.end(), f.begin(), f.end());
        }
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        auto ids = fresh_sentence(spec.min_length, spec.max_length);
        out.source.push_back(render(ids));
        auto rev = ids;
        if (spec.task == SynthTask::kReverse) std::reverse(rev.begin(), rev.end());
        out.target.push_back(render(rev));

        std::vector<float> base = centroids[(first_index + i) % centroids.size()];
        const double norm = 1.0 / std::sqrt(static_cast<double>(ids.size()));
        for (auto id : ids) {
          for (std::size_t d = 0; d < base.size(); ++d) {
            base[d] += static_cast<float>(norm * word_vectors[id][d]);
          }
        }
        const auto f = noisy(base);
        out.features.values.insert(out.features.values.end(), f.begin(), f.end());
      }
    }
    out.features.count = out.source.size();
    return out;
  }
};

std::size_t default_split(std::size_t requested, std::size_t train) {
  return requested != 0 ? requested : std::max<std::size_t>(4, train / 4);
}

}  // namespace

void write_features(const fs::path& path, const FeatureMatrix& features) {
  if (features.values.size() != features.count * features.dim) {
    throw DimensionError("feature matrix holds " + std::to_string(features.values.size()) +
                         " values, expected " + std::to_string(features.count) + " x " +
                         std::to_string(features.dim));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kFeatureMagic, 4);
  put_u32(out, kFeatureVersion);
  put_u32(out, checked_u32(features.count, "feature count"));
  put_u32(out, checked_u32(features.dim, "feature dimension"));
  out.write(reinterpret_cast<const char*>(features.values.data()),
            static_cast<std::streamsize>(features.values.size() * sizeof(float)));
  if (!out) throw InputError("failed writing " + path.string());
}

FeatureMatrix read_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw FormatError(path.string() + " is not a VAGF feature file (bad magic)");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kFeatureVersion) {
    throw FormatError(path.string() + ": unsupported VAGF version " + std::to_string(version));
  }
  FeatureMatrix out;
  out.count = get_u32(in, path);
  out.dim = get_u32(in, path);
  const std::size_t header = 16;
  const auto expected = header + out.count * out.dim * sizeof(float);
  const auto actual = fs::file_size(path);
  if (actual != expected) {
    throw FormatError(path.string() + ": payload holds " + std::to_string(actual) +
                      " bytes, header implies " + std::to_string(expected));
  }
  out.values.resize(out.count * out.dim);
  in.read(reinterpret_cast<char*>(out.values.data()),
          static_cast<std::streamsize>(out.values.size() * sizeof(float)));
  if (!in) throw FormatError("truncated feature payload in " + path.string());
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (!std::isfinite(out.values[i])) {
      throw FormatError(path.string() + ": non-finite value in feature row " +
                        std::to_string(out.dim == 0 ? 0 : i / out.dim));
    }
  }
  return out;
}

ParallelCorpus load_corpus(const fs::path& source_path, const fs::path& target_path,
                           const fs::path& feature_path) {
  ParallelCorpus out;
  out.source = text::read_lines(source_path);
  out.target = text::read_lines(target_path);
  out.features = read_features(feature_path);
  if (out.source.size() != out.target.size() || out.source.size() != out.features.count) {
    throw AlignmentError("corpus misaligned: " + std::to_string(out.source.size()) +
                         " source lines, " + std::to_string(out.target.size()) +
                         " target lines, " + std::to_string(out.features.count) +
                         " feature rows");
  }
  return out;
}

SplitPaths split_paths(const fs::path& dir, std::string_view split) {
  const std::string s(split);
  return {dir / (s + ".src.txt"), dir / (s + ".tgt.txt"), dir / (s + ".feat.vagf")};
}

ParallelCorpus load_split(const fs::path& dir, std::string_view split) {
  const auto paths = split_paths(dir, split);
  return load_corpus(paths.source, paths.target, paths.features);
}

void write_split(const fs::path& dir, std::string_view split, const ParallelCorpus& corpus) {
  const auto paths = split_paths(dir, split);
  text::write_lines(paths.source, corpus.source);
  text::write_lines(paths.target, corpus.target);
  write_features(paths.features, corpus.features);
}

SynthTask parse_task(std::string_view name) {
  if (name == "copy") return SynthTask::kCopy;
  if (name == "reverse") return SynthTask::kReverse;
  if (name == "ambiguous") return SynthTask::kAmbiguous;
  throw ConfigError("unknown synthetic task '" + std::string(name) +
                    "' (expected copy, reverse or ambiguous)");
}

std::string_view task_name(SynthTask task) {
  switch (task) {
    case SynthTask::kCopy: return "copy";
    case SynthTask::kReverse: return "reverse";
    case SynthTask::kAmbiguous: return "ambiguous";
  }
  return "copy";
}

void SynthSpec::validate() const {
  if (train < 4) throw ConfigError("synthetic corpus needs at least 4 training pairs");
  if (vocab < 2) throw ConfigError("synthetic vocabulary needs at least 2 words");
  if (min_length < 1 || min_length > max_length) {
    throw ConfigError("synthetic sentence lengths need 1 <= min_length <= max_length");
  }
  if (feature_dim == 0) throw ConfigError("feature dimension must be positive");
  if (!(noise >= 0.0)) throw ConfigError("feature noise must be nonnegative");
  if (task == SynthTask::kAmbiguous) {
    if (min_length < 2) throw ConfigError("ambiguous sentences need min_length >= 2");
    for (std::size_t n : {train, valid, test}) {
      if (n % 2 != 0) throw ConfigError("ambiguous split sizes must be even (one pair per sense)");
    }
  } else if (clusters == 0) {
    throw ConfigError("need at least one feature cluster");
  }
}

SynthCorpus synthesize_corpus(const SynthSpec& spec) {
  SynthSpec s = spec;
  s.valid = default_split(spec.valid, spec.train);
  s.test = default_split(spec.test, spec.train);
  if (s.task == SynthTask::kAmbiguous) {
    s.valid += s.valid % 2;
    s.test += s.test % 2;
  }
  s.validate();
  Generator gen(s);
  SynthCorpus out;
  out.train = gen.split(s.train, 0);
  out.valid = gen.split(s.valid, s.train);
  out.test = gen.split(s.test, s.train + s.valid);
  return out;
}

void write_synthetic(const fs::path& dir, const SynthCorpus& corpus) {
  fs::create_directories(dir);
  write_split(dir, "train", corpus.train);
  write_split(dir, "valid", corpus.valid);
  write_split(dir, "test", corpus.test);
}

SlotAccuracy ambiguous_slot_accuracy(std::span<const std::vector<std::string>> hypotheses,
                                     std::span<const std::vector<std::string>> references) {
  if (hypotheses.size() != references.size()) {
    throw InputError("ambiguous_slot_accuracy: " + std::to_string(hypotheses.size()) +
                     " hypotheses vs " + std::to_string(references.size()) + " references");
  }
  const auto contains = [](const std::vector<std::string>& toks, std::string_view w) {
    return std::find(toks.begin(), toks.end(), w) != toks.end();
  };
  SlotAccuracy acc;
  for (std::size_t i = 0; i < references.size(); ++i) {
    for (std::size_t sense = 0; sense < 2; ++sense) {
      if (!contains(references[i], kSenseWords[sense])) continue;
      ++acc.total;
      if (contains(hypotheses[i], kSenseWords[sense]) &&
          !contains(hypotheses[i], kSenseWords[1 - sense])) {
        ++acc.correct;
      }
      break;
    }
  }
  return acc;
}

}  // namespace vagnmt::corpus
