#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "egpg/corpus.hpp"

namespace egpg {

// Penn-Treebank-style tags, one per token of the sentence they describe.
struct TagSequence {
  std::vector<std::string> tags;

  std::size_t size() const noexcept { return tags.size(); }
  friend bool operator==(const TagSequence&, const TagSequence&) = default;
};

TagSequence parse_tags(std::string_view line);

// Unit-cost Levenshtein distance over arbitrary comparable sequences, two
// rolling rows of the O(|a|*|b|) table.
template <typename A, typename B>
std::size_t levenshtein(const A& a, const B& b) {
  const std::size_t n = std::size(a);
  const std::size_t m = std::size(b);
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  auto ai = std::begin(a);
  for (std::size_t i = 1; i <= n; ++i, ++ai) {
    cur[0] = i;
    auto bj = std::begin(b);
    for (std::size_t j = 1; j <= m; ++j, ++bj) {
      std::size_t sub = prev[j - 1] + (*ai == *bj ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline std::size_t edit_distance(const TagSequence& a, const TagSequence& b) {
  return levenshtein(a.tags, b.tags);
}

// Pluggable POS tagger. Implementations must be deterministic and must
// return exactly one tag per token.
class Tagger {
 public:
  virtual ~Tagger() = default;
  virtual TagSequence tag(const Sentence& s) const = 0;
  virtual std::string name() const = 0;
};

// Averaged perceptron with the usual greedy left-to-right feature set
// (word shape, affixes, neighbouring words and the two previous tags).
class PerceptronTagger final : public Tagger {
 public:
  struct TaggedSentence {
    std::vector<std::string> words;
    std::vector<std::string> tags;
  };

  PerceptronTagger() = default;

  static PerceptronTagger load(std::istream& in);
  static PerceptronTagger load(const std::filesystem::path& path);
  // The model compiled into the library.
  static const PerceptronTagger& bundled();

  void train(std::span<const TaggedSentence> data, int iterations, std::uint64_t seed);
  void save(std::ostream& out) const;

  TagSequence tag(const Sentence& s) const override;
  std::vector<std::string> tag_words(std::span<const std::string> words) const;
  std::string name() const override { return "perceptron"; }

  const std::vector<std::string>& classes() const noexcept { return classes_; }

 private:
  using Features = std::vector<std::string>;

  static std::string normalize(const std::string& word);
  static Features features(std::size_t i, std::string_view word, std::span<const std::string> context,
                           std::string_view prev, std::string_view prev2);
  std::string predict(const Features& feats) const;
  void build_tagdict(std::span<const TaggedSentence> data);

  // feature -> weight per class
  std::unordered_map<std::string, std::vector<double>> weights_;
  std::unordered_map<std::string, std::string> tagdict_;
  std::vector<std::string> classes_;
};

// Pre-computed tags looked up by sentence text. Built from a corpus plus an
// aligned sidecar (one line of space-separated tags per sentence).
class SidecarTagger final : public Tagger {
 public:
  void add(const Sentence& s, TagSequence tags);
  // Tags for `sentences` read line by line from `path`.
  static SidecarTagger from_file(std::span<const Sentence> sentences, const std::filesystem::path& path);
  // Pair corpora: each line holds "source tags<TAB>target tags".
  static SidecarTagger from_pair_file(std::span<const SentencePair> pairs, const std::filesystem::path& path);

  TagSequence tag(const Sentence& s) const override;
  std::string name() const override { return "sidecar"; }
  std::size_t size() const noexcept { return table_.size(); }

 private:
  std::unordered_map<std::string, TagSequence> table_;
};

TagSequence pos_tag(const Sentence& s, const Tagger* tagger);

}  // namespace egpg
