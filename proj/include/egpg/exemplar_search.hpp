#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "egpg/corpus.hpp"
#include "egpg/syntax.hpp"

namespace egpg {

// Pool indices bucketed by sentence length. Candidates for a target of length
// L live in buckets L-2 .. L+2, so only those are visited.
class LengthIndex {
 public:
  LengthIndex() = default;
  explicit LengthIndex(std::span<const Sentence> pool);

  const std::map<std::size_t, std::vector<std::size_t>>& buckets() const noexcept { return buckets_; }
  std::size_t pool_size() const noexcept { return pool_size_; }

  // Buckets whose length is within `window` of `length`, in ascending length.
  std::vector<const std::vector<std::size_t>*> window(std::size_t length, std::size_t window = 2) const;

 private:
  std::map<std::size_t, std::vector<std::size_t>> buckets_;
  std::size_t pool_size_ = 0;
};

// Throws EmptyInputError on an empty pool.
LengthIndex build_index(std::span<const Sentence> pool);

// Number of distinct token types the two sentences share.
std::size_t shared_word_count(const Sentence& a, const Sentence& b);

// |len(C) - len(Y)| <= 2 and shared_word_count(C, Y) + 2 <= len(Y).
bool is_candidate(const Sentence& candidate, const Sentence& target);

struct ExemplarMatch {
  std::size_t index = 0;
  std::size_t distance = 0;

  friend bool operator==(const ExemplarMatch&, const ExemplarMatch&) = default;
};

// The candidate with the smallest tag edit distance to the target; ties go to
// the lowest pool index. pool_tags[i] describes pool[i].
std::optional<ExemplarMatch> find_exemplar(const Sentence& target, const TagSequence& target_tags,
                                           std::span<const Sentence> pool, std::span<const TagSequence> pool_tags,
                                           const LengthIndex& index,
                                           std::optional<std::size_t> exclude = std::nullopt);

struct MiningOptions {
  std::size_t workers = 1;
  // Exclude pair i's own source (pool index i) from its candidates. Only
  // meaningful when the pool is the source side of `pairs`.
  bool exclude_own_source = true;
};

struct MiningResult {
  std::vector<Triple> triples;
  std::vector<std::size_t> pair_index;      // input pair of each triple
  std::vector<ExemplarMatch> matches;       // chosen exemplar of each triple
  std::size_t dropped = 0;

  double mean_distance() const;
};

// Runs find_exemplar for every pair against `pool` (normally the sources of
// `pairs`). Output order follows input order regardless of `workers`.
MiningResult mine_corpus(std::span<const SentencePair> pairs, std::span<const Sentence> pool,
                         const Tagger& tagger, const MiningOptions& options = {});

// Same, with tags already computed: target_tags[i] for pairs[i].target.
MiningResult mine_corpus(std::span<const SentencePair> pairs, std::span<const Sentence> pool,
                         std::span<const TagSequence> pool_tags, std::span<const TagSequence> target_tags,
                         const MiningOptions& options = {});

}  // namespace egpg
