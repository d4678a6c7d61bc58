#include "egpg/exemplar_search.hpp"

#include <set>
#include <string_view>

#include "egpg/error.hpp"
#include "egpg/util.hpp"

namespace egpg {

LengthIndex::LengthIndex(std::span<const Sentence> pool) : pool_size_(pool.size()) {
  for (std::size_t i = 0; i < pool.size(); ++i) buckets_[pool[i].size()].push_back(i);
}

std::vector<const std::vector<std::size_t>*> LengthIndex::window(std::size_t length, std::size_t window) const {
  std::vector<const std::vector<std::size_t>*> out;
  std::size_t lo = length > window ? length - window : 0;
  for (auto it = buckets_.lower_bound(lo); it != buckets_.end() && it->first <= length + window; ++it) {
    out.push_back(&it->second);
  }
  return out;
}

LengthIndex build_index(std::span<const Sentence> pool) {
  if (pool.empty()) throw EmptyInputError("exemplar pool is empty");
  return LengthIndex(pool);
}

std::size_t shared_word_count(const Sentence& a, const Sentence& b) {
  std::set<std::string_view> left(a.tokens().begin(), a.tokens().end());
  std::set<std::string_view> right(b.tokens().begin(), b.tokens().end());
  std::size_t n = 0;
  for (auto t : left) n += right.count(t);
  return n;
}

bool is_candidate(const Sentence& candidate, const Sentence& target) {
  std::size_t lc = candidate.size(), ly = target.size();
  std::size_t diff = lc > ly ? lc - ly : ly - lc;
  if (diff > 2) return false;
  return shared_word_count(candidate, target) + 2 <= ly;
}

std::optional<ExemplarMatch> find_exemplar(const Sentence& target, const TagSequence& target_tags,
                                           std::span<const Sentence> pool, std::span<const TagSequence> pool_tags,
                                           const LengthIndex& index, std::optional<std::size_t> exclude) {
  if (pool_tags.size() != pool.size()) throw InputError("pool and pool tag counts differ");
  if (index.pool_size() != pool.size()) throw InputError("length index was built over a different pool");
  std::optional<ExemplarMatch> best;
  for (const auto* bucket : index.window(target.size())) {
    for (std::size_t i : *bucket) {
      if (exclude && *exclude == i) continue;
      if (!is_candidate(pool[i], target)) continue;
      std::size_t d = edit_distance(pool_tags[i], target_tags);
      if (!best || d < best->distance || (d == best->distance && i < best->index)) best = ExemplarMatch{i, d};
    }
  }
  return best;
}

double MiningResult::mean_distance() const {
  if (matches.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& m : matches) sum += static_cast<double>(m.distance);
  return sum / static_cast<double>(matches.size());
}

MiningResult mine_corpus(std::span<const SentencePair> pairs, std::span<const Sentence> pool,
                         std::span<const TagSequence> pool_tags, std::span<const TagSequence> target_tags,
                         const MiningOptions& options) {
  if (target_tags.size() != pairs.size()) throw InputError("target tag count differs from pair count");
  const auto index = build_index(pool);
  std::vector<std::optional<ExemplarMatch>> found(pairs.size());
  parallel_for(pairs.size(), options.workers, [&](std::size_t i) {
    std::optional<std::size_t> exclude;
    if (options.exclude_own_source && i < pool.size()) exclude = i;
    found[i] = find_exemplar(pairs[i].target, target_tags[i], pool, pool_tags, index, exclude);
  });
  MiningResult result;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!found[i]) {
      ++result.dropped;
      continue;
    }
    result.triples.push_back(Triple{pairs[i].source, pairs[i].target, pool[found[i]->index]});
    result.pair_index.push_back(i);
    result.matches.push_back(*found[i]);
  }
  if (result.dropped > 0) {
    log_info("exemplar mining dropped " + std::to_string(result.dropped) + " pair(s) with no candidate");
  }
  return result;
}

MiningResult mine_corpus(std::span<const SentencePair> pairs, std::span<const Sentence> pool, const Tagger& tagger,
                         const MiningOptions& options) {
  std::vector<TagSequence> pool_tags(pool.size());
  std::vector<TagSequence> target_tags(pairs.size());
  parallel_for(pool.size(), options.workers, [&](std::size_t i) { pool_tags[i] = pos_tag(pool[i], &tagger); });
  parallel_for(pairs.size(), options.workers,
               [&](std::size_t i) { target_tags[i] = pos_tag(pairs[i].target, &tagger); });
  return mine_corpus(pairs, pool, pool_tags, target_tags, options);
}

}  // namespace egpg
