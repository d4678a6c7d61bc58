#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace egpg {

inline constexpr std::size_t kDefaultMaxLen = 15;

// A tokenized, lowercased sentence. Built through tokenize() or
// Sentence::from_tokens(), both of which reject empty input.
class Sentence {
 public:
  Sentence() = default;

  static Sentence from_tokens(std::vector<std::string> tokens);

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  const std::string& operator[](std::size_t i) const { return tokens_[i]; }

  std::string text() const;

  friend bool operator==(const Sentence&, const Sentence&) = default;

 private:
  std::vector<std::string> tokens_;
};

struct Triple {
  Sentence source;
  Sentence target;
  Sentence exemplar;
};

struct SentencePair {
  Sentence source;
  Sentence target;
};

// Whitespace split + lowercase. Throws EmptyInputError when nothing is left.
Sentence tokenize(std::string_view text);

// Keeps the first min(size, max_len) tokens. max_len must be >= 1.
Sentence truncate(const Sentence& s, std::size_t max_len);

using TokenId = std::int32_t;
using IdSequence = std::vector<TokenId>;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kSos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;

  // Specials only.
  Vocabulary();

  // Rebuilds from an id-ordered token list whose first four entries are the
  // special symbols.
  static Vocabulary from_tokens(std::vector<std::string> id_to_token);

  std::size_t size() const noexcept { return id_to_token_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return id_to_token_; }

  // Stable digest of the id -> token mapping, stored in checkpoints.
  std::string hash() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  void add(std::string token);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

const std::vector<std::string>& special_tokens();

// Specials first, then tokens with count >= min_freq by descending count,
// ties broken lexicographically. Throws EmptyInputError on an empty corpus.
Vocabulary build_vocabulary(std::span<const Sentence> corpus, std::size_t min_freq = 1);

IdSequence encode(const Sentence& s, const Vocabulary& v, bool add_eos = false);

// Inverse of encode. Stops at the first EOS and drops PAD/SOS.
std::vector<std::string> decode(std::span<const TokenId> ids, const Vocabulary& v);

enum class RecordFormat { kJsonl, kTsv };

// Picks the format from the extension (.tsv / anything else is JSONL).
RecordFormat format_for_path(const std::filesystem::path& path);

struct LoadOptions {
  std::size_t max_len = kDefaultMaxLen;
  bool strict = false;
  // When false the exemplar column is optional (pairs before mining).
  bool require_exemplar = true;
};

struct LoadResult {
  std::vector<Triple> triples;      // exemplar empty when absent and not required
  std::size_t skipped = 0;          // records with an empty required field
};

// Reads JSONL {"source","target","exemplar"} or TSV source<TAB>target<TAB>exemplar.
// Malformed records throw ParseError in strict mode and are skipped otherwise.
LoadResult load_triples(const std::filesystem::path& path, RecordFormat format,
                        const LoadOptions& options = {});

std::vector<SentencePair> load_pairs(const std::filesystem::path& path, RecordFormat format,
                                     const LoadOptions& options = {}, std::size_t* skipped = nullptr);

void write_triples_jsonl(const std::filesystem::path& path, std::span<const Triple> triples);
std::string triple_to_jsonl(const Triple& t);

using EmbeddingMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PretrainedEmbeddings {
  EmbeddingMatrix matrix;  // |V| x d_emb
  std::size_t covered = 0;
  double coverage = 0.0;   // covered / |V|
};

// Uniform(-0.1, 0.1) rows for everything, then rows of tokens found in the
// "token v1 ... vd" file overwritten verbatim. Throws DimensionError when the
// file's width differs from d_emb.
PretrainedEmbeddings load_pretrained_embeddings(const std::filesystem::path& path,
                                                const Vocabulary& v, std::size_t d_emb,
                                                std::mt19937_64& rng);

}  // namespace egpg
