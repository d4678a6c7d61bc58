#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egpg/corpus.hpp"
#include "egpg/model.hpp"
#include "egpg/syntax.hpp"

namespace egpg {

using Tokens = std::vector<std::string>;

// Corpus BLEU-4, single reference, scale 0-100. Zero n-gram matches are
// smoothed to epsilon / total; an order with no n-grams at all counts as 1.
inline constexpr double kBleuEpsilon = 1e-9;
double bleu(std::span<const Tokens> candidates, std::span<const Tokens> references);

struct RougeScores {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
};

// Mean per-sentence F1 of unigram, bigram and LCS overlap.
RougeScores rouge(std::span<const Tokens> candidates, std::span<const Tokens> references);

// Porter (1980) suffix stripping.
std::string porter_stem(std::string word);

// Exact then stemmed greedy unigram alignment; Fmean = 10PR / (R + 9P),
// penalty 0.5 * (chunks / matches)^3. Corpus mean of sentence scores.
double meteor_simplified(std::span<const Tokens> candidates, std::span<const Tokens> references);
double meteor_sentence(const Tokens& candidate, const Tokens& reference);

struct EdScores {
  double ed_e = 0.0;
  double ed_r = 0.0;
};

// Mean tag edit distance of each generation to its exemplar and reference.
EdScores ed_metrics(std::span<const Tokens> generated, std::span<const Sentence> exemplars,
                    std::span<const Sentence> references, const Tagger& tagger);
EdScores ed_metrics(std::span<const TagSequence> generated, std::span<const TagSequence> exemplars,
                    std::span<const TagSequence> references);

// S = A B^T with every entry a plain left-to-right dot product.
Matrix similarity_matrix(const Matrix& a, const Matrix& b);

struct CmaDetail {
  double accuracy = 0.0;
  std::vector<std::size_t> best;  // argmax_j S[i][j], lowest j on ties
  std::vector<double> margin;     // S[i][i] - max_{j != i} S[i][j]
};

// Rows of S are produced `block_rows` at a time; the result does not depend
// on the block size.
inline constexpr std::size_t kDefaultCmaBlock = 256;
CmaDetail cma_detail(const Matrix& a, const Matrix& b, std::size_t block_rows = kDefaultCmaBlock);
double content_matching_accuracy(const Matrix& a, const Matrix& b, std::size_t block_rows = kDefaultCmaBlock);

// Pool indices ranked by style similarity to `query`, descending, at most
// top_k of them. Features are L2-normalized when the model was trained so.
std::vector<std::size_t> style_retrieval(const Sentence& query, std::span<const Sentence> pool, const ModelState& m,
                                         const Vocabulary& vocab, std::size_t top_k);

struct EvalReport {
  double bleu = 0.0;    // 0-100
  double rouge1 = 0.0;  // 0-1
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double meteor = 0.0;  // 0-1
  double ed_e = 0.0;
  double ed_r = 0.0;
  std::optional<double> cma;
  std::size_t count = 0;
  nlohmann::json metadata = nlohmann::json::object();

  // Throws Error naming the first field outside its range.
  void validate() const;
  nlohmann::json to_json() const;
  static std::string csv_header();
  // ROUGE and METEOR scaled by 100, as tabulated.
  std::string csv_row() const;
};

// Metrics of `generated` against the triples' targets (and exemplars for
// ED-E). CMA is filled when both feature matrices are given.
EvalReport compute_report(std::span<const Tokens> generated, std::span<const Triple> test, const Tagger& tagger,
                          const Matrix* source_features = nullptr, const Matrix* target_features = nullptr);

struct EvalOptions {
  std::size_t max_len = kDefaultMaxLen;
  std::size_t batch_size = 64;
  std::size_t workers = 1;
  std::size_t cma_block = kDefaultCmaBlock;
};

struct EvalRun {
  EvalReport report;
  std::vector<Tokens> generations;
};

// Greedy generation for every (source, exemplar) followed by compute_report,
// with CMA over the content features of sources and targets.
EvalRun evaluate_run(const ModelState& m, const Vocabulary& vocab, std::span<const Triple> test, const Tagger& tagger,
                     const EvalOptions& options = {});

// Greedy generations in input order; parallel over chunks of batch_size.
std::vector<Tokens> generate_for(const ModelState& m, const Vocabulary& vocab, std::span<const Triple> items,
                                 const EvalOptions& options = {});

// Content features of the triples' sources and targets, normalized when
// the model compares normalized features.
std::pair<Matrix, Matrix> content_features(const ModelState& m, const Vocabulary& vocab,
                                           std::span<const Triple> items, std::size_t batch_size = 64);

}  // namespace egpg
