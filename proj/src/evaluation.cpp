#include "egpg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "egpg/error.hpp"
#include "egpg/util.hpp"

namespace egpg {

namespace {

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a == 0) throw EmptyInputError(std::string(what) + ": empty corpus");
  if (a != b) {
    throw InputError(std::string(what) + ": " + std::to_string(a) + " candidates for " + std::to_string(b) +
                     " references");
  }
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
  return out;
}

std::size_t clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
  std::size_t hits = 0;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) hits += std::min(c, it->second);
  }
  return hits;
}

double f1(double overlap, double cand_total, double ref_total) {
  if (overlap == 0.0 || cand_total == 0.0 || ref_total == 0.0) return 0.0;
  const double p = overlap / cand_total, r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  check_aligned(candidates.size(), references.size(), "bleu");
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  double cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<double>(candidates[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      auto c = ngrams(candidates[i], n);
      matches[n - 1] += static_cast<double>(clipped_overlap(c, ngrams(references[i], n)));
      if (candidates[i].size() >= n) totals[n - 1] += static_cast<double>(candidates[i].size() - n + 1);
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    const double num = matches[n] > 0 ? matches[n] : kBleuEpsilon;
    const double den = totals[n] > 0 ? totals[n] : kBleuEpsilon;
    log_sum += std::log(num / den);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

RougeScores rouge(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  check_aligned(candidates.size(), references.size(), "rouge");
  RougeScores s;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& c = candidates[i];
    const Tokens& r = references[i];
    s.rouge1 += f1(static_cast<double>(clipped_overlap(ngrams(c, 1), ngrams(r, 1))), static_cast<double>(c.size()),
                   static_cast<double>(r.size()));
    const double cb = c.size() >= 2 ? static_cast<double>(c.size() - 1) : 0.0;
    const double rb = r.size() >= 2 ? static_cast<double>(r.size() - 1) : 0.0;
    s.rouge2 += f1(static_cast<double>(clipped_overlap(ngrams(c, 2), ngrams(r, 2))), cb, rb);
    s.rougeL += f1(static_cast<double>(lcs_length(c, r)), static_cast<double>(c.size()), static_cast<double>(r.size()));
  }
  const auto n = static_cast<double>(candidates.size());
  s.rouge1 /= n;
  s.rouge2 /= n;
  s.rougeL /= n;
  return s;
}

// ---------------------------------------------------------------------------
// Porter stemmer

namespace {

class Stemmer {
 public:
  explicit Stemmer(std::string w) : b_(std::move(w)) {}

  std::string run() {
    if (b_.size() <= 2) return b_;
    step1a();
    step1b();
    step1c();
    step2();
    step3();
    step4();
    step5();
    return b_;
  }

 private:
  bool cons(std::size_t i) const {
    switch (b_[i]) {
      case 'a': case 'e': case 'i': case 'o': case 'u':
        return false;
      case 'y':
        return i == 0 ? true : !cons(i - 1);
      default:
        return true;
    }
  }

  // Number of VC sequences in b_[0, len).
  int measure(std::size_t len) const {
    int m = 0;
    std::size_t i = 0;
    while (i < len && cons(i)) ++i;
    while (i < len) {
      while (i < len && !cons(i)) ++i;
      if (i >= len) break;
      while (i < len && cons(i)) ++i;
      ++m;
    }
    return m;
  }

  bool has_vowel(std::size_t len) const {
    for (std::size_t i = 0; i < len; ++i) {
      if (!cons(i)) return true;
    }
    return false;
  }

  bool double_cons(std::size_t len) const {
    return len >= 2 && b_[len - 1] == b_[len - 2] && cons(len - 1);
  }

  bool cvc(std::size_t len) const {
    if (len < 3) return false;
    const std::size_t i = len - 1;
    if (!cons(i) || cons(i - 1) || !cons(i - 2)) return false;
    const char c = b_[i];
    return c != 'w' && c != 'x' && c != 'y';
  }

  bool ends(std::string_view s) const { return b_.size() >= s.size() && b_.compare(b_.size() - s.size(), s.size(), s) == 0; }
  std::size_t stem_len(std::string_view suffix) const { return b_.size() - suffix.size(); }
  void replace(std::string_view suffix, std::string_view with) {
    b_.resize(stem_len(suffix));
    b_ += with;
  }

  struct Rule {
    std::string_view suffix;
    std::string_view replacement;
  };

  // First rule whose suffix matches decides; applied when m(stem) > min_m.
  void apply_rules(std::span<const Rule> rules, int min_m) {
    for (const auto& r : rules) {
      if (ends(r.suffix)) {
        if (measure(stem_len(r.suffix)) > min_m) replace(r.suffix, r.replacement);
        return;
      }
    }
  }

  void step1a() {
    if (ends("sses")) replace("sses", "ss");
    else if (ends("ies")) replace("ies", "i");
    else if (ends("ss")) return;
    else if (ends("s")) replace("s", "");
  }

  void step1b() {
    if (ends("eed")) {
      if (measure(stem_len("eed")) > 0) replace("eed", "ee");
      return;
    }
    bool cut = false;
    if (ends("ed") && has_vowel(stem_len("ed"))) {
      replace("ed", "");
      cut = true;
    } else if (ends("ing") && has_vowel(stem_len("ing"))) {
      replace("ing", "");
      cut = true;
    }
    if (!cut) return;
    if (ends("at")) replace("at", "ate");
    else if (ends("bl")) replace("bl", "ble");
    else if (ends("iz")) replace("iz", "ize");
    else if (double_cons(b_.size())) {
      const char c = b_.back();
      if (c != 'l' && c != 's' && c != 'z') b_.pop_back();
    } else if (measure(b_.size()) == 1 && cvc(b_.size())) {
      b_ += 'e';
    }
  }

  void step1c() {
    if (ends("y") && has_vowel(stem_len("y"))) b_.back() = 'i';
  }

  void step2() {
    static constexpr Rule rules[] = {
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},   {"anci", "ance"},  {"izer", "ize"},
        {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},      {"ousli", "ous"},
        {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},    {"alism", "al"},   {"iveness", "ive"},
        {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},  {"biliti", "ble"}};
    apply_rules(rules, 0);
  }

  void step3() {
    static constexpr Rule rules[] = {{"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
                                     {"ical", "ic"},  {"ful", ""},   {"ness", ""}};
    apply_rules(rules, 0);
  }

  void step4() {
    static constexpr std::string_view suffixes[] = {"al",  "ance", "ence", "er",  "ic",  "able", "ible",
                                                    "ant", "ement", "ment", "ent", "ion", "ou",   "ism",
                                                    "ate", "iti",  "ous",  "ive", "ize"};
    for (auto s : suffixes) {
      if (!ends(s)) continue;
      const std::size_t len = stem_len(s);
      if (s == "ion" && !(len > 0 && (b_[len - 1] == 's' || b_[len - 1] == 't'))) return;
      if (measure(len) > 1) b_.resize(len);
      return;
    }
  }

  void step5() {
    if (ends("e")) {
      const std::size_t len = stem_len("e");
      const int m = measure(len);
      if (m > 1 || (m == 1 && !cvc(len))) b_.pop_back();
    }
    if (ends("ll") && measure(b_.size()) > 1) b_.pop_back();
  }

  std::string b_;
};

}  // namespace

std::string porter_stem(std::string word) { return Stemmer(std::move(word)).run(); }

double meteor_sentence(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<long> ref_of(candidate.size(), -1);
  std::vector<bool> ref_used(reference.size(), false);
  auto stage = [&](auto&& key) {
    std::vector<std::string> ref_keys(reference.size());
    for (std::size_t j = 0; j < reference.size(); ++j) ref_keys[j] = key(reference[j]);
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (ref_of[i] >= 0) continue;
      const std::string k = key(candidate[i]);
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (!ref_used[j] && ref_keys[j] == k) {
          ref_of[i] = static_cast<long>(j);
          ref_used[j] = true;
          break;
        }
      }
    }
  };
  stage([](const std::string& w) { return w; });
  stage([](const std::string& w) { return porter_stem(w); });

  double matches = 0, chunks = 0;
  long prev_ref = -2;
  bool prev_matched = false;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (ref_of[i] < 0) {
      prev_matched = false;
      continue;
    }
    ++matches;
    if (!prev_matched || ref_of[i] != prev_ref + 1) ++chunks;
    prev_matched = true;
    prev_ref = ref_of[i];
  }
  if (matches == 0) return 0.0;
  const double p = matches / static_cast<double>(candidate.size());
  const double r = matches / static_cast<double>(reference.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(chunks / matches, 3.0);
  return fmean * (1.0 - penalty);
}

double meteor_simplified(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  check_aligned(candidates.size(), references.size(), "meteor");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += meteor_sentence(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

EdScores ed_metrics(std::span<const TagSequence> generated, std::span<const TagSequence> exemplars,
                    std::span<const TagSequence> references) {
  check_aligned(generated.size(), exemplars.size(), "ed_metrics");
  check_aligned(generated.size(), references.size(), "ed_metrics");
  EdScores s;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    s.ed_e += static_cast<double>(edit_distance(generated[i], exemplars[i]));
    s.ed_r += static_cast<double>(edit_distance(generated[i], references[i]));
  }
  s.ed_e /= static_cast<double>(generated.size());
  s.ed_r /= static_cast<double>(generated.size());
  return s;
}

EdScores ed_metrics(std::span<const Tokens> generated, std::span<const Sentence> exemplars,
                    std::span<const Sentence> references, const Tagger& tagger) {
  check_aligned(generated.size(), exemplars.size(), "ed_metrics");
  check_aligned(generated.size(), references.size(), "ed_metrics");
  std::vector<TagSequence> g(generated.size()), e(generated.size()), r(generated.size());
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (!generated[i].empty()) g[i] = tagger.tag(Sentence::from_tokens(generated[i]));
    e[i] = tagger.tag(exemplars[i]);
    r[i] = tagger.tag(references[i]);
  }
  return ed_metrics(std::span<const TagSequence>(g), std::span<const TagSequence>(e), std::span<const TagSequence>(r));
}

// ---------------------------------------------------------------------------
// Content matching

namespace {

double row_dot(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double s = 0.0;
  const double* x = a.data() + i * a.cols();
  const double* y = b.data() + j * b.cols();
  for (Eigen::Index k = 0; k < a.cols(); ++k) s += x[k] * y[k];
  return s;
}

void check_features(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0) throw EmptyInputError("content matching needs at least one row");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("content matching: A is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         ", B is " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Matrix similarity_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("similarity matrix: feature widths differ");
  Matrix s(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) s(i, j) = row_dot(a, i, b, j);
  }
  return s;
}

CmaDetail cma_detail(const Matrix& a, const Matrix& b, std::size_t block_rows) {
  check_features(a, b);
  if (block_rows == 0) throw InputError("CMA block size must be positive");
  const auto m = static_cast<std::size_t>(a.rows());
  CmaDetail d;
  d.best.resize(m);
  d.margin.resize(m);
  std::size_t hits = 0;
  for (std::size_t start = 0; start < m; start += block_rows) {
    const std::size_t count = std::min(block_rows, m - start);
    Matrix block = similarity_matrix(a.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)), b);
    for (std::size_t r = 0; r < count; ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      const std::size_t i = start + r;
      std::size_t best = 0;
      double other = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        const double v = block(row, static_cast<Eigen::Index>(j));
        if (v > block(row, static_cast<Eigen::Index>(best))) best = j;
        if (j != i) other = std::max(other, v);
      }
      d.best[i] = best;
      d.margin[i] = m == 1 ? 0.0 : block(row, static_cast<Eigen::Index>(i)) - other;
      if (best == i) ++hits;
    }
  }
  d.accuracy = static_cast<double>(hits) / static_cast<double>(m);
  return d;
}

double content_matching_accuracy(const Matrix& a, const Matrix& b, std::size_t block_rows) {
  return cma_detail(a, b, block_rows).accuracy;
}

namespace {

void normalize_rows(Matrix& x) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) /= std::max(x.row(r).norm(), 1e-12);
}

IdSequence encode_for(const Sentence& s, const ModelState& m, const Vocabulary& vocab) {
  return encode(truncate(s, m.config().max_len), vocab);
}

}  // namespace

std::vector<std::size_t> style_retrieval(const Sentence& query, std::span<const Sentence> pool, const ModelState& m,
                                         const Vocabulary& vocab, std::size_t top_k) {
  if (pool.empty() || top_k == 0) return {};
  std::vector<IdSequence> seqs;
  seqs.reserve(pool.size() + 1);
  seqs.push_back(encode_for(query, m, vocab));
  for (const auto& s : pool) seqs.push_back(encode_for(s, m, vocab));
  Matrix f = encode_style_batch(seqs, m);
  if (m.config().normalize_features) normalize_rows(f);
  std::vector<double> score(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) score[i] = row_dot(f, 0, f, static_cast<Eigen::Index>(i + 1));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return score[x] > score[y]; });
  order.resize(std::min(top_k, order.size()));
  return order;
}

// ---------------------------------------------------------------------------
// Reports

void EvalReport::validate() const {
  auto in = [](const char* name, double v, double lo, double hi) {
    if (!(v >= lo && v <= hi)) throw Error(std::string("report field ") + name + " = " + std::to_string(v) + " out of range");
  };
  const double inf = std::numeric_limits<double>::infinity();
  in("bleu", bleu, 0.0, 100.0);
  in("rouge1", rouge1, 0.0, 1.0);
  in("rouge2", rouge2, 0.0, 1.0);
  in("rougeL", rougeL, 0.0, 1.0);
  in("meteor", meteor, 0.0, 1.0);
  in("ed_e", ed_e, 0.0, inf);
  in("ed_r", ed_r, 0.0, inf);
  if (cma) in("cma", *cma, 0.0, 1.0);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["bleu"] = bleu;
  j["rouge1"] = rouge1;
  j["rouge2"] = rouge2;
  j["rougeL"] = rougeL;
  j["meteor"] = meteor;
  j["ed_e"] = ed_e;
  j["ed_r"] = ed_r;
  j["cma"] = cma ? nlohmann::json(*cma) : nlohmann::json(nullptr);
  j["count"] = count;
  j["metadata"] = metadata;
  return j;
}

std::string EvalReport::csv_header() { return "count,bleu,rouge1,rouge2,rougeL,meteor,ed_e,ed_r,cma"; }

std::string EvalReport::csv_row() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << count << ',' << bleu << ',' << rouge1 * 100 << ',' << rouge2 * 100 << ',' << rougeL * 100 << ','
      << meteor * 100 << ',' << ed_e << ',' << ed_r << ',';
  if (cma) out << *cma;
  return out.str();
}

EvalReport compute_report(std::span<const Tokens> generated, std::span<const Triple> test, const Tagger& tagger,
                          const Matrix* source_features, const Matrix* target_features) {
  check_aligned(generated.size(), test.size(), "evaluation");
  std::vector<Tokens> refs;
  std::vector<Sentence> exemplars, targets;
  for (const auto& t : test) {
    refs.push_back(t.target.tokens());
    targets.push_back(t.target);
    exemplars.push_back(t.exemplar);
  }
  EvalReport r;
  r.count = test.size();
  r.bleu = bleu(generated, refs);
  const auto rg = rouge(generated, refs);
  r.rouge1 = rg.rouge1;
  r.rouge2 = rg.rouge2;
  r.rougeL = rg.rougeL;
  r.meteor = meteor_simplified(generated, refs);
  const auto ed = ed_metrics(generated, exemplars, targets, tagger);
  r.ed_e = ed.ed_e;
  r.ed_r = ed.ed_r;
  if (source_features && target_features) r.cma = content_matching_accuracy(*source_features, *target_features);
  r.metadata["bleu"] = "corpus BLEU-4, single reference, epsilon smoothing";
  r.metadata["rouge"] = "mean sentence F1";
  r.metadata["meteor"] = "simplified: exact + Porter stem matching, no synonyms";
  r.metadata["ed"] = "mean POS tag edit distance";
  r.metadata["tagger"] = tagger.name();
  return r;
}

std::vector<Tokens> generate_for(const ModelState& m, const Vocabulary& vocab, std::span<const Triple> items,
                                 const EvalOptions& options) {
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  const std::size_t chunks = (items.size() + bs - 1) / bs;
  std::vector<Tokens> out(items.size());
  parallel_for(chunks, options.workers, [&](std::size_t c) {
    const std::size_t begin = c * bs, end = std::min(items.size(), begin + bs);
    std::vector<IdSequence> src, ex;
    for (std::size_t i = begin; i < end; ++i) {
      src.push_back(encode_for(items[i].source, m, vocab));
      ex.push_back(encode_for(items[i].exemplar, m, vocab));
    }
    Matrix cf = encode_content_batch(src, m);
    Matrix sf = encode_style_batch(ex, m);
    auto ids = generate_batch(cf, sf, m, options.max_len);
    for (std::size_t i = begin; i < end; ++i) out[i] = decode(ids[i - begin], vocab);
  });
  return out;
}

std::pair<Matrix, Matrix> content_features(const ModelState& m, const Vocabulary& vocab, std::span<const Triple> items,
                                           std::size_t batch_size) {
  const auto n = static_cast<Eigen::Index>(items.size());
  Matrix a(n, static_cast<Eigen::Index>(m.config().content_dim)), b(a.rows(), a.cols());
  const std::size_t bs = std::max<std::size_t>(1, batch_size);
  for (std::size_t begin = 0; begin < items.size(); begin += bs) {
    const std::size_t end = std::min(items.size(), begin + bs);
    std::vector<IdSequence> src, tgt;
    for (std::size_t i = begin; i < end; ++i) {
      src.push_back(encode_for(items[i].source, m, vocab));
      tgt.push_back(encode_for(items[i].target, m, vocab));
    }
    a.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) = encode_content_batch(src, m);
    b.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) = encode_content_batch(tgt, m);
  }
  if (m.config().normalize_features) {
    normalize_rows(a);
    normalize_rows(b);
  }
  return {std::move(a), std::move(b)};
}

EvalRun evaluate_run(const ModelState& m, const Vocabulary& vocab, std::span<const Triple> test, const Tagger& tagger,
                     const EvalOptions& options) {
  if (test.empty()) throw EmptyInputError("evaluation set is empty");
  EvalRun run;
  run.generations = generate_for(m, vocab, test, options);
  auto [a, b] = content_features(m, vocab, test, options.batch_size);
  run.report = compute_report(run.generations, test, tagger, &a, &b);
  run.report.cma = content_matching_accuracy(a, b, options.cma_block);
  run.report.metadata["normalized_features"] = m.config().normalize_features;
  run.report.metadata["decoding"] = "greedy";
  return run;
}

}  // namespace egpg
