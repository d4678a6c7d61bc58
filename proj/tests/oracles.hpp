#pragma once

// Slow, independent reference implementations used by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "egpg/autograd.hpp"
#include "egpg/evaluation.hpp"
#include "egpg/exemplar_search.hpp"
#include "egpg/syntax.hpp"

namespace oracle {

using egpg::nn::Matrix;

// Plain recursion over the three edit operations.
template <typename T>
std::size_t edit_distance(const std::vector<T>& a, const std::vector<T>& b, std::size_t i = 0, std::size_t j = 0) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  if (a[i] == b[j]) return edit_distance(a, b, i + 1, j + 1);
  return 1 + std::min({edit_distance(a, b, i + 1, j), edit_distance(a, b, i, j + 1), edit_distance(a, b, i + 1, j + 1)});
}

// Bidirectional InfoNCE by direct enumeration of every anchor's terms, no
// stabilization.
inline double infonce(const Matrix& a_in, const Matrix& b_in, double tau, bool normalize) {
  Matrix a = a_in, b = b_in;
  if (normalize) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      a.row(i) /= std::max(a.row(i).norm(), 1e-12);
      b.row(i) /= std::max(b.row(i).norm(), 1e-12);
    }
  }
  const Eigen::Index n = a.rows();
  auto e = [&](const Matrix& x, Eigen::Index i, const Matrix& y, Eigen::Index j) {
    double d = 0.0;
    for (Eigen::Index k = 0; k < x.cols(); ++k) d += x(i, k) * y(j, k);
    return std::exp(d / tau);
  };
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    // Anchor a_i.
    double pos = e(a, i, b, i), den = pos;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      den += e(a, i, a, j) + e(a, i, b, j);
    }
    total += -std::log(pos / den);
    // Anchor b_i.
    pos = e(b, i, a, i);
    den = pos;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      den += e(b, i, b, j) + e(b, i, a, j);
    }
    total += -std::log(pos / den);
  }
  return total;
}

// Scans the whole pool without any index. Distances come from the DP,
// which is checked against the recursion separately.
inline std::optional<egpg::ExemplarMatch> find_exemplar(const egpg::Sentence& target, const egpg::TagSequence& tags,
                                                        const std::vector<egpg::Sentence>& pool,
                                                        const std::vector<egpg::TagSequence>& pool_tags,
                                                        std::optional<std::size_t> exclude) {
  std::optional<egpg::ExemplarMatch> best;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (exclude && *exclude == i) continue;
    const auto& c = pool[i];
    const std::size_t diff = c.size() > target.size() ? c.size() - target.size() : target.size() - c.size();
    if (diff > 2) continue;
    std::vector<std::string> shared;
    for (const auto& w : target.tokens()) {
      if (std::find(c.tokens().begin(), c.tokens().end(), w) != c.tokens().end() &&
          std::find(shared.begin(), shared.end(), w) == shared.end()) {
        shared.push_back(w);
      }
    }
    if (shared.size() + 2 > target.size()) continue;
    const std::size_t d = egpg::edit_distance(tags, pool_tags[i]);
    if (!best || d < best->distance) best = egpg::ExemplarMatch{i, d};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Metrics

using Tokens = std::vector<std::string>;

inline std::size_t count_ngram(const Tokens& s, const Tokens& g) {
  std::size_t c = 0;
  for (std::size_t i = 0; i + g.size() <= s.size(); ++i) {
    bool eq = true;
    for (std::size_t k = 0; k < g.size(); ++k) eq = eq && s[i + k] == g[k];
    c += eq;
  }
  return c;
}

// Clipped overlap by scanning each distinct candidate n-gram.
inline std::size_t overlap(const Tokens& cand, const Tokens& ref, std::size_t n) {
  std::vector<Tokens> seen;
  std::size_t total = 0;
  for (std::size_t i = 0; i + n <= cand.size(); ++i) {
    Tokens g(cand.begin() + static_cast<long>(i), cand.begin() + static_cast<long>(i + n));
    if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
    seen.push_back(g);
    total += std::min(count_ngram(cand, g), count_ngram(ref, g));
  }
  return total;
}

inline double bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs, double eps = egpg::kBleuEpsilon) {
  double c = 0, r = 0, logp = 0;
  for (const auto& x : cands) c += static_cast<double>(x.size());
  for (const auto& x : refs) r += static_cast<double>(x.size());
  if (c == 0) return 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    double m = 0, t = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      m += static_cast<double>(overlap(cands[i], refs[i], n));
      t += cands[i].size() >= n ? static_cast<double>(cands[i].size() - n + 1) : 0.0;
    }
    logp += std::log((m == 0 ? eps : m) / (t == 0 ? eps : t));
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(logp / 4.0);
}

inline double f1(double hits, double c, double r) {
  if (hits == 0 || c == 0 || r == 0) return 0.0;
  const double p = hits / c, q = hits / r;
  return 2 * p * q / (p + q);
}

inline std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

inline egpg::RougeScores rouge(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs) {
  egpg::RougeScores s;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& c = cands[i];
    const auto& r = refs[i];
    auto bigrams = [](const Tokens& x) { return x.size() < 2 ? 0.0 : static_cast<double>(x.size() - 1); };
    s.rouge1 += f1(static_cast<double>(overlap(c, r, 1)), static_cast<double>(c.size()), static_cast<double>(r.size()));
    s.rouge2 += f1(static_cast<double>(overlap(c, r, 2)), bigrams(c), bigrams(r));
    s.rougeL += f1(static_cast<double>(lcs(c, r)), static_cast<double>(c.size()), static_cast<double>(r.size()));
  }
  const auto n = static_cast<double>(cands.size());
  return {s.rouge1 / n, s.rouge2 / n, s.rougeL / n};
}

// Alignment as an explicit list of (candidate, reference) pairs; chunks
// counted after sorting by candidate position.
inline double meteor_sentence(const Tokens& c, const Tokens& r) {
  std::vector<std::pair<std::size_t, std::size_t>> align;
  std::vector<bool> cu(c.size(), false), ru(r.size(), false);
  for (int stage = 0; stage < 2; ++stage) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (cu[i]) continue;
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (ru[j]) continue;
        const bool eq = stage == 0 ? c[i] == r[j] : egpg::porter_stem(c[i]) == egpg::porter_stem(r[j]);
        if (eq) {
          cu[i] = ru[j] = true;
          align.emplace_back(i, j);
          break;
        }
      }
    }
  }
  if (align.empty()) return 0.0;
  std::sort(align.begin(), align.end());
  double chunks = 1;
  for (std::size_t k = 1; k < align.size(); ++k) {
    if (align[k].first != align[k - 1].first + 1 || align[k].second != align[k - 1].second + 1) chunks += 1;
  }
  const double m = static_cast<double>(align.size());
  const double p = m / static_cast<double>(c.size()), rr = m / static_cast<double>(r.size());
  const double fmean = 10 * p * rr / (rr + 9 * p);
  return fmean * (1 - 0.5 * std::pow(chunks / m, 3));
}

inline double meteor(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs) {
  double s = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) s += meteor_sentence(cands[i], refs[i]);
  return s / static_cast<double>(cands.size());
}

// ---------------------------------------------------------------------------

// Central differences of f with respect to every entry of x.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

// max |a - b| / max(1e-8, |a| + |b|) style relative error over the whole tensor.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  const double num = (analytic - numeric).norm();
  const double den = std::max(1e-8, analytic.norm() + numeric.norm());
  return num / den;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

}  // namespace oracle
