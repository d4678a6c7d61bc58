#pragma once

#include <span>

#include "egpg/autograd.hpp"
#include "egpg/corpus.hpp"

namespace egpg {

using nn::Matrix;
using nn::ColVector;

inline constexpr double kProbabilityFloor = 1e-12;

// Mean negative log-probability of the gold tokens: row t of `probs` is the
// distribution for target[t]. Probabilities are floored at 1e-12.
double nll_loss(const Matrix& probs, std::span<const TokenId> target);

// d nll_loss / d probs.
Matrix nll_loss_grad(const Matrix& probs, std::span<const TokenId> target);

struct WeightedNll {
  double value = 0.0;
  Matrix grad;  // d value / d logits
};

// sum_r weight[r] * -log softmax(logits.row(r))[target[r]], with rows of zero
// weight skipped. With weight 1/|Y_i| on the real tokens of sentence i and 0
// on padding this is the batch sum of per-sentence nll_loss.
WeightedNll weighted_nll_from_logits(const Matrix& logits, std::span<const TokenId> target,
                                     std::span<const double> weight);

// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

struct ContrastiveOptions {
  double temperature = 0.5;
  // L2-normalize every feature before taking dot products.
  bool normalize = true;
  // Divide the batch sum by n.
  bool batch_mean = false;
};

struct ContrastiveResult {
  double value = 0.0;
  Matrix grad_a;
  Matrix grad_b;
};

// Bidirectional in-batch InfoNCE. Row i of `a` and row i of `b` are a
// positive pair; each of the 2n anchors is scored against its positive plus
// the 2n - 2 other features of the batch, never against itself:
//   L = sum_i [ -log e^{a_i.b_i/t} / (e^{a_i.b_i/t} + sum_{j!=i, T in {a,b}} e^{a_i.T_j/t}) + (a <-> b) ]
// Computed with max-subtraction. Throws std::invalid_argument on shape
// mismatch, n == 0 or a non-positive temperature.
double infonce_bidirectional(const Matrix& a, const Matrix& b, const ContrastiveOptions& options = {});
ContrastiveResult infonce_bidirectional_with_grad(const Matrix& a, const Matrix& b,
                                                  const ContrastiveOptions& options = {});

// Content pairs (c_X, c_Y).
inline double content_contrastive_loss(const Matrix& c_x, const Matrix& c_y, const ContrastiveOptions& options = {}) {
  return infonce_bidirectional(c_x, c_y, options);
}

// Style pairs (s_Y, s_Z).
inline double style_contrastive_loss(const Matrix& s_y, const Matrix& s_z, const ContrastiveOptions& options = {}) {
  return infonce_bidirectional(s_y, s_z, options);
}

struct LossWeights {
  double ccl = 0.1;  // lambda_1
  double scl = 0.1;  // lambda_2
};

inline double total_loss(double nll_sum, double ccl, double scl, const LossWeights& w) {
  return nll_sum + w.ccl * ccl + w.scl * scl;
}

}  // namespace egpg
