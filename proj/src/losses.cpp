#include "egpg/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace egpg {

namespace {

void check_target(const Matrix& rows, std::span<const TokenId> target) {
  if (static_cast<std::size_t>(rows.rows()) != target.size()) {
    throw std::invalid_argument("nll: " + std::to_string(rows.rows()) + " distributions for " +
                                std::to_string(target.size()) + " target tokens");
  }
  for (TokenId t : target) {
    if (t < 0 || t >= rows.cols()) throw std::invalid_argument("nll: target id out of range");
  }
}

}  // namespace

double nll_loss(const Matrix& probs, std::span<const TokenId> target) {
  check_target(probs, target);
  if (target.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    sum -= std::log(std::max(probs(static_cast<Eigen::Index>(t), target[t]), kProbabilityFloor));
  }
  return sum / static_cast<double>(target.size());
}

Matrix nll_loss_grad(const Matrix& probs, std::span<const TokenId> target) {
  check_target(probs, target);
  Matrix g = Matrix::Zero(probs.rows(), probs.cols());
  const double inv_len = target.empty() ? 0.0 : 1.0 / static_cast<double>(target.size());
  for (std::size_t t = 0; t < target.size(); ++t) {
    double p = probs(static_cast<Eigen::Index>(t), target[t]);
    if (p > kProbabilityFloor) g(static_cast<Eigen::Index>(t), target[t]) = -inv_len / p;
  }
  return g;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits.colwise() - logits.rowwise().maxCoeff();
  out = out.array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

WeightedNll weighted_nll_from_logits(const Matrix& logits, std::span<const TokenId> target,
                                     std::span<const double> weight) {
  check_target(logits, target);
  if (weight.size() != target.size()) throw std::invalid_argument("nll: weight count differs from target count");
  WeightedNll out;
  out.grad = Matrix::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double w = weight[static_cast<std::size_t>(r)];
    if (w == 0.0) continue;
    auto row = logits.row(r);
    const double mx = row.maxCoeff();
    auto e = (row.array() - mx).exp();
    const double z = e.sum();
    const double log_p = row(target[static_cast<std::size_t>(r)]) - mx - std::log(z);
    out.value -= w * log_p;
    out.grad.row(r) = (e / z).matrix() * w;
    out.grad(r, target[static_cast<std::size_t>(r)]) -= w;
  }
  return out;
}

namespace {

struct Prepared {
  Matrix features;  // 2n x d, normalized when requested
  ColVector norms;  // pre-normalization norms (clamped)
};

Prepared prepare(const Matrix& a, const Matrix& b, const ContrastiveOptions& options) {
  if (a.rows() < 1) throw std::invalid_argument("contrastive loss needs at least one pair");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("contrastive loss: feature matrices differ in shape");
  }
  if (!(options.temperature > 0.0)) throw std::invalid_argument("contrastive loss: temperature must be positive");
  Prepared p;
  p.features.resize(2 * a.rows(), a.cols());
  p.features << a, b;
  p.norms = ColVector::Ones(p.features.rows());
  if (options.normalize) {
    for (Eigen::Index r = 0; r < p.features.rows(); ++r) {
      p.norms(r) = std::max(p.features.row(r).norm(), 1e-12);
      p.features.row(r) /= p.norms(r);
    }
  }
  return p;
}

// Per-anchor loss terms and d loss / d similarity.
double anchor_terms(const Matrix& sim, Eigen::Index n, Matrix* dsim) {
  const Eigen::Index m = sim.rows();
  double total = 0.0;
  if (dsim) *dsim = Matrix::Zero(m, m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const Eigen::Index pos = r < n ? r + n : r - n;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < m; ++c) {
      if (c != r) mx = std::max(mx, sim(r, c));
    }
    double z = 0.0;
    for (Eigen::Index c = 0; c < m; ++c) {
      if (c != r) z += std::exp(sim(r, c) - mx);
    }
    total += mx + std::log(z) - sim(r, pos);
    if (dsim) {
      for (Eigen::Index c = 0; c < m; ++c) {
        if (c != r) (*dsim)(r, c) = std::exp(sim(r, c) - mx) / z;
      }
      (*dsim)(r, pos) -= 1.0;
    }
  }
  return total;
}

}  // namespace

double infonce_bidirectional(const Matrix& a, const Matrix& b, const ContrastiveOptions& options) {
  auto p = prepare(a, b, options);
  Matrix sim = (p.features * p.features.transpose()) / options.temperature;
  double value = anchor_terms(sim, a.rows(), nullptr);
  return options.batch_mean ? value / static_cast<double>(a.rows()) : value;
}

ContrastiveResult infonce_bidirectional_with_grad(const Matrix& a, const Matrix& b,
                                                  const ContrastiveOptions& options) {
  auto p = prepare(a, b, options);
  const Eigen::Index n = a.rows();
  Matrix sim = (p.features * p.features.transpose()) / options.temperature;
  Matrix dsim;
  ContrastiveResult out;
  out.value = anchor_terms(sim, n, &dsim);
  double scale = 1.0 / options.temperature;
  if (options.batch_mean) {
    out.value /= static_cast<double>(n);
    scale /= static_cast<double>(n);
  }
  Matrix dfeat = ((dsim + dsim.transpose()) * p.features) * scale;
  if (options.normalize) {
    for (Eigen::Index r = 0; r < dfeat.rows(); ++r) {
      const double proj = p.features.row(r).dot(dfeat.row(r));
      dfeat.row(r) = (dfeat.row(r) - p.features.row(r) * proj) / p.norms(r);
    }
  }
  out.grad_a = dfeat.topRows(n);
  out.grad_b = dfeat.bottomRows(n);
  return out;
}

}  // namespace egpg
