#include "egpg/autograd.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace egpg::nn {
namespace {

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autograd shape error: ") + what);
}

constexpr Real kSqrt2OverPi = 0.7978845608028654;
constexpr Real kGeluCoeff = 0.044715;

}  // namespace

Var Graph::push(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Matrix& Graph::grad_of(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    const Matrix& val = n.param ? n.param->value : n.value;
    n.grad = Matrix::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

void Graph::set_back(Var out, std::function<void(Graph&)> fn) {
  if (nodes_[out.id].requires_grad) nodes_[out.id].back = std::move(fn);
}

Var Graph::constant(Matrix value) { return push(std::move(value), false); }

Var Graph::param(const Parameter& p) {
  Node n;
  n.param = &p;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

// Parameter nodes keep no copy of their value.
#define EGPG_VAL(v) (nodes_[(v).id].param ? nodes_[(v).id].param->value : nodes_[(v).id].value)

Var Graph::matmul(Var a, Var b) {
  const Matrix& A = EGPG_VAL(a);
  const Matrix& B = EGPG_VAL(b);
  check(A.cols() == B.rows(), "matmul");
  Matrix out = A * B;
  Var o = push(std::move(out), needs(a) || needs(b));
  set_back(o, [a, b, o](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    if (g.needs(a)) g.grad_of(a).noalias() += G * g.value(b).transpose();
    if (g.needs(b)) g.grad_of(b).noalias() += g.value(a).transpose() * G;
  });
  return o;
}

Var Graph::add(Var a, Var b) {
  const Matrix& A = EGPG_VAL(a);
  const Matrix& B = EGPG_VAL(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(), "add");
  Var o = push(A + B, needs(a) || needs(b));
  set_back(o, [a, b, o](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    if (g.needs(a)) g.grad_of(a) += G;
    if (g.needs(b)) g.grad_of(b) += G;
  });
  return o;
}

Var Graph::sub(Var a, Var b) {
  const Matrix& A = EGPG_VAL(a);
  const Matrix& B = EGPG_VAL(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(), "sub");
  Var o = push(A - B, needs(a) || needs(b));
  set_back(o, [a, b, o](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    if (g.needs(a)) g.grad_of(a) += G;
    if (g.needs(b)) g.grad_of(b) -= G;
  });
  return o;
}

Var Graph::mul(Var a, Var b) {
  const Matrix& A = EGPG_VAL(a);
  const Matrix& B = EGPG_VAL(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(), "mul");
  Var o = push(A.cwiseProduct(B), needs(a) || needs(b));
  set_back(o, [a, b, o](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    if (g.needs(a)) g.grad_of(a) += G.cwiseProduct(g.value(b));
    if (g.needs(b)) g.grad_of(b) += G.cwiseProduct(g.value(a));
  });
  return o;
}

Var Graph::scale(Var a, Real k) {
  Var o = push(EGPG_VAL(a) * k, needs(a));
  set_back(o, [a, o, k](Graph& g) { g.grad_of(a) += g.nodes_[o.id].grad * k; });
  return o;
}

Var Graph::add_row(Var a, Var row) {
  const Matrix& A = EGPG_VAL(a);
  const Matrix& R = EGPG_VAL(row);
  check(R.rows() == 1 && R.cols() == A.cols(), "add_row");
  Matrix out = A.rowwise() + R.row(0);
  Var o = push(std::move(out), needs(a) || needs(row));
  set_back(o, [a, row, o](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    if (g.needs(a)) g.grad_of(a) += G;
    if (g.needs(row)) g.grad_of(row) += G.colwise().sum();
  });
  return o;
}

Var Graph::tanh(Var a) {
  Matrix out = EGPG_VAL(a).array().tanh().matrix();
  Var o = push(std::move(out), needs(a));
  set_back(o, [a, o](Graph& g) {
    const Matrix& Y = g.nodes_[o.id].value;
    g.grad_of(a).array() += g.nodes_[o.id].grad.array() * (1.0 - Y.array().square());
  });
  return o;
}

Var Graph::sigmoid(Var a) {
  Matrix out = (1.0 / (1.0 + (-EGPG_VAL(a).array()).exp())).matrix();
  Var o = push(std::move(out), needs(a));
  set_back(o, [a, o](Graph& g) {
    const Matrix& Y = g.nodes_[o.id].value;
    g.grad_of(a).array() += g.nodes_[o.id].grad.array() * Y.array() * (1.0 - Y.array());
  });
  return o;
}

Var Graph::gelu(Var a) {
  const Matrix& X = EGPG_VAL(a);
  Matrix t = (kSqrt2OverPi * (X.array() + kGeluCoeff * X.array().cube())).tanh().matrix();
  Matrix out = (0.5 * X.array() * (1.0 + t.array())).matrix();
  Var o = push(std::move(out), needs(a));
  set_back(o, [a, o, t = std::move(t)](Graph& g) {
    const auto x = g.value(a).array();
    auto d = 0.5 * (1.0 + t.array()) +
             0.5 * x * (1.0 - t.array().square()) * kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x.square());
    g.grad_of(a).array() += g.nodes_[o.id].grad.array() * d;
  });
  return o;
}

Var Graph::concat_cols(Var a, Var b) {
  const Matrix& A = EGPG_VAL(a);
  const Matrix& B = EGPG_VAL(b);
  check(A.rows() == B.rows(), "concat_cols");
  Matrix out(A.rows(), A.cols() + B.cols());
  out << A, B;
  const auto ca = A.cols(), cb = B.cols();
  Var o = push(std::move(out), needs(a) || needs(b));
  set_back(o, [a, b, o, ca, cb](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    if (g.needs(a)) g.grad_of(a) += G.leftCols(ca);
    if (g.needs(b)) g.grad_of(b) += G.rightCols(cb);
  });
  return o;
}

Var Graph::concat_rows(std::span<const Var> parts) {
  check(!parts.empty(), "concat_rows of nothing");
  Eigen::Index rows = 0;
  const Eigen::Index cols = EGPG_VAL(parts[0]).cols();
  bool req = false;
  for (Var p : parts) {
    check(EGPG_VAL(p).cols() == cols, "concat_rows");
    rows += EGPG_VAL(p).rows();
    req = req || needs(p);
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    const Matrix& P = EGPG_VAL(p);
    out.middleRows(r, P.rows()) = P;
    r += P.rows();
  }
  Var o = push(std::move(out), req);
  set_back(o, [ps = std::vector<Var>(parts.begin(), parts.end()), o](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    Eigen::Index r = 0;
    for (Var p : ps) {
      const Eigen::Index n = g.value(p).rows();
      if (g.needs(p)) g.grad_of(p) += G.middleRows(r, n);
      r += n;
    }
  });
  return o;
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Matrix& A = EGPG_VAL(a);
  check(begin + count <= static_cast<std::size_t>(A.rows()), "slice_rows");
  const auto b = static_cast<Eigen::Index>(begin), n = static_cast<Eigen::Index>(count);
  Var o = push(A.middleRows(b, n), needs(a));
  set_back(o, [a, o, b, n](Graph& g) { g.grad_of(a).middleRows(b, n) += g.nodes_[o.id].grad; });
  return o;
}

Var Graph::gather_rows(Var table, std::span<const std::size_t> index) {
  const Matrix& T = EGPG_VAL(table);
  Matrix out(static_cast<Eigen::Index>(index.size()), T.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    check(index[i] < static_cast<std::size_t>(T.rows()), "gather_rows index");
    out.row(static_cast<Eigen::Index>(i)) = T.row(static_cast<Eigen::Index>(index[i]));
  }
  Var o = push(std::move(out), needs(table));
  set_back(o, [table, o, idx = std::vector<std::size_t>(index.begin(), index.end())](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    Matrix& D = g.grad_of(table);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      D.row(static_cast<Eigen::Index>(idx[i])) += G.row(static_cast<Eigen::Index>(i));
    }
  });
  return o;
}

Var Graph::select_rows(Var a, Var b, const std::vector<bool>& keep) {
  const Matrix& A = EGPG_VAL(a);
  const Matrix& B = EGPG_VAL(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(), "select_rows");
  check(keep.size() == static_cast<std::size_t>(A.rows()), "select_rows mask");
  Matrix out = B;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) out.row(static_cast<Eigen::Index>(i)) = A.row(static_cast<Eigen::Index>(i));
  }
  Var o = push(std::move(out), needs(a) || needs(b));
  set_back(o, [a, b, o, mask = keep](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      if (mask[i]) {
        if (g.needs(a)) g.grad_of(a).row(r) += G.row(r);
      } else {
        if (g.needs(b)) g.grad_of(b).row(r) += G.row(r);
      }
    }
  });
  return o;
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, Real eps) {
  const Matrix& X = EGPG_VAL(x);
  const Matrix& Gm = EGPG_VAL(gamma);
  const Matrix& Bt = EGPG_VAL(beta);
  check(Gm.rows() == 1 && Gm.cols() == X.cols() && Bt.rows() == 1 && Bt.cols() == X.cols(), "layer_norm");
  const Eigen::Index n = X.cols();
  ColVector mean = X.rowwise().mean();
  Matrix xc = X.colwise() - mean;
  ColVector inv_std = ((xc.array().square().rowwise().sum() / static_cast<Real>(n)) + eps).rsqrt().matrix();
  Matrix xhat = xc.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * Gm.row(0).array()).rowwise() + Bt.row(0).array();
  Var o = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
  set_back(o, [x, gamma, beta, o, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    if (g.needs(gamma)) g.grad_of(gamma) += (G.array() * xhat.array()).colwise().sum().matrix();
    if (g.needs(beta)) g.grad_of(beta) += G.colwise().sum();
    if (g.needs(x)) {
      Matrix dxhat = G.array().rowwise() * g.value(gamma).row(0).array();
      ColVector s1 = dxhat.rowwise().sum();
      ColVector s2 = (dxhat.array() * xhat.array()).rowwise().sum();
      Matrix dx = (static_cast<Real>(n) * dxhat.array()).colwise() - s1.array();
      dx.array() -= xhat.array().colwise() * s2.array();
      dx.array().colwise() *= inv_std.array() / static_cast<Real>(n);
      g.grad_of(x) += dx;
    }
  });
  return o;
}

Var Graph::gru_cell(Var x_proj, Var h, Var w_hh, Var b_hh) {
  const Matrix& XP = EGPG_VAL(x_proj);
  const Matrix& H = EGPG_VAL(h);
  const Matrix& W = EGPG_VAL(w_hh);
  const Matrix& Bh = EGPG_VAL(b_hh);
  const Eigen::Index hid = H.cols();
  check(XP.rows() == H.rows() && XP.cols() == 3 * hid, "gru_cell x_proj");
  check(W.rows() == hid && W.cols() == 3 * hid && Bh.rows() == 1 && Bh.cols() == 3 * hid, "gru_cell weights");

  Matrix hp = (H * W).rowwise() + Bh.row(0);
  Matrix r = (1.0 / (1.0 + (-(XP.leftCols(hid) + hp.leftCols(hid)).array()).exp())).matrix();
  Matrix z = (1.0 / (1.0 + (-(XP.middleCols(hid, hid) + hp.middleCols(hid, hid)).array()).exp())).matrix();
  Matrix hn = hp.rightCols(hid);
  Matrix n = (XP.rightCols(hid).array() + r.array() * hn.array()).tanh().matrix();
  Matrix out = n.array() + z.array() * (H.array() - n.array());
  Var o = push(std::move(out), needs(x_proj) || needs(h) || needs(w_hh) || needs(b_hh));
  struct Saved {
    Matrix r, z, n, hn;
  };
  auto saved = std::make_shared<Saved>(Saved{std::move(r), std::move(z), std::move(n), std::move(hn)});
  set_back(o, [x_proj, h, w_hh, b_hh, o, hid, saved](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    const Matrix& Hv = g.value(h);
    const auto& s = *saved;
    Matrix dn = G.array() * (1.0 - s.z.array());
    Matrix dz = G.array() * (Hv.array() - s.n.array());
    Matrix dpre_n = dn.array() * (1.0 - s.n.array().square());
    Matrix dr = dpre_n.array() * s.hn.array();
    Matrix dpre_r = dr.array() * s.r.array() * (1.0 - s.r.array());
    Matrix dpre_z = dz.array() * s.z.array() * (1.0 - s.z.array());
    Matrix dhp(G.rows(), 3 * hid);
    dhp << dpre_r, dpre_z, (dpre_n.array() * s.r.array()).matrix();
    if (g.needs(x_proj)) {
      Matrix& D = g.grad_of(x_proj);
      D.leftCols(hid) += dpre_r;
      D.middleCols(hid, hid) += dpre_z;
      D.rightCols(hid) += dpre_n;
    }
    if (g.needs(w_hh)) g.grad_of(w_hh).noalias() += Hv.transpose() * dhp;
    if (g.needs(b_hh)) g.grad_of(b_hh) += dhp.colwise().sum();
    if (g.needs(h)) {
      Matrix& D = g.grad_of(h);
      D.array() += G.array() * s.z.array();
      D.noalias() += dhp * g.value(w_hh).transpose();
    }
  });
  return o;
}

Var Graph::attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads,
                     const std::vector<bool>& key_mask) {
  const Matrix& Q = EGPG_VAL(q);
  const Matrix& K = EGPG_VAL(k);
  const Matrix& V = EGPG_VAL(v);
  const auto B = static_cast<Eigen::Index>(batch), S = static_cast<Eigen::Index>(seq);
  const auto nh = static_cast<Eigen::Index>(heads);
  check(Q.rows() == B * S && K.rows() == Q.rows() && V.rows() == Q.rows(), "attention rows");
  check(K.cols() == Q.cols() && V.cols() == Q.cols() && Q.cols() % nh == 0, "attention cols");
  check(key_mask.size() == batch * seq, "attention mask");
  const Eigen::Index dh = Q.cols() / nh;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));

  auto probs = std::make_shared<std::vector<Matrix>>(batch * heads);
  Matrix out(Q.rows(), Q.cols());
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index hd = 0; hd < nh; ++hd) {
      auto Qb = Q.block(b * S, hd * dh, S, dh);
      auto Kb = K.block(b * S, hd * dh, S, dh);
      auto Vb = V.block(b * S, hd * dh, S, dh);
      Matrix P = (Qb * Kb.transpose()) * scale;
      for (Eigen::Index i = 0; i < S; ++i) {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (Eigen::Index j = 0; j < S; ++j) {
          if (key_mask[static_cast<std::size_t>(b * S + j)]) mx = std::max(mx, P(i, j));
        }
        Real total = 0.0;
        for (Eigen::Index j = 0; j < S; ++j) {
          if (key_mask[static_cast<std::size_t>(b * S + j)]) {
            P(i, j) = std::exp(P(i, j) - mx);
            total += P(i, j);
          } else {
            P(i, j) = 0.0;
          }
        }
        if (total > 0.0) P.row(i) /= total;
      }
      out.block(b * S, hd * dh, S, dh).noalias() = P * Vb;
      (*probs)[static_cast<std::size_t>(b * nh + hd)] = std::move(P);
    }
  }
  Var o = push(std::move(out), needs(q) || needs(k) || needs(v));
  set_back(o, [q, k, v, o, B, S, nh, dh, scale, probs](Graph& g) {
    const Matrix& G = g.nodes_[o.id].grad;
    const Matrix& Qv = g.value(q);
    const Matrix& Kv = g.value(k);
    const Matrix& Vv = g.value(v);
    Matrix dQ = Matrix::Zero(Qv.rows(), Qv.cols());
    Matrix dK = Matrix::Zero(Kv.rows(), Kv.cols());
    Matrix dV = Matrix::Zero(Vv.rows(), Vv.cols());
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index hd = 0; hd < nh; ++hd) {
        const Matrix& P = (*probs)[static_cast<std::size_t>(b * nh + hd)];
        auto dO = G.block(b * S, hd * dh, S, dh);
        dV.block(b * S, hd * dh, S, dh).noalias() += P.transpose() * dO;
        Matrix dP = dO * Vv.block(b * S, hd * dh, S, dh).transpose();
        ColVector rows = (dP.array() * P.array()).rowwise().sum();
        Matrix dS = P.array() * (dP.array().colwise() - rows.array());
        dQ.block(b * S, hd * dh, S, dh).noalias() += (dS * Kv.block(b * S, hd * dh, S, dh)) * scale;
        dK.block(b * S, hd * dh, S, dh).noalias() += (dS.transpose() * Qv.block(b * S, hd * dh, S, dh)) * scale;
      }
    }
    if (g.needs(q)) g.grad_of(q) += dQ;
    if (g.needs(k)) g.grad_of(k) += dK;
    if (g.needs(v)) g.grad_of(v) += dV;
  });
  return o;
}

Var Graph::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = EGPG_VAL(a).sum();
  Var o = push(std::move(out), needs(a));
  set_back(o, [a, o](Graph& g) { g.grad_of(a).array() += g.nodes_[o.id].grad(0, 0); });
  return o;
}

Var Graph::custom_scalar(std::span<const Var> inputs, Real value, std::vector<Matrix> grads) {
  check(inputs.size() == grads.size(), "custom_scalar");
  bool req = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Matrix& X = EGPG_VAL(inputs[i]);
    check(X.rows() == grads[i].rows() && X.cols() == grads[i].cols(), "custom_scalar grad shape");
    req = req || needs(inputs[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = value;
  Var o = push(std::move(out), req);
  set_back(o, [ins = std::vector<Var>(inputs.begin(), inputs.end()), gs = std::move(grads), o](Graph& g) {
    const Real up = g.nodes_[o.id].grad(0, 0);
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (g.needs(ins[i])) g.grad_of(ins[i]) += gs[i] * up;
    }
  });
  return o;
}

void Graph::backward(Var root) {
  check(record_, "backward on a non-recording graph");
  check(EGPG_VAL(root).size() == 1, "backward root must be scalar");
  grad_of(root).setConstant(1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.back) n.back(*this);
    if (n.param) {
      if (n.param->grad.size() != n.param->value.size()) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

#undef EGPG_VAL

}  // namespace egpg::nn
