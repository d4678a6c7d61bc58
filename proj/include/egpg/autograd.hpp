#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

// A small tape-based reverse-mode differentiation engine over row-major
// double matrices. Rows are batch items (or batch x time), columns features.
namespace egpg::nn {

using Real = double;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
using ColVector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// A trainable tensor. `grad` is accumulated by Graph::backward and has the
// same shape as `value` once touched. It is bookkeeping, not state, so it
// stays writable through const references.
struct Parameter {
  Matrix value;
  mutable Matrix grad;

  void zero_grad() const {
    if (grad.size() != value.size()) grad.resize(value.rows(), value.cols());
    grad.setZero();
  }
};

class Graph;

// Handle to a node on a Graph tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Graph {
 public:
  // With record == false no backward closures are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Matrix value);
  Var param(const Parameter& p);

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.value;
  }
  Real scalar(Var v) const { return value(v)(0, 0); }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);        // a * b
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);           // elementwise
  Var scale(Var a, Real k);
  Var add_row(Var a, Var row);     // a + broadcast(row), row is 1 x cols
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var gelu(Var a);                 // tanh approximation
  Var concat_cols(Var a, Var b);
  Var concat_rows(std::span<const Var> parts);
  Var slice_rows(Var a, std::size_t begin, std::size_t count);
  // out.row(i) = table.row(index[i]); backward scatter-adds.
  Var gather_rows(Var table, std::span<const std::size_t> index);
  // out.row(i) = keep[i] ? a.row(i) : b.row(i)
  Var select_rows(Var a, Var b, const std::vector<bool>& keep);
  Var layer_norm(Var x, Var gamma, Var beta, Real eps = 1e-5);

  // GRU cell (r, z, n gate order):
  //   r = s(xr + h Whr + bhr), z = s(xz + h Whz + bhz)
  //   n = tanh(xn + r * (h Whn + bhn)),  h' = (1 - z) * n + z * h
  // x_proj already holds x Wi + bi for the three gates (B x 3H).
  Var gru_cell(Var x_proj, Var h, Var w_hh, Var b_hh);

  // Multi-head scaled dot-product attention over `batch` sequences of
  // `seq` rows each (rows ordered batch-major). key_mask[b * seq + j] false
  // hides key j of sequence b.
  Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads,
                const std::vector<bool>& key_mask);

  // Sum of all entries, 1 x 1.
  Var sum(Var a);

  // A scalar node whose value and input gradients were computed elsewhere
  // (closed-form losses). grads[i] is d value / d inputs[i].
  Var custom_scalar(std::span<const Var> inputs, Real value, std::vector<Matrix> grads);

  // Seeds d root / d root = 1 and runs the tape backwards. Parameter
  // gradients are accumulated into Parameter::grad.
  void backward(Var root);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Graph&)> back;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Matrix value, bool requires_grad);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  Matrix& grad_of(Var v);
  void set_back(Var out, std::function<void(Graph&)> fn);

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace egpg::nn
