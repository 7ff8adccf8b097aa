#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation applied to its Vars. Calling backward() on a
// 1x1 result walks the tape in reverse and accumulates gradients into every
// node that (transitively) depends on a parameter or variable leaf. Tapes are
// cheap, single-threaded and meant to live for one forward/backward pass;
// Parameters are never written by the tape, so many tapes may read one model
// concurrently.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mailproto::ag {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  // Excluded from decoupled weight decay (biases, norms, prototypes).
  bool no_decay = false;
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the node's gradient, the tape and the node's own id.
  using Backward = std::function<void(const Matrix& grad, Tape& tape, int self)>;

  // With record_gradients=false no backward closures are kept; use for inference.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Differentiable input that is not a model parameter (e.g. embeddings under attribution).
  Var variable(Matrix value);
  // Leaf bound to a parameter. Repeated calls with the same parameter return the same node.
  Var parameter(const Parameter& p);

  void backward(Var root);

  // Gradient of the last backward() root w.r.t. a node; zeros when unreachable.
  Matrix grad(Var v) const;
  Matrix grad(const Parameter& p) const;
  // Adds the parameter's gradient into dst when one was recorded; returns whether it did.
  bool add_grad_to(const Parameter& p, Matrix& dst) const;

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);

  void accumulate(int id, const Matrix& g);
  // Adds g.row(r) into row rows[r] of node id's gradient.
  void accumulate_rows(int id, std::span<const int> rows, const Matrix& g);
  void accumulate_block(int id, Eigen::Index row, Eigen::Index col, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  Matrix& grad_storage(int id);

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> parameter_nodes_;
};

// Linear algebra
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_row(Var a, Var row);                // broadcast a 1xc row over every row of a
Var add_col_row(Var column, Var row);       // (n x 1) + (1 x m) -> n x m
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

// Elementwise nonlinearities
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var gelu(Var a);
Var tanh(Var a);

// Row-wise normalisations. mask (same shape, 0/1) excludes entries from the softmax.
Var softmax_rows(Var a, const Matrix* mask = nullptr);
Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5);
// Rows scaled to unit L2 norm; zero rows stay zero.
Var row_normalize(Var a);

// Shape manipulation
Var gather_rows(Var table, std::span<const int> rows);
Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

// Reductions
Var mean_rows(Var a);  // n x c -> 1 x c
Var max_rows(Var a);   // n x c -> 1 x c, gradient to the first maximum
Var sum_all(Var a);
Var abs_sum(Var a);

// Prototype geometry
Var pairwise_sqdist(Var a, Var b);              // (n x d), (k x d) -> n x k
Var log_similarity(Var sqdist, double epsilon);  // log((x + 1) / (x + eps))
// Per-row minimum over entries with mask == 1; rows without eligible entries give 0.
Var masked_min_rows(Var a, const Matrix& mask);

// Mean class-weighted negative log-likelihood of softmax(logits).
Var weighted_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights);

}  // namespace mailproto::ag
