#include "mailproto/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mailproto::ag {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, recording_});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(const Parameter& p) {
  if (auto it = parameter_nodes_.find(&p); it != parameter_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, {}, recording_});
  const int id = static_cast<int>(nodes_.size() - 1);
  parameter_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (recording_) {
    for (const Var& v : inputs) needs = needs || requires_grad(v.id());
  }
  Node node{std::move(value), {}, {}, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix& Tape::grad_storage(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  if (!requires_grad(id)) return;
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::accumulate_rows(int id, std::span<const int> rows, const Matrix& g) {
  if (!requires_grad(id)) return;
  Matrix& dst = grad_storage(id);
  for (std::size_t r = 0; r < rows.size(); ++r) dst.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
}

void Tape::accumulate_block(int id, Eigen::Index row, Eigen::Index col, const Matrix& g) {
  if (!requires_grad(id)) return;
  grad_storage(id).block(row, col, g.rows(), g.cols()) += g;
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw std::invalid_argument("backward: variable belongs to another tape");
  if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward: root must be a scalar");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!requires_grad(root.id())) return;
  nodes_[static_cast<std::size_t>(root.id())].grad = Matrix::Ones(1, 1);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.size() == 0) continue;
    // Closures only write to earlier nodes, so n stays valid.
    n.backward(n.grad, *this, i);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(const Parameter& p) const {
  auto it = parameter_nodes_.find(&p);
  if (it == parameter_nodes_.end()) return Matrix::Zero(p.value.rows(), p.value.cols());
  const Node& n = nodes_[static_cast<std::size_t>(it->second)];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool Tape::add_grad_to(const Parameter& p, Matrix& dst) const {
  auto it = parameter_nodes_.find(&p);
  if (it == parameter_nodes_.end()) return false;
  const Node& n = nodes_[static_cast<std::size_t>(it->second)];
  if (n.grad.size() == 0) return false;
  dst += n.grad;
  return true;
}

namespace {

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
}

void require_shape(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + op);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() * b.value(), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.cols(), "matmul_nt");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() * b.value().transpose(), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
    if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
  });
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape().push(a.value().transpose(), {a},
                       [ia](const Matrix& g, Tape& t, int) { t.accumulate(ia, g.transpose()); });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() + b.value(), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() - b.value(), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.accumulate(ib, -g);
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape().push(std::move(out), {a, row}, [ia, ir](const Matrix& g, Tape& t, int) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var add_col_row(Var column, Var row) {
  require_same_tape(column, row);
  require_shape(column.cols() == 1 && row.rows() == 1, "add_col_row");
  const int ic = column.id(), ir = row.id();
  Matrix out(column.rows(), row.cols());
  out.colwise() = column.value().col(0);
  out.rowwise() += row.value().row(0);
  return column.tape().push(std::move(out), {column, row}, [ic, ir](const Matrix& g, Tape& t, int) {
    if (t.requires_grad(ic)) t.accumulate(ic, g.rowwise().sum());
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape().push(a.value() * s, {a}, [ia, s](const Matrix& g, Tape& t, int) { t.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id();
  return a.tape().push((a.value().array() + s).matrix(), {a},
                       [ia](const Matrix& g, Tape& t, int) { t.accumulate(ia, g); });
}

Var relu(Var a) {
  const int ia = a.id();
  return a.tape().push(a.value().cwiseMax(0.0), {a}, [ia](const Matrix& g, Tape& t, int) {
    t.accumulate(ia, (t.value(ia).array() > 0.0).cast<double>().matrix().cwiseProduct(g));
  });
}

Var leaky_relu(Var a, double slope) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return a.tape().push(std::move(out), {a}, [ia, slope](const Matrix& g, Tape& t, int) {
    Matrix d = t.value(ia).unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
    t.accumulate(ia, d.cwiseProduct(g));
  });
}

Var gelu(Var a) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); });
  return a.tape().push(std::move(out), {a}, [ia](const Matrix& g, Tape& t, int) {
    Matrix d = t.value(ia).unaryExpr([](double x) {
      const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
    });
    t.accumulate(ia, d.cwiseProduct(g));
  });
}

Var tanh(Var a) {
  const int ia = a.id();
  return a.tape().push(a.value().array().tanh().matrix(), {a}, [ia](const Matrix& g, Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, (1.0 - y.array().square()).matrix().cwiseProduct(g));
  });
}

Var softmax_rows(Var a, const Matrix* mask) {
  const Matrix& x = a.value();
  if (mask) require_shape(mask->rows() == x.rows() && mask->cols() == x.cols(), "softmax_rows mask");
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask && (*mask)(r, c) == 0.0) continue;
      hi = std::max(hi, x(r, c));
    }
    if (!std::isfinite(hi)) continue;
    double total = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask && (*mask)(r, c) == 0.0) continue;
      y(r, c) = std::exp(x(r, c) - hi);
      total += y(r, c);
    }
    y.row(r) /= total;
  }
  const int ia = a.id();
  return a.tape().push(std::move(y), {a}, [ia](const Matrix& g, Tape& t, int self) {
    const Matrix& y = t.value(self);
    Matrix gx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      gx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    t.accumulate(ia, gx);
  });
}

Var layer_norm_rows(Var a, Var gain, Var bias, double eps) {
  require_same_tape(a, gain);
  require_same_tape(a, bias);
  require_shape(gain.rows() == 1 && gain.cols() == a.cols() && bias.rows() == 1 && bias.cols() == a.cols(),
                "layer_norm_rows");
  const Matrix& x = a.value();
  const auto c = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().sum() / c;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  Matrix y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  const int ia = a.id(), ig = gain.id(), ib = bias.id();
  return a.tape().push(std::move(y), {a, gain, bias},
                       [ia, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std), c](const Matrix& g,
                                                                                              Tape& t, int) {
                         if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                         if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                         if (!t.requires_grad(ia)) return;
                         Matrix dxhat = g;
                         dxhat.array().rowwise() *= t.value(ig).row(0).array();
                         Matrix gx(g.rows(), g.cols());
                         for (Eigen::Index r = 0; r < g.rows(); ++r) {
                           const double s1 = dxhat.row(r).sum();
                           const double s2 = dxhat.row(r).dot(xhat.row(r));
                           gx.row(r) = (inv_std(r) / c) *
                                       (c * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2).matrix();
                         }
                         t.accumulate(ia, gx);
                       });
}

Var row_normalize(Var a) {
  const Matrix& x = a.value();
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  Eigen::VectorXd norms(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    norms(r) = x.row(r).norm();
    if (norms(r) > 0.0) y.row(r) = x.row(r) / norms(r);
  }
  const int ia = a.id();
  return a.tape().push(std::move(y), {a}, [ia, norms = std::move(norms)](const Matrix& g, Tape& t, int self) {
    const Matrix& y = t.value(self);
    Matrix gx = Matrix::Zero(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      if (norms(r) <= 0.0) continue;
      const double dot = g.row(r).dot(y.row(r));
      gx.row(r) = (g.row(r) - dot * y.row(r)) / norms(r);
    }
    t.accumulate(ia, gx);
  });
}

Var gather_rows(Var table, std::span<const int> rows) {
  const Matrix& src = table.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= src.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = src.row(rows[r]);
  }
  const int it = table.id();
  return table.tape().push(std::move(out), {table},
                           [it, idx = std::vector<int>(rows.begin(), rows.end())](const Matrix& g, Tape& t, int) {
                             t.accumulate_rows(it, idx, g);
                           });
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  require_shape(begin >= 0 && count >= 0 && begin + count <= a.rows(), "slice_rows");
  const int ia = a.id();
  return a.tape().push(a.value().middleRows(begin, count), {a},
                       [ia, begin](const Matrix& g, Tape& t, int) { t.accumulate_block(ia, begin, 0, g); });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  require_shape(begin >= 0 && count >= 0 && begin + count <= a.cols(), "slice_cols");
  const int ia = a.id();
  return a.tape().push(a.value().middleCols(begin, count), {a},
                       [ia, begin](const Matrix& g, Tape& t, int) { t.accumulate_block(ia, 0, begin, g); });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.cols() == cols, "concat_rows");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts.front().tape().push(std::move(out), parts, [layout = std::move(layout)](const Matrix& g, Tape& t, int) {
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto [id, start] = layout[i];
      if (!t.requires_grad(id)) continue;
      const Eigen::Index n = (i + 1 < layout.size() ? layout[i + 1].second : g.rows()) - start;
      t.accumulate(id, g.middleRows(start, n));
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.rows() == rows, "concat_cols");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts.front().tape().push(std::move(out), parts, [layout = std::move(layout)](const Matrix& g, Tape& t, int) {
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto [id, start] = layout[i];
      if (!t.requires_grad(id)) continue;
      const Eigen::Index n = (i + 1 < layout.size() ? layout[i + 1].second : g.cols()) - start;
      t.accumulate(id, g.middleCols(start, n));
    }
  });
}

Var mean_rows(Var a) {
  require_shape(a.rows() > 0, "mean_rows");
  const int ia = a.id();
  const Eigen::Index n = a.rows();
  return a.tape().push(a.value().colwise().mean(), {a}, [ia, n](const Matrix& g, Tape& t, int) {
    t.accumulate(ia, g.replicate(n, 1) / static_cast<double>(n));
  });
}

Var max_rows(Var a) {
  require_shape(a.rows() > 0, "max_rows");
  const Matrix& x = a.value();
  Matrix out(1, x.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < x.rows(); ++r) {
      if (x(r, c) > x(best, c)) best = r;
    }
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = x(best, c);
  }
  const int ia = a.id();
  const Eigen::Index n = x.rows();
  return a.tape().push(std::move(out), {a}, [ia, n, arg = std::move(arg)](const Matrix& g, Tape& t, int) {
    Matrix gx = Matrix::Zero(n, g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) gx(arg[static_cast<std::size_t>(c)], c) = g(0, c);
    t.accumulate(ia, gx);
  });
}

Var sum_all(Var a) {
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().push(std::move(out), {a},
                       [ia, r, c](const Matrix& g, Tape& t, int) { t.accumulate(ia, Matrix::Constant(r, c, g(0, 0))); });
}

Var abs_sum(Var a) {
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseAbs().sum();
  return a.tape().push(std::move(out), {a}, [ia](const Matrix& g, Tape& t, int) {
    Matrix s = t.value(ia).unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    t.accumulate(ia, s * g(0, 0));
  });
}

Var pairwise_sqdist(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.cols(), "pairwise_sqdist");
  const Matrix& x = a.value();
  const Matrix& p = b.value();
  Matrix d(x.rows(), p.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.rows(); ++j) d(i, j) = (x.row(i) - p.row(j)).squaredNorm();
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().push(std::move(d), {a, b}, [ia, ib](const Matrix& g, Tape& t, int) {
    const Matrix& x = t.value(ia);
    const Matrix& p = t.value(ib);
    if (t.requires_grad(ia)) {
      Matrix gx = x;
      gx.array().colwise() *= g.rowwise().sum().array();
      gx -= g * p;
      t.accumulate(ia, 2.0 * gx);
    }
    if (t.requires_grad(ib)) {
      Matrix gp = p;
      gp.array().colwise() *= g.colwise().sum().transpose().array();
      gp -= g.transpose() * x;
      t.accumulate(ib, 2.0 * gp);
    }
  });
}

Var log_similarity(Var sqdist, double epsilon) {
  const int ia = sqdist.id();
  Matrix out = sqdist.value().unaryExpr([epsilon](double d) { return std::log((d + 1.0) / (d + epsilon)); });
  return sqdist.tape().push(std::move(out), {sqdist}, [ia, epsilon](const Matrix& g, Tape& t, int) {
    Matrix dd = t.value(ia).unaryExpr([epsilon](double d) { return 1.0 / (d + 1.0) - 1.0 / (d + epsilon); });
    t.accumulate(ia, dd.cwiseProduct(g));
  });
}

Var masked_min_rows(Var a, const Matrix& mask) {
  const Matrix& x = a.value();
  require_shape(mask.rows() == x.rows() && mask.cols() == x.cols(), "masked_min_rows");
  Matrix out = Matrix::Zero(x.rows(), 1);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.rows()), -1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) == 0.0) continue;
      auto& best = arg[static_cast<std::size_t>(r)];
      if (best < 0 || x(r, c) < x(r, best)) best = c;
    }
    if (arg[static_cast<std::size_t>(r)] >= 0) out(r, 0) = x(r, arg[static_cast<std::size_t>(r)]);
  }
  const int ia = a.id();
  const Eigen::Index cols = x.cols();
  return a.tape().push(std::move(out), {a}, [ia, cols, arg = std::move(arg)](const Matrix& g, Tape& t, int) {
    Matrix gx = Matrix::Zero(g.rows(), cols);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (arg[static_cast<std::size_t>(r)] >= 0) gx(r, arg[static_cast<std::size_t>(r)]) = g(r, 0);
    }
    t.accumulate(ia, gx);
  });
}

Var weighted_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights) {
  const Matrix& z = logits.value();
  require_shape(static_cast<Eigen::Index>(labels.size()) == z.rows() && z.rows() > 0, "weighted_cross_entropy");
  require_shape(static_cast<Eigen::Index>(class_weights.size()) == z.cols(), "weighted_cross_entropy weights");
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  const auto n = static_cast<double>(z.rows());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double hi = z.row(r).maxCoeff();
    const Eigen::ArrayXd e = (z.row(r).array() - hi).exp().transpose();
    const double total = e.sum();
    probs.row(r) = (e / total).transpose();
    const int y = labels[static_cast<std::size_t>(r)];
    loss += class_weights[static_cast<std::size_t>(y)] * -(z(r, y) - hi - std::log(total));
  }
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  const int ia = logits.id();
  return logits.tape().push(
      std::move(out), {logits},
      [ia, n, probs = std::move(probs), y = std::vector<int>(labels.begin(), labels.end()),
       w = std::vector<double>(class_weights.begin(), class_weights.end())](const Matrix& g, Tape& t, int) {
        Matrix gz = probs;
        for (Eigen::Index r = 0; r < gz.rows(); ++r) {
          const int label = y[static_cast<std::size_t>(r)];
          gz(r, label) -= 1.0;
          gz.row(r) *= w[static_cast<std::size_t>(label)] / n;
        }
        t.accumulate(ia, gz * g(0, 0));
      });
}

}  // namespace mailproto::ag
