#include "mailproto/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mailproto {

using ag::Matrix;
using ag::Var;

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  ce += o.ce;
  div += o.div;
  cls += o.cls;
  sep += o.sep;
  spa += o.spa;
  total += o.total;
  return *this;
}

LossBreakdown& LossBreakdown::operator*=(double s) {
  ce *= s;
  div *= s;
  cls *= s;
  sep *= s;
  spa *= s;
  total *= s;
  return *this;
}

std::array<double, 2> class_weights(double positive_class_weight) {
  if (!(positive_class_weight >= 0.0 && positive_class_weight <= 1.0))
    throw std::invalid_argument("positive_class_weight must lie in [0, 1]");
  return {1.0 - positive_class_weight, positive_class_weight};
}

double loss_ce(const Matrix& probabilities, std::span<const int> labels, double positive_class_weight) {
  if (probabilities.rows() != static_cast<Eigen::Index>(labels.size()) || labels.empty())
    throw std::invalid_argument("loss_ce: one label per probability row required");
  const auto w = class_weights(positive_class_weight);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const double p = std::max(probabilities(static_cast<Eigen::Index>(i), y), 1e-12);
    total += w[static_cast<std::size_t>(y)] * -std::log(p);
  }
  return total / static_cast<double>(labels.size());
}

Var loss_ce(Var logits, std::span<const int> labels, double positive_class_weight) {
  const auto w = class_weights(positive_class_weight);
  return ag::weighted_cross_entropy(logits, labels, w);
}

namespace {

Matrix same_class_mask(std::span<const int> class_of) {
  const auto n = static_cast<Eigen::Index>(class_of.size());
  Matrix mask = Matrix::Zero(n, n);
  for (Eigen::Index q = 0; q < n; ++q)
    for (Eigen::Index r = 0; r < n; ++r)
      if (q != r && class_of[static_cast<std::size_t>(q)] == class_of[static_cast<std::size_t>(r)]) mask(q, r) = 1.0;
  return mask;
}

void report_zero_norm(const Matrix& prototypes, Diagnostics* diagnostics) {
  if (!diagnostics) return;
  for (Eigen::Index i = 0; i < prototypes.rows(); ++i) {
    if (prototypes.row(i).squaredNorm() == 0.0)
      diagnostics->add("prototype " + std::to_string(i) + " has zero norm; cosine treated as 0");
  }
}

Matrix class_mask(std::span<const int> unit_labels, std::span<const int> class_of, bool own) {
  Matrix mask(static_cast<Eigen::Index>(unit_labels.size()), static_cast<Eigen::Index>(class_of.size()));
  for (std::size_t u = 0; u < unit_labels.size(); ++u)
    for (std::size_t c = 0; c < class_of.size(); ++c)
      mask(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(c)) =
          ((class_of[c] == unit_labels[u]) == own) ? 1.0 : 0.0;
  return mask;
}

double nearest_sum_value(const Matrix& units, std::span<const int> unit_labels, const Matrix& prototypes,
                         std::span<const int> class_of, bool own) {
  if (units.rows() != static_cast<Eigen::Index>(unit_labels.size()))
    throw std::invalid_argument("one label per unit required");
  double total = 0.0;
  for (Eigen::Index u = 0; u < units.rows(); ++u) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < prototypes.rows(); ++c) {
      if ((class_of[static_cast<std::size_t>(c)] == unit_labels[static_cast<std::size_t>(u)]) != own) continue;
      best = std::min(best, (units.row(u) - prototypes.row(c)).squaredNorm());
    }
    if (std::isfinite(best)) total += best;
  }
  return total;
}

}  // namespace

double loss_div(const Matrix& prototypes, std::span<const int> class_of, double theta, Diagnostics* diagnostics) {
  report_zero_norm(prototypes, diagnostics);
  double total = 0.0;
  for (Eigen::Index q = 0; q < prototypes.rows(); ++q) {
    for (Eigen::Index r = 0; r < prototypes.rows(); ++r) {
      if (q == r || class_of[static_cast<std::size_t>(q)] != class_of[static_cast<std::size_t>(r)]) continue;
      const double nq = prototypes.row(q).norm();
      const double nr = prototypes.row(r).norm();
      const double cos = (nq == 0.0 || nr == 0.0) ? 0.0 : prototypes.row(q).dot(prototypes.row(r)) / (nq * nr);
      total += std::max(0.0, cos - theta);
    }
  }
  return total;
}

Var loss_div(Var prototypes, std::span<const int> class_of, double theta, Diagnostics* diagnostics) {
  report_zero_norm(prototypes.value(), diagnostics);
  Var unit = ag::row_normalize(prototypes);
  Var cos = ag::matmul_nt(unit, unit);
  Var excess = ag::relu(ag::add_scalar(cos, -theta));
  return ag::sum_all(ag::hadamard(excess, prototypes.tape().constant(same_class_mask(class_of))));
}

Var nearest_prototype_sum(Var units, std::span<const int> unit_labels, Var prototypes, std::span<const int> class_of,
                          bool own) {
  if (units.rows() != static_cast<Eigen::Index>(unit_labels.size()))
    throw std::invalid_argument("one label per unit required");
  Var d = ag::pairwise_sqdist(units, prototypes);
  return ag::sum_all(ag::masked_min_rows(d, class_mask(unit_labels, class_of, own)));
}

double loss_cls(const Matrix& units, std::span<const int> unit_labels, const Matrix& prototypes,
                std::span<const int> class_of) {
  if (units.rows() == 0) return 0.0;
  return nearest_sum_value(units, unit_labels, prototypes, class_of, true) / static_cast<double>(units.rows());
}

double loss_sep(const Matrix& units, std::span<const int> unit_labels, const Matrix& prototypes,
                std::span<const int> class_of, double margin) {
  if (units.rows() == 0) return 0.0;
  const double v = -nearest_sum_value(units, unit_labels, prototypes, class_of, false) / static_cast<double>(units.rows());
  return margin > 0.0 ? std::max(v, -margin) : v;
}

Var loss_cls(Var units, std::span<const int> unit_labels, Var prototypes, std::span<const int> class_of) {
  return ag::scale(nearest_prototype_sum(units, unit_labels, prototypes, class_of, true),
                   1.0 / static_cast<double>(units.rows()));
}

Var loss_sep(Var units, std::span<const int> unit_labels, Var prototypes, std::span<const int> class_of, double margin) {
  Var v = ag::scale(nearest_prototype_sum(units, unit_labels, prototypes, class_of, false),
                    -1.0 / static_cast<double>(units.rows()));
  if (margin > 0.0 && v.scalar() < -margin) return v.tape().constant(Matrix::Constant(1, 1, -margin));
  return v;
}

double loss_spa(const Matrix& head_weight) { return head_weight.cwiseAbs().sum(); }

Var loss_spa(Var head_weight) { return ag::abs_sum(head_weight); }

UnitCounts count_units(const Model& model, std::span<const ModelInput* const> batch) {
  UnitCounts c;
  const auto& cfg = model.config();
  for (const ModelInput* in : batch) {
    if (cfg.uses(Granularity::document)) c.units[0] += 1.0;
    if (cfg.uses(Granularity::sentence)) c.units[1] += static_cast<double>(in->sentence_ids.size());
    if (cfg.uses(Granularity::phrase)) c.units[2] += static_cast<double>(in->phrases.size());
  }
  return c;
}

namespace {

std::optional<Var> units_of(const ForwardPass& fp, Granularity g) {
  switch (g) {
    case Granularity::document: return fp.views.document;
    case Granularity::sentence: return fp.views.sentences;
    case Granularity::phrase: return fp.views.phrases;
  }
  return std::nullopt;
}

void require_label(const ModelInput& in) {
  if (in.label != 0 && in.label != 1) throw std::invalid_argument("training example '" + in.email_id + "' has no label");
}

}  // namespace

Var example_loss(ag::Tape& tape, const Model& model, const ModelInput& input, const LossWeights& w,
                 std::size_t batch_size, const UnitCounts& counts, LossBreakdown* breakdown) {
  require_label(input);
  const ForwardPass fp = model.forward(tape, input);
  const int label = input.label;
  const double inv_n = 1.0 / static_cast<double>(batch_size);
  Var ce = loss_ce(fp.logits, std::span<const int>(&label, 1), w.positive_class_weight);
  Var total = ag::scale(ce, inv_n);
  LossBreakdown b;
  b.ce = ce.scalar() * inv_n;
  if (model.config().use_prototypes) {
    for (Granularity g : kGranularities) {
      if (!model.config().uses(g)) continue;
      const auto units = units_of(fp, g);
      const double n_units = counts.units[static_cast<std::size_t>(g)];
      if (!units || n_units <= 0.0) continue;
      const PrototypeBank& bank = model.bank(g);
      Var protos = tape.parameter(*bank.vectors);
      const std::vector<int> labels(static_cast<std::size_t>(units->rows()), label);
      Var own = nearest_prototype_sum(*units, labels, protos, bank.class_of, true);
      Var other = nearest_prototype_sum(*units, labels, protos, bank.class_of, false);
      b.cls += own.scalar() / n_units;
      b.sep -= other.scalar() / n_units;
      total = ag::add(total, ag::scale(own, w.beta / n_units));
      total = ag::add(total, ag::scale(other, -w.gamma / n_units));
    }
  }
  b.total = total.scalar();
  if (breakdown) *breakdown += b;
  return total;
}

Var batch_loss(ag::Tape& tape, const Model& model, const LossWeights& w, LossBreakdown* breakdown,
               Diagnostics* diagnostics) {
  LossBreakdown b;
  Var spa = loss_spa(tape.parameter(*model.head().weight));
  b.spa = spa.scalar();
  Var total = ag::scale(spa, w.delta);
  if (model.config().use_prototypes) {
    for (Granularity g : kGranularities) {
      if (!model.config().uses(g)) continue;
      const PrototypeBank& bank = model.bank(g);
      Var div = loss_div(tape.parameter(*bank.vectors), bank.class_of, w.theta, diagnostics);
      b.div += div.scalar();
      total = ag::add(total, ag::scale(div, w.alpha));
    }
  }
  b.total = total.scalar();
  if (breakdown) *breakdown += b;
  return total;
}

Var total_loss(ag::Tape& tape, const Model& model, std::span<const ModelInput* const> batch, const LossWeights& w,
               LossBreakdown* breakdown) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  std::vector<ForwardPass> passes;
  std::vector<Var> logits;
  std::vector<int> labels;
  for (const ModelInput* in : batch) {
    require_label(*in);
    passes.push_back(model.forward(tape, *in));
    logits.push_back(passes.back().logits);
    labels.push_back(in->label);
  }
  LossBreakdown b;
  Var ce = loss_ce(ag::concat_rows(logits), labels, w.positive_class_weight);
  b.ce = ce.scalar();
  Var total = ce;
  if (model.config().use_prototypes) {
    for (Granularity g : kGranularities) {
      if (!model.config().uses(g)) continue;
      std::vector<Var> rows;
      std::vector<int> unit_labels;
      for (std::size_t i = 0; i < passes.size(); ++i) {
        if (auto u = units_of(passes[i], g)) {
          rows.push_back(*u);
          unit_labels.insert(unit_labels.end(), static_cast<std::size_t>(u->rows()), batch[i]->label);
        }
      }
      if (rows.empty()) continue;
      const PrototypeBank& bank = model.bank(g);
      Var protos = tape.parameter(*bank.vectors);
      Var units = ag::concat_rows(rows);
      Var cls = loss_cls(units, unit_labels, protos, bank.class_of);
      Var sep = loss_sep(units, unit_labels, protos, bank.class_of, w.sep_margin);
      b.cls += cls.scalar();
      b.sep += sep.scalar();
      total = ag::add(total, ag::add(ag::scale(cls, w.beta), ag::scale(sep, w.gamma)));
    }
  }
  LossBreakdown bb;
  Var rest = batch_loss(tape, model, w, &bb);
  b.div = bb.div;
  b.spa = bb.spa;
  total = ag::add(total, rest);
  b.total = total.scalar();
  if (breakdown) *breakdown += b;
  return total;
}

}  // namespace mailproto
