#pragma once

// Training objective: weighted cross entropy, prototype diversity, clustering,
// separation and L1 sparsity of the head.

#include <span>
#include <vector>

#include "mailproto/autograd.hpp"
#include "mailproto/corpus.hpp"
#include "mailproto/model.hpp"

namespace mailproto {

struct LossWeights {
  double positive_class_weight = 0.5;
  double theta = 0.3;
  double alpha = 0.01;  // diversity
  double beta = 0.01;   // clustering
  double gamma = 0.01;  // separation
  double delta = 0.001;  // sparsity
  double sep_margin = 0.0;  // > 0 clamps L_sep at -margin
};

struct LossBreakdown {
  double ce = 0.0;
  double div = 0.0;
  double cls = 0.0;
  double sep = 0.0;
  double spa = 0.0;
  double total = 0.0;
  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown& operator*=(double s);
};

// Class weights {1 - w_pos, w_pos}.
std::array<double, 2> class_weights(double positive_class_weight);

// Mean weighted negative log-likelihood of probability rows; log clamped at 1e-12.
double loss_ce(const ag::Matrix& probabilities, std::span<const int> labels, double positive_class_weight);
ag::Var loss_ce(ag::Var logits, std::span<const int> labels, double positive_class_weight);

// Sum over ordered same-class pairs q != r of max(0, cos(p_q, p_r) - theta).
// Zero-norm prototypes count as cos = 0 and are reported through diagnostics.
double loss_div(const ag::Matrix& prototypes, std::span<const int> class_of, double theta,
                Diagnostics* diagnostics = nullptr);
ag::Var loss_div(ag::Var prototypes, std::span<const int> class_of, double theta, Diagnostics* diagnostics = nullptr);

// Sum over units of the minimum squared distance to own-class (own=true) or other-class prototypes.
ag::Var nearest_prototype_sum(ag::Var units, std::span<const int> unit_labels, ag::Var prototypes,
                              std::span<const int> class_of, bool own);
double loss_cls(const ag::Matrix& units, std::span<const int> unit_labels, const ag::Matrix& prototypes,
                std::span<const int> class_of);
double loss_sep(const ag::Matrix& units, std::span<const int> unit_labels, const ag::Matrix& prototypes,
                std::span<const int> class_of, double margin = 0.0);
ag::Var loss_cls(ag::Var units, std::span<const int> unit_labels, ag::Var prototypes, std::span<const int> class_of);
ag::Var loss_sep(ag::Var units, std::span<const int> unit_labels, ag::Var prototypes, std::span<const int> class_of,
                 double margin = 0.0);

double loss_spa(const ag::Matrix& head_weight);
ag::Var loss_spa(ag::Var head_weight);

// Units of each granularity in a batch, used to turn per-example sums into batch means.
struct UnitCounts {
  std::array<double, 3> units{0.0, 0.0, 0.0};
};
UnitCounts count_units(const Model& model, std::span<const ModelInput* const> batch);

// Per-example share of the batch objective: w·CE/n plus beta·L_cls and gamma·L_sep shares.
// Without a margin the batch objective is exactly the sum of these shares plus batch_loss().
ag::Var example_loss(ag::Tape& tape, const Model& model, const ModelInput& input, const LossWeights& w,
                     std::size_t batch_size, const UnitCounts& counts, LossBreakdown* breakdown = nullptr);
// alpha·L_div summed over banks plus delta·L_spa.
ag::Var batch_loss(ag::Tape& tape, const Model& model, const LossWeights& w, LossBreakdown* breakdown = nullptr,
                   Diagnostics* diagnostics = nullptr);

// The whole objective on one tape; used for reference checks. Honours sep_margin per granularity.
ag::Var total_loss(ag::Tape& tape, const Model& model, std::span<const ModelInput* const> batch,
                   const LossWeights& w, LossBreakdown* breakdown = nullptr);

}  // namespace mailproto
