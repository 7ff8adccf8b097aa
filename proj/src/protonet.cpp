#include "mailproto/protonet.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mailproto {

using ag::Matrix;
using ag::RowVector;

std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::document: return "document";
    case Granularity::sentence: return "sentence";
    case Granularity::phrase: return "phrase";
  }
  return "?";
}

Granularity parse_granularity(std::string_view s) {
  if (s == "document" || s == "D") return Granularity::document;
  if (s == "sentence" || s == "S") return Granularity::sentence;
  if (s == "phrase" || s == "P") return Granularity::phrase;
  throw std::invalid_argument("unknown granularity '" + std::string(s) + "'");
}

std::string to_string(Aggregation a) { return a == Aggregation::mean ? "mean" : "max"; }

Aggregation parse_aggregation(std::string_view s) {
  if (s == "mean") return Aggregation::mean;
  if (s == "max") return Aggregation::max;
  throw std::invalid_argument("unknown aggregation '" + std::string(s) + "'");
}

namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
}

}  // namespace

double similarity_from_sqdist(double sqdist, double epsilon) {
  check_epsilon(epsilon);
  return std::log((sqdist + 1.0) / (sqdist + epsilon));
}

double similarity(const RowVector& p, const RowVector& e, double epsilon) {
  if (p.size() != e.size())
    throw std::invalid_argument("similarity: dimension mismatch (" + std::to_string(p.size()) + " vs " +
                                std::to_string(e.size()) + ")");
  return similarity_from_sqdist((p - e).squaredNorm(), epsilon);
}

bool PrototypeBank::projected() const {
  if (projection.size() != class_of.size()) return false;
  for (const auto& p : projection)
    if (!p) return false;
  return true;
}

std::vector<int> PrototypeBank::prototypes_of_class(int label) const {
  std::vector<int> out;
  for (int i = 0; i < count(); ++i)
    if (class_of[static_cast<std::size_t>(i)] == label) out.push_back(i);
  return out;
}

PrototypeBank make_bank(Granularity g, int count, int d, ParameterStore& store, Rng& rng, double epsilon) {
  if (count <= 0 || count % 2 != 0) throw std::invalid_argument("prototype counts must be even and positive");
  check_epsilon(epsilon);
  PrototypeBank bank;
  bank.granularity = g;
  bank.vectors = &store.normal("prototypes." + to_string(g), count, d, 1.0, rng, true);
  bank.epsilon = epsilon;
  for (int i = 0; i < count; ++i) bank.class_of.push_back(i < count / 2 ? 0 : 1);
  bank.projection.assign(static_cast<std::size_t>(count), std::nullopt);
  return bank;
}

RowVector aggregate_scores(const Matrix& prototypes, const Matrix& units, double epsilon, Aggregation aggregation) {
  check_epsilon(epsilon);
  RowVector out = RowVector::Zero(prototypes.rows());
  if (units.rows() == 0) return out;
  if (units.cols() != prototypes.cols()) throw std::invalid_argument("aggregate_scores: dimension mismatch");
  for (Eigen::Index i = 0; i < prototypes.rows(); ++i) {
    double acc = aggregation == Aggregation::mean ? 0.0 : -std::numeric_limits<double>::infinity();
    for (Eigen::Index u = 0; u < units.rows(); ++u) {
      const double s = similarity_from_sqdist((prototypes.row(i) - units.row(u)).squaredNorm(), epsilon);
      acc = aggregation == Aggregation::mean ? acc + s : std::max(acc, s);
    }
    out(i) = aggregation == Aggregation::mean ? acc / static_cast<double>(units.rows()) : acc;
  }
  return out;
}

ag::Var aggregate_scores(ag::Var units, ag::Var prototypes, double epsilon, Aggregation aggregation) {
  check_epsilon(epsilon);
  ag::Var sims = ag::log_similarity(ag::pairwise_sqdist(units, prototypes), epsilon);
  return aggregation == Aggregation::mean ? ag::mean_rows(sims) : ag::max_rows(sims);
}

const RowVector& SimilarityVector::at(Granularity g) const {
  switch (g) {
    case Granularity::document: return S_D;
    case Granularity::sentence: return S_S;
    case Granularity::phrase: return S_P;
  }
  return S_D;
}

RowVector fuse(const SimilarityVector& sv, double lambda1, double lambda2) {
  RowVector out(sv.S_D.size() + sv.S_S.size() + sv.S_P.size());
  out << sv.S_D, lambda1 * sv.S_S, lambda2 * sv.S_P;
  return out;
}

std::array<double, 2> softmax2(double z0, double z1) {
  const double hi = std::max(z0, z1);
  const double e0 = std::exp(z0 - hi);
  const double e1 = std::exp(z1 - hi);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

std::array<double, 2> fuse_and_classify(const SimilarityVector& sv, const ClassifierHead& head) {
  const RowVector fused = fuse(sv, head.lambda1, head.lambda2);
  if (fused.size() != head.weight->value.rows())
    throw std::invalid_argument("fuse_and_classify: head expects " + std::to_string(head.weight->value.rows()) +
                                " inputs, got " + std::to_string(fused.size()));
  const RowVector logits = fused * head.weight->value + head.bias->value;
  return softmax2(logits(0), logits(1));
}

std::vector<int> nearest_same_class(const PrototypeBank& bank, const UnitPool& pool) {
  const Matrix& protos = bank.value();
  if (pool.embeddings.rows() != static_cast<Eigen::Index>(pool.labels.size()))
    throw std::invalid_argument("unit pool labels do not match embeddings");
  std::vector<int> out(static_cast<std::size_t>(bank.count()), -1);
  for (int i = 0; i < bank.count(); ++i) {
    const int cls = bank.class_of[static_cast<std::size_t>(i)];
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index u = 0; u < pool.embeddings.rows(); ++u) {
      if (pool.labels[static_cast<std::size_t>(u)] != cls) continue;
      const double dist = (protos.row(i) - pool.embeddings.row(u)).squaredNorm();
      if (dist < best) {
        best = dist;
        out[static_cast<std::size_t>(i)] = static_cast<int>(u);
      }
    }
    if (out[static_cast<std::size_t>(i)] < 0)
      throw std::runtime_error("cannot project " + to_string(bank.granularity) + " prototype " + std::to_string(i) +
                               ": no training units of class " + std::to_string(cls));
  }
  return out;
}

std::vector<int> project_prototypes(PrototypeBank& bank, const UnitPool& pool) {
  const std::vector<int> nearest = nearest_same_class(bank, pool);
  Matrix& protos = bank.vectors->value;
  bank.projection.assign(static_cast<std::size_t>(bank.count()), std::nullopt);
  for (int i = 0; i < bank.count(); ++i) {
    const int u = nearest[static_cast<std::size_t>(i)];
    ProjectionRecord rec = u < static_cast<int>(pool.provenance.size()) ? pool.provenance[static_cast<std::size_t>(u)]
                                                                        : ProjectionRecord{};
    rec.distance = (protos.row(i) - pool.embeddings.row(u)).norm();
    rec.source_label = pool.labels[static_cast<std::size_t>(u)];
    protos.row(i) = pool.embeddings.row(u);
    bank.projection[static_cast<std::size_t>(i)] = std::move(rec);
  }
  return nearest;
}

}  // namespace mailproto
