#pragma once

// Prototype banks, the log-ratio similarity, per-granularity score aggregation,
// the fusion head and projection of prototypes onto training units.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mailproto/autograd.hpp"
#include "mailproto/parameters.hpp"

namespace mailproto {

enum class Granularity { document = 0, sentence = 1, phrase = 2 };
inline constexpr std::array kGranularities{Granularity::document, Granularity::sentence, Granularity::phrase};
std::string to_string(Granularity g);
Granularity parse_granularity(std::string_view s);

enum class Aggregation { mean, max };
std::string to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view s);

inline constexpr double kDefaultEpsilon = 1e-4;

// log((|p - e|^2 + 1) / (|p - e|^2 + eps)). Throws on dimension mismatch or eps outside (0, 1).
double similarity(const ag::RowVector& p, const ag::RowVector& e, double epsilon = kDefaultEpsilon);
double similarity_from_sqdist(double sqdist, double epsilon = kDefaultEpsilon);

struct ProjectionRecord {
  std::string source_id;
  int unit_index = 0;  // 0 for documents, sentence or phrase index otherwise
  std::string surface_text;
  double distance = 0.0;  // Euclidean distance before replacement
  int source_label = 0;
  std::string source_subject;
  ag::RowVector source_document;  // e_D of the source email
  std::string source_parse;       // CoNLL-U block of the source sentence, empty for documents
};

struct PrototypeBank {
  Granularity granularity = Granularity::document;
  ag::Parameter* vectors = nullptr;  // count x d, owned by a ParameterStore
  std::vector<int> class_of;
  double epsilon = kDefaultEpsilon;
  std::vector<std::optional<ProjectionRecord>> projection;

  int count() const { return static_cast<int>(class_of.size()); }
  const ag::Matrix& value() const { return vectors->value; }
  bool projected() const;
  std::vector<int> prototypes_of_class(int label) const;
};

// count/2 prototypes per class: indices [0, count/2) belong to class 0, the rest to class 1.
PrototypeBank make_bank(Granularity g, int count, int d, ParameterStore& store, Rng& rng,
                        double epsilon = kDefaultEpsilon);

// Scores of each prototype against a set of units (rows): mean or max over units. No units -> zeros.
ag::RowVector aggregate_scores(const ag::Matrix& prototypes, const ag::Matrix& units, double epsilon,
                               Aggregation aggregation);
ag::Var aggregate_scores(ag::Var units, ag::Var prototypes, double epsilon, Aggregation aggregation);

struct SimilarityVector {
  ag::RowVector S_D;
  ag::RowVector S_S;
  ag::RowVector S_P;
  const ag::RowVector& at(Granularity g) const;
};

struct ClassifierHead {
  ag::Parameter* weight = nullptr;  // fused_dim x 2
  ag::Parameter* bias = nullptr;    // 1 x 2
  double lambda1 = 0.3;
  double lambda2 = 0.5;
};

// [S_D ; lambda1 S_S ; lambda2 S_P]
ag::RowVector fuse(const SimilarityVector& sv, double lambda1, double lambda2);
std::array<double, 2> softmax2(double z0, double z1);
std::array<double, 2> fuse_and_classify(const SimilarityVector& sv, const ClassifierHead& head);

struct UnitPool {
  ag::Matrix embeddings;  // one row per unit
  std::vector<int> labels;
  std::vector<ProjectionRecord> provenance;  // distance filled in by projection
};

// Index of the nearest same-class unit for every prototype (lowest index on ties).
std::vector<int> nearest_same_class(const PrototypeBank& bank, const UnitPool& pool);
// Replaces every prototype by its nearest same-class unit and records provenance.
// Throws std::runtime_error if a class has no units.
std::vector<int> project_prototypes(PrototypeBank& bank, const UnitPool& pool);

}  // namespace mailproto
