#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mailproto/encoders.hpp"
#include "mailproto/protonet.hpp"

namespace mailproto {

// Which views feed the head: text (document + sentences), graph (phrases) or both.
enum class ViewVariant { text, graph, text_graph };
std::string to_string(ViewVariant v);
ViewVariant parse_view_variant(std::string_view s);

struct ModelConfig {
  EncoderConfig encoder;
  ViewVariant variant = ViewVariant::text_graph;
  bool use_prototypes = true;
  int j = 20;  // document prototypes
  int k = 20;  // sentence prototypes
  int m = 20;  // phrase prototypes
  double lambda1 = 0.3;
  double lambda2 = 0.5;
  double epsilon = kDefaultEpsilon;
  Aggregation aggregation = Aggregation::mean;
  std::uint64_t init_seed = 1;

  bool uses(Granularity g) const;
  int count(Granularity g) const;
};

void validate(const ModelConfig& config);

struct Prediction {
  std::array<double, 2> probabilities{0.5, 0.5};
  int label = 0;
  SimilarityVector similarities;  // empty rows for granularities the variant does not use
  MultiViewEmbedding views;
};

struct ForwardPass {
  ViewVars views;
  std::array<std::optional<ag::Var>, 3> scores;  // 1 x count per used granularity
  ag::Var fused;
  ag::Var logits;  // 1 x 2
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  const MultiViewEncoder& encoder() const { return encoder_; }

  ModelInput featurize(const PreparedEmail& email) const { return encoder_.featurize(email); }
  ForwardPass forward(ag::Tape& tape, const ModelInput& input,
                      std::optional<ag::Var> doc_embedding = std::nullopt) const;
  // Inference only; safe to call concurrently.
  Prediction predict(const ModelInput& input) const;

  PrototypeBank& bank(Granularity g) { return banks_[static_cast<std::size_t>(g)]; }
  const PrototypeBank& bank(Granularity g) const { return banks_[static_cast<std::size_t>(g)]; }
  ClassifierHead& head() { return head_; }
  const ClassifierHead& head() const { return head_; }

  std::vector<ag::Parameter*> parameters() const { return store_.all(); }
  ag::Parameter* parameter(const std::string& name) const { return store_.find(name); }
  // Every used bank carries projection provenance (trivially true without prototypes).
  bool projected() const;
  // Hash of all weights and projection sources.
  std::string version() const;

 private:
  ModelConfig config_;
  ParameterStore store_;
  Rng init_rng_;
  MultiViewEncoder encoder_;
  std::array<PrototypeBank, 3> banks_;
  ClassifierHead head_;
};

// Parameter snapshots for best-epoch restore.
std::vector<ag::Matrix> snapshot(const Model& model);
void restore(Model& model, const std::vector<ag::Matrix>& values);

}  // namespace mailproto
