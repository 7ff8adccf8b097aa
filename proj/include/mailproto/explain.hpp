#pragma once

// Prototype evidence for a prediction, integrated-gradients attribution over the
// document sequence and attention-based keyword/keyphrase extraction.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mailproto/model.hpp"

namespace mailproto {

struct PrototypeEvidence {
  int prototype = 0;
  int prototype_class = 0;
  // Similarity to the best matching input unit; equals the aggregate score for documents.
  double similarity = 0.0;
  // The entry of the model's similarity vector for this prototype.
  double aggregate_score = 0.0;
  // head weight for the predicted class times the fused (lambda-scaled) score
  double contribution = 0.0;
  int matched_unit = 0;  // sentence or phrase index, 0 for documents
  std::string matched_text;
  ProjectionRecord source;
};

struct ExplanationReport {
  std::string email_id;
  int label = 0;
  std::array<double, 2> probabilities{0.5, 0.5};
  bool structural_degraded = false;
  std::string model_version;
  int top_n = 0;
  std::array<std::optional<std::vector<PrototypeEvidence>>, 3> ranked;  // absent for unused granularities
};

class NotProjectedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ranked by similarity, descending; ties go to the lower prototype index.
ExplanationReport explain(const Model& model, const PreparedEmail& email, int top_n);
std::string format_report(const ExplanationReport& report);
nlohmann::json to_json(const ExplanationReport& report);

struct Attribution {
  std::vector<double> token_scores;  // per input row, summed over embedding dimensions
  ag::Matrix per_dimension;
  std::string baseline;
  int steps = 0;
  double f_input = 0.0;
  double f_baseline = 0.0;

  double total() const;
  // |sum of attributions - (f(x) - f(baseline))|
  double completeness_gap() const { return std::abs(total() - (f_input - f_baseline)); }
};

// Value and gradient of a scalar function of an embedding matrix.
using ScoreFunction = std::function<double(const ag::Matrix& x, ag::Matrix* gradient)>;

// (x - baseline) * mean of the gradient at the midpoints (k + 1/2)/steps of the straight path.
Attribution integrated_gradients(const ScoreFunction& f, const ag::Matrix& input, const ag::Matrix& baseline,
                                 int steps, std::string baseline_description = "custom");

// Attribution of the positive-class logit to the document token embeddings; the baseline
// is the [PAD] embedding at every position.
Attribution document_attribution(const Model& model, const ModelInput& input, int steps = 50);

// Sums document-token attributions onto the dependency tokens of each body sentence by byte overlap.
std::vector<std::vector<double>> sentence_token_attribution(const PreparedEmail& email, const ModelInput& input,
                                                             const Attribution& attribution);

// Incoming final-layer attention per token of the whole sentence graph; nullopt for gcn.
std::optional<std::vector<double>> sentence_attention(const Model& model, const DependencyGraph& graph);

const std::set<std::string>& default_keyphrase_relations();

struct Keyphrase {
  int keyword = 0;
  std::vector<int> tokens;  // ascending, contiguous, contains keyword
  std::string keyword_text;
  std::string text;
  bool fallback = false;  // no noun in the sentence
};

// Highest-attention noun (ties: attribution, then index) plus its contiguous modifiers.
// Without nouns the highest-attribution token is used instead.
Keyphrase attention_keyphrases(const DependencyGraph& graph, std::span<const double> attention,
                               std::span<const double> attribution = {},
                               const std::set<std::string>& relations = default_keyphrase_relations());

struct SentenceKeyphrases {
  int sentence = 0;
  std::string sentence_text;
  Keyphrase keyphrase;
};

std::vector<SentenceKeyphrases> email_keyphrases(const Model& model, const PreparedEmail& email,
                                                 int ig_steps = 50);

}  // namespace mailproto
