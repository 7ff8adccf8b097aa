#pragma once

// Prototype-driven edit suggestions for the subject, opening, main content and
// closing of an email, and the batch flip-ratio simulation.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mailproto/explain.hpp"

namespace mailproto {

enum class EditPosition { subject = 0, opening = 1, main = 2, closing = 3 };
inline constexpr std::array kEditPositions{EditPosition::subject, EditPosition::opening, EditPosition::main,
                                           EditPosition::closing};
std::string to_string(EditPosition p);
EditPosition parse_edit_position(std::string_view s);

const std::vector<std::string>& default_greetings();
const std::vector<std::string>& default_sign_offs();

struct Lexicons {
  std::vector<std::string> greetings = default_greetings();
  std::vector<std::string> sign_offs = default_sign_offs();
};

// True when the lowercased sentence starts with an entry followed by a non-letter or the end.
bool matches_lexicon(std::string_view sentence, const std::vector<std::string>& lexicon);

struct EmailPositions {
  std::string subject;
  std::vector<std::string> sentences;
  std::optional<int> opening;
  std::vector<int> main;
  std::optional<int> closing;

  std::vector<int> sentences_at(EditPosition p) const;
};

// Opening and closing need at least two sentences; everything else is main content.
EmailPositions classify_positions(const std::string& subject, const std::vector<std::string>& sentences,
                                  const Lexicons& lexicons = {});
// Uses email.sentences, or segments the body when they are empty.
EmailPositions classify_positions(const Email& email, const Lexicons& lexicons = {});

struct EditOptions {
  double topic_threshold = 0.5;
  std::uint64_t seed = 1;
  int max_donors = 5;  // distinct donor keyphrases tried per target
  Lexicons lexicons;
};

struct EditSuggestion {
  EditPosition position = EditPosition::main;
  int sentence = -1;  // -1 for the subject
  TextSpan span;      // byte range in the subject or body
  std::string original;
  std::string replacement;
  Granularity source_granularity = Granularity::sentence;
  int prototype = 0;
  ProjectionRecord source;
  double topic_match = 0.0;  // cosine of the donor's and the input's document embeddings
  bool random_fallback = false;
  double before = 0.0;  // p(response)
  double after = 0.0;
  std::string edited_subject;
  std::string edited_body;
};

class NoPositivePrototypesError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sorted by after-probability, descending. Empty when the position is absent or every
// candidate replacement equals the original span.
std::vector<EditSuggestion> suggest_edits(const Model& model, const PreparedEmail& email, EditPosition position,
                                          const EditOptions& options = {});

nlohmann::json to_json(const EditSuggestion& s);
std::string format_suggestions(const std::vector<EditSuggestion>& suggestions);

struct PositionOutcome {
  long negatives = 0;  // predicted negatives considered
  long edited = 0;     // of those, emails with at least one suggestion
  long flipped = 0;    // best suggestion turns the prediction positive
  std::optional<double> ratio() const;
};

struct EditSimulationRun {
  std::uint64_t seed = 0;
  std::array<PositionOutcome, 4> outcomes;
};

EditSimulationRun simulate_edits(const Model& model, std::span<const PreparedEmail> emails,
                                 std::span<const EditPosition> positions, const EditOptions& options = {},
                                 int threads = 0);

struct PositionSummary {
  EditPosition position = EditPosition::main;
  long negatives = 0;
  long edited = 0;
  long flipped = 0;
  std::optional<double> mean;  // over runs with at least one negative
  double sd = 0.0;
  int runs_with_negatives = 0;
};

struct EditSimulationReport {
  std::vector<EditSimulationRun> runs;
  std::vector<PositionSummary> positions;
};

EditSimulationReport summarize_edit_runs(std::vector<EditSimulationRun> runs, std::span<const EditPosition> positions);
// One run per seed against the same model; the seed drives the random donor fallback.
EditSimulationReport simulate_edits(const Model& model, std::span<const PreparedEmail> emails,
                                    std::span<const EditPosition> positions, std::span<const std::uint64_t> seeds,
                                    const EditOptions& options = {}, int threads = 0);

std::string format_simulation_report(const EditSimulationReport& report);
nlohmann::json to_json(const EditSimulationReport& report);

}  // namespace mailproto
