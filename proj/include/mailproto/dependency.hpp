#pragma once

// Dependency graphs, the CoNLL-U subset reader/writer, sentence segmentation,
// phrase subgraph extraction and per-email preparation for the structural view.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mailproto/corpus.hpp"

namespace mailproto {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DepToken {
  std::string form;
  std::string upos;
  int head = -1;  // 0-based governor index, -1 for the root
  std::string deprel;
  bool operator==(const DepToken&) const = default;
};

// (dependent, relation, governor) triple.
struct DepEdge {
  int dependent = 0;
  std::string relation;
  int governor = 0;
  bool operator==(const DepEdge&) const = default;
};

class DependencyGraph {
 public:
  DependencyGraph() = default;
  // Throws ParseError unless the tokens form a single-rooted tree.
  explicit DependencyGraph(std::vector<DepToken> tokens);

  const std::vector<DepToken>& tokens() const { return tokens_; }
  const DepToken& token(int i) const { return tokens_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(tokens_.size()); }
  int root_index() const { return root_; }
  std::vector<DepEdge> edges() const;
  std::vector<std::vector<int>> children() const;
  // Token i and all of its descendants, ascending.
  std::vector<int> subtree(int i) const;
  std::string text() const;  // forms joined by single spaces

  bool operator==(const DependencyGraph&) const = default;

 private:
  std::vector<DepToken> tokens_;
  int root_ = -1;
};

// Validation helper usable without constructing a graph; empty string when valid.
std::string validate_tree(const std::vector<DepToken>& tokens);

struct SentenceKey {
  std::string email_id;
  int sentence_index = 0;
  auto operator<=>(const SentenceKey&) const = default;
};

using ParseIndex = std::map<SentenceKey, DependencyGraph>;

// Reads parse blocks separated by blank lines with "# email_id = " and "# sent_index = "
// comments. Token lines carry either the five columns ID FORM UPOS HEAD DEPREL or the ten
// standard CoNLL-U columns (only those five are read). A token listed twice (two governors),
// several roots or a cycle rejects the block.
// Invalid blocks and blocks naming ids outside known_ids (when given) are dropped with a diagnostic.
ParseIndex parse_conllu(std::string_view text, Diagnostics& diagnostics,
                        const std::set<std::string>* known_ids = nullptr);
ParseIndex load_parses(const std::filesystem::path& path, Diagnostics& diagnostics,
                       const std::set<std::string>* known_ids = nullptr);
std::string format_conllu(const SentenceKey& key, const DependencyGraph& graph);
void write_parses(const std::filesystem::path& path, const ParseIndex& parses);

struct TextSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

const std::vector<std::string>& default_abbreviations();

// Splits after runs of . ! ? followed by whitespace, and at blank lines. A period that
// ends a known abbreviation does not split.
std::vector<TextSpan> sentence_spans(std::string_view body,
                                     const std::vector<std::string>& abbreviations = default_abbreviations());
std::vector<std::string> sentence_segment(std::string_view body,
                                          const std::vector<std::string>& abbreviations = default_abbreviations());

// Star-shaped stand-in for an unparsed sentence: the first token is ROOT and every other
// token depends on it with relation "dep"; all tags are "X".
DependencyGraph fallback_graph(std::string_view sentence);

struct PhraseSubgraph {
  std::string anchor_relation;  // "root" for the fallback subgraph
  int anchor = 0;
  std::vector<int> nodes;  // ascending token indices
  std::vector<DepEdge> edges;
  std::string email_id;
  int sentence_index = 0;
  std::string surface_text;
};

inline const std::set<std::string>& default_anchor_relations() {
  static const std::set<std::string> anchors{"nsubj", "dobj"};
  return anchors;
}

// One subgraph per token whose relation is an anchor: ROOT + that token + its subtree.
// Without anchors, a single subgraph of ROOT and its direct dependents.
std::vector<PhraseSubgraph> extract_subgraphs(const DependencyGraph& graph,
                                              const std::set<std::string>& anchors = default_anchor_relations(),
                                              const std::string& email_id = {}, int sentence_index = 0);

// Byte offsets of each form within text, matched left to right; nullopt if any form is missing.
std::optional<std::vector<TextSpan>> align_tokens(std::string_view text, const std::vector<DepToken>& tokens,
                                                  std::size_t from = 0);

// Replaces target tokens [begin, end] with donor tokens [donor_begin, donor_end]. The donor
// head takes over the governor and relation of target_head; dependents of removed tokens are
// re-attached to the donor head.
DependencyGraph splice_phrase(const DependencyGraph& target, int begin, int end, int target_head,
                              const DependencyGraph& donor, int donor_begin, int donor_end, int donor_head);

struct PreparedSentence {
  std::string text;
  std::optional<std::size_t> body_offset;  // absent when the parse could not be located in the body
  DependencyGraph graph;
  bool parsed = false;
  std::vector<TextSpan> token_spans;  // relative to text; empty when alignment failed
};

struct PreparedEmail {
  Email email;
  int label = -1;
  std::vector<PreparedSentence> sentences;
  std::vector<PhraseSubgraph> phrases;
  bool structural_degraded = false;  // some sentence fell back to a star graph
};

// Sentences come from the parse blocks for this email when present; body text not covered by
// any parse is segmented and given fallback graphs. Populates email.sentences.
PreparedEmail prepare_email(const Email& email, const ParseIndex* parses,
                            const std::set<std::string>& anchors = default_anchor_relations());
PreparedEmail prepare_email(const LabeledEmail& email, const ParseIndex* parses,
                            const std::set<std::string>& anchors = default_anchor_relations());

// Recomputes phrases after sentences were edited in place.
void refresh_phrases(PreparedEmail& prepared, const std::set<std::string>& anchors = default_anchor_relations());

}  // namespace mailproto
