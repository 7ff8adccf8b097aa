#pragma once

// Semantic view (document and sentence text encoders) and structural view
// (graph encoder over dependency subgraphs).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mailproto/autograd.hpp"
#include "mailproto/dependency.hpp"
#include "mailproto/parameters.hpp"
#include "mailproto/tokenizer.hpp"

namespace mailproto {

enum class TextEncoderKind { pretrained_transformer, tiny_trainable };
enum class GraphEncoderKind { gcn, gat };

std::string to_string(TextEncoderKind k);
std::string to_string(GraphEncoderKind k);
TextEncoderKind parse_text_encoder_kind(std::string_view s);
GraphEncoderKind parse_graph_encoder_kind(std::string_view s);

// Which email fields enter the document sequence: subset of "SCOE".
struct ComponentSet {
  bool subject = true;
  bool body = true;
  bool org = true;
  bool interests = true;

  static ComponentSet parse(std::string_view letters);
  std::string str() const;
  bool operator==(const ComponentSet&) const = default;
};

struct EncoderConfig {
  TextEncoderKind text_encoder_kind = TextEncoderKind::tiny_trainable;
  std::string pretrained_name;  // only meaningful for pretrained_transformer
  GraphEncoderKind graph_encoder_kind = GraphEncoderKind::gat;
  int d = 32;
  int heads = 4;
  int text_layers = 2;
  int graph_layers = 2;
  int ffn = 64;
  int vocab_buckets = 2048;
  std::uint64_t vocab_salt = 0x6d61696cULL;
  int max_document_tokens = 512;
  int max_sentence_tokens = 128;
  ComponentSet components;
};

// Throws std::invalid_argument describing the first problem; the pretrained tier is
// reported as unavailable in this build.
void validate(const EncoderConfig& config);

enum class Segment { special, subject, body, org, interests };

struct SequenceToken {
  std::string text;
  Segment segment = Segment::special;
  // Byte range inside the source field (subject or body); zero for other segments.
  std::size_t begin = 0;
  std::size_t end = 0;
};

// [CLS] S [SEP] C [SEP] O [SEP] E with absent or disabled segments (and their separators)
// omitted. Over-long sequences lose body tokens from the end first, then E, O and S.
std::vector<SequenceToken> compose_document_sequence(const Email& email, const ComponentSet& components,
                                                     int max_tokens);
std::vector<std::string> sequence_texts(const std::vector<SequenceToken>& seq);

// [CLS] words [SEP], truncated to max_tokens.
std::vector<std::string> compose_sentence_sequence(std::string_view sentence, int max_tokens);

// Pre-LN transformer with learned positions; the output is the final [CLS] row.
class TextEncoder {
 public:
  TextEncoder(const std::string& prefix, const EncoderConfig& config, int max_length, ParameterStore& store,
              Rng& rng);

  ag::Var embed(ag::Tape& tape, std::span<const int> ids) const;  // n x d token embeddings
  ag::Var encode_embedded(ag::Tape& tape, ag::Var embedded) const;  // 1 x d
  ag::Var encode(ag::Tape& tape, std::span<const int> ids) const { return encode_embedded(tape, embed(tape, ids)); }
  // Independent sequences packed into one masked pass; row i is the encoding of sequences[i].
  ag::Var encode_batch(ag::Tape& tape, std::span<const std::vector<int>> sequences) const;
  int max_length() const { return max_length_; }
  const ag::Parameter& token_embedding() const { return *tokens_; }

 private:
  struct Layer {
    ag::Parameter *ln1_g, *ln1_b, *wq, *wk, *wv, *wo, *bo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  };
  ag::Var run(ag::Tape& tape, ag::Var embedded, std::span<const int> starts) const;

  int d_;
  int heads_;
  int max_length_;
  ag::Parameter* tokens_;
  ag::Parameter* positions_;
  std::vector<Layer> layers_;
  ag::Parameter *lnf_g_, *lnf_b_;
};

// Universal POS inventory; unknown tags map to "X".
const std::vector<std::string>& upos_tags();
int upos_id(std::string_view tag);

struct GraphInput {
  std::vector<int> pos;
  std::vector<int> words;
  std::vector<std::pair<int, int>> edges;  // local (dependent, governor)
  std::vector<int> source_nodes;           // sentence token index of each local node
};

struct GraphOutput {
  ag::Var embedding;  // 1 x d
  // Incoming attention per node from the final layer, averaged over heads (gat only).
  std::optional<std::vector<double>> attention;
  // Final-layer attention matrices per head (rows sum to 1), kept for inspection.
  std::vector<ag::Matrix> head_attention;
};

struct GraphBatchOutput {
  ag::Var embeddings;
  std::vector<std::optional<std::vector<double>>> attention;
};

class GraphEncoder {
 public:
  GraphEncoder(const EncoderConfig& config, ParameterStore& store, Rng& rng);

  // Induced subgraph over `nodes` (ascending sentence token indices).
  GraphInput featurize(const DependencyGraph& graph, std::span<const int> nodes) const;
  GraphInput featurize(const DependencyGraph& graph) const;
  GraphOutput encode(ag::Tape& tape, const GraphInput& input) const;
  // Disjoint union of the graphs in one pass; embeddings has one row per graph.
  GraphBatchOutput encode_batch(ag::Tape& tape, std::span<const GraphInput> graphs) const;
  GraphEncoderKind kind() const { return kind_; }

 private:
  GraphBatchOutput run(ag::Tape& tape, std::span<const GraphInput> graphs, std::vector<ag::Matrix>* heads) const;

  struct Layer {
    std::vector<ag::Parameter*> w;      // per head, d x d/heads (gcn: one d x d)
    std::vector<ag::Parameter*> a_src;  // per head, d/heads x 1
    std::vector<ag::Parameter*> a_dst;
    ag::Parameter* bias;
  };
  GraphEncoderKind kind_;
  int d_;
  int heads_;
  HashingVocabulary vocab_;
  ag::Parameter* pos_embedding_;
  ag::Parameter* word_embedding_;
  std::vector<Layer> layers_;
  ag::Parameter *ln_g_, *ln_b_;
};

// Everything the encoders need from one email, precomputed once.
struct ModelInput {
  std::string email_id;
  int label = -1;
  bool structural_degraded = false;
  std::vector<SequenceToken> document;
  std::vector<int> document_ids;
  std::vector<std::vector<int>> sentence_ids;
  std::vector<GraphInput> phrases;
  std::vector<int> phrase_sentence;  // sentence index of each phrase
};

struct MultiViewEmbedding {
  std::string email_id;
  ag::RowVector e_D;
  ag::Matrix e_S;  // one row per sentence
  ag::Matrix e_P;  // one row per phrase subgraph
  std::vector<int> phrase_sentence;
};

struct ViewVars {
  ag::Var document;                 // 1 x d
  std::optional<ag::Var> sentences;  // n_s x d, absent when the email has no sentences
  std::optional<ag::Var> phrases;    // n_p x d
  std::vector<std::optional<std::vector<double>>> phrase_attention;  // per phrase, gat only
};

class MultiViewEncoder {
 public:
  MultiViewEncoder(const EncoderConfig& config, ParameterStore& store, Rng& rng);

  ModelInput featurize(const PreparedEmail& email) const;
  // doc_embedding replaces the document token embeddings (for attribution).
  ViewVars encode(ag::Tape& tape, const ModelInput& input, std::optional<ag::Var> doc_embedding = std::nullopt,
                  bool need_sentences = true, bool need_phrases = true) const;
  MultiViewEmbedding encode_views(const ModelInput& input) const;

  const EncoderConfig& config() const { return config_; }
  const HashingVocabulary& vocabulary() const { return vocab_; }
  const TextEncoder& document_encoder() const { return document_; }
  const TextEncoder& sentence_encoder() const { return sentence_; }
  const GraphEncoder& graph_encoder() const { return graph_; }

 private:
  EncoderConfig config_;
  HashingVocabulary vocab_;
  TextEncoder document_;
  TextEncoder sentence_;
  GraphEncoder graph_;
};

}  // namespace mailproto
