#include "mailproto/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mailproto {

using ag::Matrix;
using ag::Var;

std::string to_string(TextEncoderKind k) {
  return k == TextEncoderKind::tiny_trainable ? "tiny-trainable" : "pretrained-transformer";
}

std::string to_string(GraphEncoderKind k) { return k == GraphEncoderKind::gat ? "gat-style" : "gcn-style"; }

TextEncoderKind parse_text_encoder_kind(std::string_view s) {
  if (s == "tiny-trainable") return TextEncoderKind::tiny_trainable;
  if (s == "pretrained-transformer") return TextEncoderKind::pretrained_transformer;
  throw std::invalid_argument("unknown text encoder kind '" + std::string(s) + "'");
}

GraphEncoderKind parse_graph_encoder_kind(std::string_view s) {
  if (s == "gat-style" || s == "gat") return GraphEncoderKind::gat;
  if (s == "gcn-style" || s == "gcn") return GraphEncoderKind::gcn;
  throw std::invalid_argument("unknown graph encoder kind '" + std::string(s) + "'");
}

ComponentSet ComponentSet::parse(std::string_view letters) {
  ComponentSet c{false, false, false, false};
  for (char ch : letters) {
    switch (std::toupper(static_cast<unsigned char>(ch))) {
      case 'S': c.subject = true; break;
      case 'C': c.body = true; break;
      case 'O': c.org = true; break;
      case 'E': c.interests = true; break;
      default: throw std::invalid_argument("component letters must be drawn from S, C, O, E");
    }
  }
  return c;
}

std::string ComponentSet::str() const {
  std::string s;
  if (subject) s += 'S';
  if (body) s += 'C';
  if (org) s += 'O';
  if (interests) s += 'E';
  return s;
}

void validate(const EncoderConfig& c) {
  if (c.text_encoder_kind == TextEncoderKind::pretrained_transformer)
    throw std::invalid_argument("pretrained-transformer text encoders ('" + c.pretrained_name +
                                "') are not available in this build; use tiny-trainable");
  if (c.d <= 0) throw std::invalid_argument("d must be positive");
  if (c.heads <= 0 || c.d % c.heads != 0) throw std::invalid_argument("heads must divide d");
  if (c.d < 4) throw std::invalid_argument("d must be at least 4");
  if (c.text_layers < 1 || c.graph_layers < 1) throw std::invalid_argument("encoders need at least one layer");
  if (c.ffn <= 0) throw std::invalid_argument("ffn must be positive");
  if (c.max_document_tokens < 2 || c.max_sentence_tokens < 2) throw std::invalid_argument("token budgets too small");
  if (c.vocab_buckets <= HashingVocabulary::kReserved) throw std::invalid_argument("vocab_buckets too small");
}

// ---- sequences ----------------------------------------------------------------

namespace {

std::vector<SequenceToken> field_tokens(std::string_view text, Segment seg, bool keep_offsets) {
  std::vector<SequenceToken> out;
  for (auto& t : split_words(text)) {
    out.push_back(SequenceToken{std::move(t.text), seg, keep_offsets ? t.begin : 0, keep_offsets ? t.end : 0});
  }
  return out;
}

}  // namespace

std::vector<SequenceToken> compose_document_sequence(const Email& email, const ComponentSet& components,
                                                     int max_tokens) {
  std::vector<std::vector<SequenceToken>> parts;  // S, C, O, E in order; only present ones
  std::vector<Segment> kinds;
  if (components.subject && !trim(email.subject).empty()) {
    parts.push_back(field_tokens(email.subject, Segment::subject, true));
    kinds.push_back(Segment::subject);
  }
  if (components.body && !trim(email.body).empty()) {
    parts.push_back(field_tokens(email.body, Segment::body, true));
    kinds.push_back(Segment::body);
  }
  if (components.org && email.recipient_org) {
    parts.push_back(field_tokens(*email.recipient_org, Segment::org, false));
    kinds.push_back(Segment::org);
  }
  if (components.interests && email.interests) {
    std::vector<SequenceToken> e;
    if (email.interests_unknown()) {
      e.push_back(SequenceToken{"unknown", Segment::interests, 0, 0});
    } else {
      for (std::size_t i = 0; i < email.interests->size(); ++i) {
        if (i) e.push_back(SequenceToken{",", Segment::interests, 0, 0});
        auto words = field_tokens((*email.interests)[i], Segment::interests, false);
        e.insert(e.end(), words.begin(), words.end());
      }
    }
    parts.push_back(std::move(e));
    kinds.push_back(Segment::interests);
  }

  std::size_t total = 1 + (parts.empty() ? 0 : parts.size() - 1);
  for (const auto& p : parts) total += p.size();
  const auto budget = static_cast<std::size_t>(std::max(max_tokens, 1));
  // Trim body first, then E, O, S, always from the end of the segment.
  for (Segment victim : {Segment::body, Segment::interests, Segment::org, Segment::subject}) {
    for (std::size_t i = 0; i < parts.size() && total > budget; ++i) {
      if (kinds[i] != victim) continue;
      const std::size_t cut = std::min(parts[i].size(), total - budget);
      parts[i].resize(parts[i].size() - cut);
      total -= cut;
    }
  }

  std::vector<SequenceToken> seq;
  seq.push_back(SequenceToken{std::string(kClsToken), Segment::special, 0, 0});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) seq.push_back(SequenceToken{std::string(kSepToken), Segment::special, 0, 0});
    seq.insert(seq.end(), parts[i].begin(), parts[i].end());
  }
  if (seq.size() > budget) seq.resize(budget);
  return seq;
}

std::vector<std::string> sequence_texts(const std::vector<SequenceToken>& seq) {
  std::vector<std::string> out;
  out.reserve(seq.size());
  for (const auto& t : seq) out.push_back(t.text);
  return out;
}

std::vector<std::string> compose_sentence_sequence(std::string_view sentence, int max_tokens) {
  std::vector<std::string> out{std::string(kClsToken)};
  const auto words = split_words(sentence);
  const std::size_t room = max_tokens > 2 ? static_cast<std::size_t>(max_tokens - 2) : 0;
  for (std::size_t i = 0; i < words.size() && i < room; ++i) out.push_back(words[i].text);
  out.push_back(std::string(kSepToken));
  return out;
}

// ---- text encoder ----------------------------------------------------------------

TextEncoder::TextEncoder(const std::string& prefix, const EncoderConfig& c, int max_length, ParameterStore& store,
                         Rng& rng)
    : d_(c.d), heads_(c.heads), max_length_(max_length) {
  const double wd = 1.0 / std::sqrt(static_cast<double>(c.d));
  const double wf = 1.0 / std::sqrt(static_cast<double>(c.ffn));
  tokens_ = &store.normal(prefix + ".tokens", c.vocab_buckets, c.d, 0.1, rng);
  positions_ = &store.normal(prefix + ".positions", max_length, c.d, 0.02, rng);
  for (int l = 0; l < c.text_layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    Layer L{};
    L.ln1_g = &store.ones(p + ".ln1.gain", 1, c.d);
    L.ln1_b = &store.zeros(p + ".ln1.bias", 1, c.d);
    L.wq = &store.normal(p + ".wq", c.d, c.d, wd, rng);
    L.wk = &store.normal(p + ".wk", c.d, c.d, wd, rng);
    L.wv = &store.normal(p + ".wv", c.d, c.d, wd, rng);
    L.wo = &store.normal(p + ".wo", c.d, c.d, wd, rng);
    L.bo = &store.zeros(p + ".bo", 1, c.d);
    L.ln2_g = &store.ones(p + ".ln2.gain", 1, c.d);
    L.ln2_b = &store.zeros(p + ".ln2.bias", 1, c.d);
    L.w1 = &store.normal(p + ".w1", c.d, c.ffn, wd, rng);
    L.b1 = &store.zeros(p + ".b1", 1, c.ffn);
    L.w2 = &store.normal(p + ".w2", c.ffn, c.d, wf, rng);
    L.b2 = &store.zeros(p + ".b2", 1, c.d);
    layers_.push_back(L);
  }
  lnf_g_ = &store.ones(prefix + ".lnf.gain", 1, c.d);
  lnf_b_ = &store.zeros(prefix + ".lnf.bias", 1, c.d);
}

Var TextEncoder::embed(ag::Tape& tape, std::span<const int> ids) const {
  if (ids.empty()) throw std::invalid_argument("cannot encode an empty sequence");
  if (static_cast<int>(ids.size()) > max_length_)
    throw std::invalid_argument("sequence of " + std::to_string(ids.size()) + " tokens exceeds the budget of " +
                                std::to_string(max_length_));
  return ag::gather_rows(tape.parameter(*tokens_), ids);
}

Var TextEncoder::encode_embedded(ag::Tape& tape, Var embedded) const {
  const int start = 0;
  return run(tape, embedded, std::span<const int>(&start, 1));
}

Var TextEncoder::encode_batch(ag::Tape& tape, std::span<const std::vector<int>> sequences) const {
  if (sequences.empty()) throw std::invalid_argument("cannot encode an empty batch");
  std::vector<int> ids, starts;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw std::invalid_argument("cannot encode an empty sequence");
    if (static_cast<int>(seq.size()) > max_length_)
      throw std::invalid_argument("sequence of " + std::to_string(seq.size()) + " tokens exceeds the budget of " +
                                  std::to_string(max_length_));
    starts.push_back(static_cast<int>(ids.size()));
    ids.insert(ids.end(), seq.begin(), seq.end());
  }
  return run(tape, ag::gather_rows(tape.parameter(*tokens_), ids), starts);
}

// starts[i] is the first row of sequence i; sequences are contiguous and cannot see each other.
Var TextEncoder::run(ag::Tape& tape, Var embedded, std::span<const int> starts) const {
  const auto n = embedded.rows();
  if (n == 0) throw std::invalid_argument("cannot encode an empty sequence");
  const auto count = starts.size();
  std::vector<int> positions(static_cast<std::size_t>(n));
  std::vector<int> segment(static_cast<std::size_t>(n));
  for (std::size_t s = 0; s < count; ++s) {
    const int end = s + 1 < count ? starts[s + 1] : static_cast<int>(n);
    if (end - starts[s] > max_length_) throw std::invalid_argument("sequence exceeds the token budget");
    for (int r = starts[s]; r < end; ++r) {
      positions[static_cast<std::size_t>(r)] = r - starts[s];
      segment[static_cast<std::size_t>(r)] = static_cast<int>(s);
    }
  }
  std::optional<Matrix> mask, cls_mask;
  if (count > 1) {
    mask = Matrix(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < n; ++c)
        (*mask)(r, c) = segment[static_cast<std::size_t>(r)] == segment[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
    cls_mask = Matrix(static_cast<Eigen::Index>(count), n);
    for (std::size_t s = 0; s < count; ++s) cls_mask->row(static_cast<Eigen::Index>(s)) = mask->row(starts[s]);
  }

  const int dh = d_ / heads_;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Var x = ag::add(embedded, ag::gather_rows(tape.parameter(*positions_), positions));
  std::vector<Var> heads(static_cast<std::size_t>(heads_));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    // only the [CLS] rows of the last layer reach the output
    const bool last = l + 1 == layers_.size();
    Var h = ag::layer_norm_rows(x, tape.parameter(*L.ln1_g), tape.parameter(*L.ln1_b));
    Var q = ag::matmul(last ? ag::gather_rows(h, starts) : h, tape.parameter(*L.wq));
    Var k = ag::matmul(h, tape.parameter(*L.wk));
    Var v = ag::matmul(h, tape.parameter(*L.wv));
    const Matrix* m = last ? (cls_mask ? &*cls_mask : nullptr) : (mask ? &*mask : nullptr);
    for (int hd = 0; hd < heads_; ++hd) {
      Var qh = ag::slice_cols(q, hd * dh, dh);
      Var kh = ag::slice_cols(k, hd * dh, dh);
      Var vh = ag::slice_cols(v, hd * dh, dh);
      Var att = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv), m);
      heads[static_cast<std::size_t>(hd)] = ag::matmul(att, vh);
    }
    Var mixed = ag::add_row(ag::matmul(ag::concat_cols(heads), tape.parameter(*L.wo)), tape.parameter(*L.bo));
    x = ag::add(last ? ag::gather_rows(x, starts) : x, mixed);
    Var h2 = ag::layer_norm_rows(x, tape.parameter(*L.ln2_g), tape.parameter(*L.ln2_b));
    Var f = ag::gelu(ag::add_row(ag::matmul(h2, tape.parameter(*L.w1)), tape.parameter(*L.b1)));
    x = ag::add(x, ag::add_row(ag::matmul(f, tape.parameter(*L.w2)), tape.parameter(*L.b2)));
  }
  if (layers_.empty()) x = ag::gather_rows(x, starts);
  return ag::layer_norm_rows(x, tape.parameter(*lnf_g_), tape.parameter(*lnf_b_));
}

// ---- graph encoder -----------------------------------------------------------------

const std::vector<std::string>& upos_tags() {
  static const std::vector<std::string> tags{"ADJ", "ADP", "ADV", "AUX",  "CCONJ", "DET",  "INTJ", "NOUN", "NUM",
                                             "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"};
  return tags;
}

int upos_id(std::string_view tag) {
  const auto& tags = upos_tags();
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (tags[i] == tag) return static_cast<int>(i);
  return static_cast<int>(tags.size()) - 1;
}

GraphEncoder::GraphEncoder(const EncoderConfig& c, ParameterStore& store, Rng& rng)
    : kind_(c.graph_encoder_kind),
      d_(c.d),
      heads_(c.graph_encoder_kind == GraphEncoderKind::gat ? c.heads : 1),
      vocab_(c.vocab_buckets, mix_seed(c.vocab_salt, 0x67726170ULL)) {
  const int pos_dim = std::max(1, c.d / 4);
  pos_embedding_ = &store.normal("graph.pos", static_cast<Eigen::Index>(upos_tags().size()), pos_dim, 0.1, rng);
  word_embedding_ = &store.normal("graph.words", c.vocab_buckets, c.d - pos_dim, 0.1, rng);
  const int dh = c.d / heads_;
  const double wd = 1.0 / std::sqrt(static_cast<double>(c.d));
  for (int l = 0; l < c.graph_layers; ++l) {
    const std::string p = "graph.layer" + std::to_string(l);
    Layer L{};
    for (int h = 0; h < heads_; ++h) {
      const std::string ph = p + ".head" + std::to_string(h);
      L.w.push_back(&store.normal(ph + ".w", c.d, dh, wd, rng));
      if (kind_ == GraphEncoderKind::gat) {
        L.a_src.push_back(&store.normal(ph + ".a_src", dh, 1, 1.0 / std::sqrt(static_cast<double>(dh)), rng));
        L.a_dst.push_back(&store.normal(ph + ".a_dst", dh, 1, 1.0 / std::sqrt(static_cast<double>(dh)), rng));
      }
    }
    L.bias = &store.zeros(p + ".bias", 1, c.d);
    layers_.push_back(std::move(L));
  }
  ln_g_ = &store.ones("graph.ln.gain", 1, c.d);
  ln_b_ = &store.zeros("graph.ln.bias", 1, c.d);
}

GraphInput GraphEncoder::featurize(const DependencyGraph& graph, std::span<const int> nodes) const {
  GraphInput in;
  std::vector<int> local(static_cast<std::size_t>(graph.size()), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const int n = nodes[i];
    local[static_cast<std::size_t>(n)] = static_cast<int>(i);
    in.pos.push_back(upos_id(graph.token(n).upos));
    in.words.push_back(vocab_.id(graph.token(n).form));
    in.source_nodes.push_back(n);
  }
  for (int n : nodes) {
    const int h = graph.token(n).head;
    if (h >= 0 && local[static_cast<std::size_t>(h)] >= 0)
      in.edges.emplace_back(local[static_cast<std::size_t>(n)], local[static_cast<std::size_t>(h)]);
  }
  return in;
}

GraphInput GraphEncoder::featurize(const DependencyGraph& graph) const {
  std::vector<int> all(static_cast<std::size_t>(graph.size()));
  for (int i = 0; i < graph.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return featurize(graph, all);
}

GraphOutput GraphEncoder::encode(ag::Tape& tape, const GraphInput& in) const {
  GraphOutput out;
  auto batch = run(tape, std::span<const GraphInput>(&in, 1), &out.head_attention);
  out.embedding = batch.embeddings;
  out.attention = std::move(batch.attention.front());
  return out;
}

GraphBatchOutput GraphEncoder::encode_batch(ag::Tape& tape, std::span<const GraphInput> graphs) const {
  return run(tape, graphs, nullptr);
}

GraphBatchOutput GraphEncoder::run(ag::Tape& tape, std::span<const GraphInput> graphs,
                                   std::vector<Matrix>* head_attention) const {
  if (graphs.empty()) throw std::invalid_argument("cannot encode an empty batch");
  std::vector<Eigen::Index> offset;
  std::vector<int> pos, words;
  for (const auto& g : graphs) {
    if (g.pos.empty()) throw std::invalid_argument("cannot encode an empty graph");
    offset.push_back(static_cast<Eigen::Index>(pos.size()));
    pos.insert(pos.end(), g.pos.begin(), g.pos.end());
    words.insert(words.end(), g.words.begin(), g.words.end());
  }
  const auto n = static_cast<Eigen::Index>(pos.size());
  const auto count = static_cast<Eigen::Index>(graphs.size());
  Matrix adj = Matrix::Identity(n, n);
  Matrix pool = Matrix::Zero(count, n);
  for (Eigen::Index g = 0; g < count; ++g) {
    const auto& in = graphs[static_cast<std::size_t>(g)];
    const Eigen::Index o = offset[static_cast<std::size_t>(g)];
    const auto size = static_cast<Eigen::Index>(in.pos.size());
    for (const auto& [a, b] : in.edges) {
      adj(o + a, o + b) = 1.0;
      adj(o + b, o + a) = 1.0;
    }
    pool.block(g, o, 1, size).setConstant(1.0 / static_cast<double>(size));
  }
  std::vector<Var> feats{ag::gather_rows(tape.parameter(*pos_embedding_), pos),
                         ag::gather_rows(tape.parameter(*word_embedding_), words)};
  Var x = ag::concat_cols(feats);

  Matrix norm_adj;
  if (kind_ == GraphEncoderKind::gcn) {
    const Eigen::VectorXd inv_sqrt = adj.rowwise().sum().array().rsqrt();
    norm_adj = inv_sqrt.asDiagonal() * adj * inv_sqrt.asDiagonal();
  }
  Matrix mean_attention = Matrix::Zero(n, n);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const bool last = l + 1 == layers_.size();
    std::vector<Var> heads;
    for (int h = 0; h < heads_; ++h) {
      Var hx = ag::matmul(x, tape.parameter(*L.w[static_cast<std::size_t>(h)]));
      if (kind_ == GraphEncoderKind::gcn) {
        heads.push_back(ag::matmul(tape.constant(norm_adj), hx));
        continue;
      }
      Var dst = ag::matmul(hx, tape.parameter(*L.a_dst[static_cast<std::size_t>(h)]));
      Var src = ag::transpose(ag::matmul(hx, tape.parameter(*L.a_src[static_cast<std::size_t>(h)])));
      Var att = ag::softmax_rows(ag::leaky_relu(ag::add_col_row(dst, src), 0.2), &adj);
      if (last) {
        mean_attention += att.value();
        if (head_attention) head_attention->push_back(att.value());
      }
      heads.push_back(ag::matmul(att, hx));
    }
    Var conv = ag::add_row(ag::concat_cols(heads), tape.parameter(*L.bias));
    x = ag::add(x, ag::gelu(conv));
  }

  GraphBatchOutput out;
  out.attention.resize(static_cast<std::size_t>(count));
  if (kind_ == GraphEncoderKind::gat && !layers_.empty()) {
    mean_attention /= static_cast<double>(heads_);
    for (Eigen::Index g = 0; g < count; ++g) {
      const Eigen::Index o = offset[static_cast<std::size_t>(g)];
      const auto size = static_cast<Eigen::Index>(graphs[static_cast<std::size_t>(g)].pos.size());
      std::vector<double> incoming(static_cast<std::size_t>(size));
      for (Eigen::Index j = 0; j < size; ++j)
        incoming[static_cast<std::size_t>(j)] = mean_attention.block(o, o + j, size, 1).sum();
      out.attention[static_cast<std::size_t>(g)] = std::move(incoming);
    }
  }
  out.embeddings = ag::layer_norm_rows(ag::matmul(tape.constant(pool), x), tape.parameter(*ln_g_), tape.parameter(*ln_b_));
  return out;
}

// ---- multi-view ---------------------------------------------------------------------

MultiViewEncoder::MultiViewEncoder(const EncoderConfig& config, ParameterStore& store, Rng& rng)
    : config_((validate(config), config)),
      vocab_(config.vocab_buckets, config.vocab_salt),
      document_("document", config, config.max_document_tokens, store, rng),
      sentence_("sentence", config, config.max_sentence_tokens, store, rng),
      graph_(config, store, rng) {}

ModelInput MultiViewEncoder::featurize(const PreparedEmail& email) const {
  ModelInput in;
  in.email_id = email.email.id;
  in.label = email.label;
  in.structural_degraded = email.structural_degraded;
  in.document = compose_document_sequence(email.email, config_.components, config_.max_document_tokens);
  in.document_ids = vocab_.ids(sequence_texts(in.document));
  for (const auto& s : email.sentences)
    in.sentence_ids.push_back(vocab_.ids(compose_sentence_sequence(s.text, config_.max_sentence_tokens)));
  for (const auto& ph : email.phrases) {
    const auto& graph = email.sentences[static_cast<std::size_t>(ph.sentence_index)].graph;
    in.phrases.push_back(graph_.featurize(graph, ph.nodes));
    in.phrase_sentence.push_back(ph.sentence_index);
  }
  return in;
}

ViewVars MultiViewEncoder::encode(ag::Tape& tape, const ModelInput& in, std::optional<Var> doc_embedding,
                                  bool need_sentences, bool need_phrases) const {
  ViewVars v;
  try {
    v.document = doc_embedding ? document_.encode_embedded(tape, *doc_embedding)
                               : document_.encode(tape, in.document_ids);
    if (need_sentences && !in.sentence_ids.empty()) v.sentences = sentence_.encode_batch(tape, in.sentence_ids);
    if (need_phrases && !in.phrases.empty()) {
      auto batch = graph_.encode_batch(tape, in.phrases);
      v.phrases = batch.embeddings;
      v.phrase_attention = std::move(batch.attention);
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("encoding email '" + in.email_id + "': " + e.what());
  }
  return v;
}

MultiViewEmbedding MultiViewEncoder::encode_views(const ModelInput& in) const {
  ag::Tape tape(false);
  const ViewVars v = encode(tape, in);
  MultiViewEmbedding mv;
  mv.email_id = in.email_id;
  mv.e_D = v.document.value();
  mv.e_S = v.sentences ? v.sentences->value() : Matrix(0, config_.d);
  mv.e_P = v.phrases ? v.phrases->value() : Matrix(0, config_.d);
  mv.phrase_sentence = in.phrase_sentence;
  return mv;
}

}  // namespace mailproto
