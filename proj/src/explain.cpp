#include "mailproto/explain.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace mailproto {

using ag::Matrix;
using ag::RowVector;

namespace {

double fusion_weight(const ModelConfig& c, Granularity g) {
  if (g == Granularity::sentence) return c.lambda1;
  if (g == Granularity::phrase) return c.lambda2;
  return 1.0;
}

std::string relation_base(const std::string& rel) { return rel.substr(0, rel.find(':')); }

bool is_noun(const DepToken& t) { return t.upos == "NOUN" || t.upos == "PROPN"; }

double at(std::span<const double> v, int i) {
  return i < static_cast<int>(v.size()) ? v[static_cast<std::size_t>(i)] : 0.0;
}

}  // namespace

ExplanationReport explain(const Model& model, const PreparedEmail& email, int top_n) {
  if (top_n < 1) throw std::invalid_argument("top_n must be at least 1");
  const auto& cfg = model.config();
  if (!cfg.use_prototypes) throw std::invalid_argument("model has no prototype layer to explain with");
  if (!model.projected())
    throw NotProjectedError("prototypes are not projected onto training units; project them first (train runs a final projection)");

  const ModelInput input = model.featurize(email);
  const Prediction pred = model.predict(input);
  ExplanationReport r;
  r.email_id = input.email_id;
  r.label = pred.label;
  r.probabilities = pred.probabilities;
  r.structural_degraded = input.structural_degraded;
  r.model_version = model.version();
  r.top_n = top_n;

  const Matrix& w = model.head().weight->value;
  int offset = 0;
  for (Granularity g : kGranularities) {
    if (!cfg.uses(g)) continue;
    const PrototypeBank& bank = model.bank(g);
    const RowVector& scores = pred.similarities.at(g);
    Matrix units;
    if (g == Granularity::document) units = pred.views.e_D;
    if (g == Granularity::sentence) units = pred.views.e_S;
    if (g == Granularity::phrase) units = pred.views.e_P;

    std::vector<PrototypeEvidence> list;
    for (int i = 0; i < bank.count(); ++i) {
      PrototypeEvidence e;
      e.prototype = i;
      e.prototype_class = bank.class_of[static_cast<std::size_t>(i)];
      e.aggregate_score = scores(i);
      e.contribution = w(offset + i, r.label) * fusion_weight(cfg, g) * scores(i);
      e.source = *bank.projection[static_cast<std::size_t>(i)];
      if (g == Granularity::document) {
        e.similarity = scores(i);
        e.matched_text = email.email.subject;
      } else if (units.rows() == 0) {
        e.matched_unit = -1;
      } else {
        double best = -1.0;
        for (Eigen::Index u = 0; u < units.rows(); ++u) {
          const double s = similarity(bank.value().row(i), units.row(u), bank.epsilon);
          if (s > best) {
            best = s;
            e.matched_unit = static_cast<int>(u);
          }
        }
        e.similarity = best;
        const auto mu = static_cast<std::size_t>(e.matched_unit);
        e.matched_text = g == Granularity::sentence ? email.sentences[mu].text : email.phrases[mu].surface_text;
      }
      list.push_back(std::move(e));
    }
    std::stable_sort(list.begin(), list.end(),
                     [](const PrototypeEvidence& a, const PrototypeEvidence& b) { return a.similarity > b.similarity; });
    if (static_cast<int>(list.size()) > top_n) list.resize(static_cast<std::size_t>(top_n));
    r.ranked[static_cast<std::size_t>(g)] = std::move(list);
    offset += bank.count();
  }
  return r;
}

std::string format_report(const ExplanationReport& r) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  os << "email " << r.email_id << "\n";
  os << "prediction " << (r.label == 1 ? "response" : "no-response") << "  p(response) " << r.probabilities[1]
     << "\n";
  if (r.structural_degraded) os << "structural-view: degraded\n";
  os << "model " << r.model_version << "\n";
  for (Granularity g : kGranularities) {
    const auto& list = r.ranked[static_cast<std::size_t>(g)];
    if (!list) continue;
    os << "\n[" << to_string(g) << " prototypes]\n";
    for (std::size_t k = 0; k < list->size(); ++k) {
      const auto& e = (*list)[k];
      os << k + 1 << ". prototype " << e.prototype << "  class " << e.prototype_class << "  similarity "
         << e.similarity << "  score " << e.aggregate_score << "  contribution " << e.contribution << "\n";
      if (e.matched_unit >= 0 && g != Granularity::document)
        os << "   input #" << e.matched_unit << ": " << e.matched_text << "\n";
      os << "   source " << e.source.source_id << " #" << e.source.unit_index << " (label " << e.source.source_label
         << "): " << e.source.surface_text << "\n";
    }
  }
  return os.str();
}

nlohmann::json to_json(const ExplanationReport& r) {
  nlohmann::json j{{"email_id", r.email_id},
                   {"label", r.label},
                   {"probabilities", r.probabilities},
                   {"structural_degraded", r.structural_degraded},
                   {"model_version", r.model_version},
                   {"top_n", r.top_n}};
  nlohmann::json gs = nlohmann::json::object();
  for (Granularity g : kGranularities) {
    const auto& list = r.ranked[static_cast<std::size_t>(g)];
    if (!list) continue;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : *list)
      arr.push_back({{"prototype", e.prototype},
                     {"class", e.prototype_class},
                     {"similarity", e.similarity},
                     {"score", e.aggregate_score},
                     {"contribution", e.contribution},
                     {"matched_unit", e.matched_unit},
                     {"matched_text", e.matched_text},
                     {"source",
                      {{"id", e.source.source_id},
                       {"unit", e.source.unit_index},
                       {"label", e.source.source_label},
                       {"text", e.source.surface_text},
                       {"distance", e.source.distance}}}});
    gs[to_string(g)] = std::move(arr);
  }
  j["prototypes"] = std::move(gs);
  return j;
}

// ---- attribution ----------------------------------------------------------------------

double Attribution::total() const {
  double s = 0.0;
  for (double v : token_scores) s += v;
  return s;
}

Attribution integrated_gradients(const ScoreFunction& f, const Matrix& input, const Matrix& baseline, int steps,
                                 std::string baseline_description) {
  if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be at least 1");
  if (input.rows() != baseline.rows() || input.cols() != baseline.cols())
    throw std::invalid_argument("integrated_gradients: baseline shape differs from input");
  const Matrix diff = input - baseline;
  Matrix sum = Matrix::Zero(input.rows(), input.cols());
  Matrix g;
  for (int k = 0; k < steps; ++k) {
    const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
    g.resize(0, 0);
    f(baseline + alpha * diff, &g);
    if (g.rows() != input.rows() || g.cols() != input.cols())
      throw std::runtime_error("integrated_gradients: gradient shape differs from input");
    if (!g.allFinite()) throw std::runtime_error("integrated_gradients: non-finite gradient");
    sum += g;
  }
  Attribution a;
  a.per_dimension = diff.cwiseProduct(sum / static_cast<double>(steps));
  a.token_scores.resize(static_cast<std::size_t>(input.rows()));
  for (Eigen::Index r = 0; r < input.rows(); ++r) a.token_scores[static_cast<std::size_t>(r)] = a.per_dimension.row(r).sum();
  a.baseline = std::move(baseline_description);
  a.steps = steps;
  a.f_input = f(input, nullptr);
  a.f_baseline = f(baseline, nullptr);
  return a;
}

Attribution document_attribution(const Model& model, const ModelInput& input, int steps) {
  const Matrix& table = model.encoder().document_encoder().token_embedding().value;
  const auto n = static_cast<Eigen::Index>(input.document_ids.size());
  Matrix x(n, table.cols()), baseline(n, table.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    x.row(r) = table.row(input.document_ids[static_cast<std::size_t>(r)]);
    baseline.row(r) = table.row(HashingVocabulary::kPad);
  }
  ScoreFunction f = [&](const Matrix& e, Matrix* gradient) {
    ag::Tape tape(gradient != nullptr);
    ag::Var v = gradient ? tape.variable(e) : tape.constant(e);
    const ForwardPass fp = model.forward(tape, input, v);
    ag::Var logit = ag::slice_cols(fp.logits, 1, 1);
    if (gradient) {
      tape.backward(logit);
      *gradient = tape.grad(v);
    }
    return logit.scalar();
  };
  return integrated_gradients(f, x, baseline, steps, "[PAD] embedding at every position");
}

std::vector<std::vector<double>> sentence_token_attribution(const PreparedEmail& email, const ModelInput& input,
                                                             const Attribution& attribution) {
  std::vector<std::vector<double>> out;
  for (const auto& s : email.sentences) {
    std::vector<double> scores(static_cast<std::size_t>(s.graph.size()), 0.0);
    if (s.body_offset && s.token_spans.size() == scores.size()) {
      for (std::size_t t = 0; t < input.document.size() && t < attribution.token_scores.size(); ++t) {
        const auto& tok = input.document[t];
        if (tok.segment != Segment::body) continue;
        for (std::size_t k = 0; k < scores.size(); ++k) {
          const std::size_t b = *s.body_offset + s.token_spans[k].begin;
          const std::size_t e = *s.body_offset + s.token_spans[k].end;
          if (std::max(b, tok.begin) < std::min(e, tok.end)) scores[k] += attribution.token_scores[t];
        }
      }
    }
    out.push_back(std::move(scores));
  }
  return out;
}

std::optional<std::vector<double>> sentence_attention(const Model& model, const DependencyGraph& graph) {
  if (graph.size() == 0) return std::nullopt;
  const auto& enc = model.encoder().graph_encoder();
  ag::Tape tape(false);
  return enc.encode(tape, enc.featurize(graph)).attention;
}

// ---- keyphrases -----------------------------------------------------------------------

const std::set<std::string>& default_keyphrase_relations() {
  static const std::set<std::string> relations{"amod", "compound", "det", "nummod"};
  return relations;
}

Keyphrase attention_keyphrases(const DependencyGraph& graph, std::span<const double> attention,
                               std::span<const double> attribution, const std::set<std::string>& relations) {
  if (graph.size() == 0) throw std::invalid_argument("attention_keyphrases: empty sentence");
  Keyphrase k;
  int best = -1;
  auto better = [&](int a, int b, bool attention_first) {
    const double a1 = attention_first ? at(attention, a) : at(attribution, a);
    const double b1 = attention_first ? at(attention, b) : at(attribution, b);
    if (a1 != b1) return a1 > b1;
    const double a2 = attention_first ? at(attribution, a) : at(attention, a);
    const double b2 = attention_first ? at(attribution, b) : at(attention, b);
    if (a2 != b2) return a2 > b2;
    return a < b;
  };
  for (int i = 0; i < graph.size(); ++i)
    if (is_noun(graph.token(i)) && (best < 0 || better(i, best, true))) best = i;
  if (best < 0) {
    k.fallback = true;
    for (int i = 0; i < graph.size(); ++i)
      if (best < 0 || better(i, best, false)) best = i;
  }
  std::vector<bool> in(static_cast<std::size_t>(graph.size()), false);
  in[static_cast<std::size_t>(best)] = true;
  for (int i = 0; i < graph.size(); ++i)
    if (graph.token(i).head == best && relations.contains(relation_base(graph.token(i).deprel)))
      in[static_cast<std::size_t>(i)] = true;
  int lo = best, hi = best;
  while (lo > 0 && in[static_cast<std::size_t>(lo - 1)]) --lo;
  while (hi + 1 < graph.size() && in[static_cast<std::size_t>(hi + 1)]) ++hi;
  k.keyword = best;
  k.keyword_text = graph.token(best).form;
  for (int i = lo; i <= hi; ++i) {
    k.tokens.push_back(i);
    k.text += (i > lo ? " " : "") + graph.token(i).form;
  }
  return k;
}

std::vector<SentenceKeyphrases> email_keyphrases(const Model& model, const PreparedEmail& email, int ig_steps) {
  const ModelInput input = model.featurize(email);
  std::vector<std::vector<double>> attributions(email.sentences.size());
  if (ig_steps > 0 && model.config().variant != ViewVariant::graph)
    attributions = sentence_token_attribution(email, input, document_attribution(model, input, ig_steps));
  std::vector<SentenceKeyphrases> out;
  for (std::size_t i = 0; i < email.sentences.size(); ++i) {
    const auto& s = email.sentences[i];
    if (s.graph.size() == 0) continue;
    const auto attention = sentence_attention(model, s.graph);
    const std::vector<double> none;
    SentenceKeyphrases sk;
    sk.sentence = static_cast<int>(i);
    sk.sentence_text = s.text;
    sk.keyphrase = attention_keyphrases(s.graph, attention ? *attention : none, attributions[i]);
    out.push_back(std::move(sk));
  }
  return out;
}

}  // namespace mailproto
