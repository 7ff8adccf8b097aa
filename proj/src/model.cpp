#include "mailproto/model.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace mailproto {

using ag::Matrix;
using ag::Var;

std::string to_string(ViewVariant v) {
  switch (v) {
    case ViewVariant::text: return "text";
    case ViewVariant::graph: return "graph";
    case ViewVariant::text_graph: return "text+graph";
  }
  return "?";
}

ViewVariant parse_view_variant(std::string_view s) {
  if (s == "text") return ViewVariant::text;
  if (s == "graph") return ViewVariant::graph;
  if (s == "text+graph" || s == "text_graph" || s == "full") return ViewVariant::text_graph;
  throw std::invalid_argument("unknown view variant '" + std::string(s) + "'");
}

bool ModelConfig::uses(Granularity g) const {
  if (g == Granularity::phrase) return variant != ViewVariant::text;
  return variant != ViewVariant::graph;
}

int ModelConfig::count(Granularity g) const {
  switch (g) {
    case Granularity::document: return j;
    case Granularity::sentence: return k;
    case Granularity::phrase: return m;
  }
  return 0;
}

void validate(const ModelConfig& c) {
  validate(c.encoder);
  if (c.use_prototypes) {
    for (Granularity g : kGranularities) {
      const int n = c.count(g);
      if (c.uses(g) && (n <= 0 || n % 2 != 0))
        throw std::invalid_argument("prototype count for " + to_string(g) + " must be even and positive");
    }
  }
  if (c.lambda1 < 0.0 || c.lambda2 < 0.0) throw std::invalid_argument("fusion weights must be non-negative");
  if (!(c.epsilon > 0.0 && c.epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
}

namespace {

const ModelConfig& checked(const ModelConfig& c) {
  validate(c);
  return c;
}

double fusion_weight(const ModelConfig& c, Granularity g) {
  switch (g) {
    case Granularity::document: return 1.0;
    case Granularity::sentence: return c.lambda1;
    case Granularity::phrase: return c.lambda2;
  }
  return 1.0;
}

}  // namespace

Model::Model(const ModelConfig& config)
    : config_(checked(config)), init_rng_(config.init_seed), encoder_(config.encoder, store_, init_rng_) {
  int fused_dim = 0;
  for (Granularity g : kGranularities) {
    auto& bank = banks_[static_cast<std::size_t>(g)];
    bank.granularity = g;
    bank.epsilon = config_.epsilon;
    if (!config_.uses(g)) continue;
    if (config_.use_prototypes) {
      bank = make_bank(g, config_.count(g), config_.encoder.d, store_, init_rng_, config_.epsilon);
      fused_dim += config_.count(g);
    } else {
      fused_dim += config_.encoder.d;
    }
  }
  Matrix w(fused_dim, 2);
  if (config_.use_prototypes) {
    // Each similarity votes for its prototype's class.
    int row = 0;
    for (Granularity g : kGranularities) {
      const auto& bank = banks_[static_cast<std::size_t>(g)];
      if (!config_.uses(g)) continue;
      const double s = 1.0 / static_cast<double>(bank.count());
      for (int i = 0; i < bank.count(); ++i, ++row) {
        const int cls = bank.class_of[static_cast<std::size_t>(i)];
        w(row, cls) = s;
        w(row, 1 - cls) = -0.5 * s;
      }
    }
  } else {
    const double s = 1.0 / std::sqrt(static_cast<double>(fused_dim));
    for (Eigen::Index c = 0; c < 2; ++c)
      for (Eigen::Index r = 0; r < fused_dim; ++r) w(r, c) = init_rng_.normal(0.0, s);
  }
  head_.weight = &store_.add("head.weight", std::move(w));
  head_.bias = &store_.zeros("head.bias", 1, 2);
  head_.lambda1 = config_.lambda1;
  head_.lambda2 = config_.lambda2;
}

ForwardPass Model::forward(ag::Tape& tape, const ModelInput& input, std::optional<Var> doc_embedding) const {
  ForwardPass fp;
  const bool text = config_.variant != ViewVariant::graph;
  const bool graph = config_.variant != ViewVariant::text;
  fp.views = encoder_.encode(tape, input, doc_embedding, text, graph);

  std::vector<Var> parts;
  for (Granularity g : kGranularities) {
    if (!config_.uses(g)) continue;
    std::optional<Var> units;
    if (g == Granularity::document) units = fp.views.document;
    if (g == Granularity::sentence) units = fp.views.sentences;
    if (g == Granularity::phrase) units = fp.views.phrases;
    const double w = fusion_weight(config_, g);
    if (config_.use_prototypes) {
      const auto& bank = banks_[static_cast<std::size_t>(g)];
      Var score = units ? aggregate_scores(*units, tape.parameter(*bank.vectors), bank.epsilon, config_.aggregation)
                        : tape.constant(Matrix::Zero(1, bank.count()));
      fp.scores[static_cast<std::size_t>(g)] = score;
      parts.push_back(w == 1.0 ? score : ag::scale(score, w));
    } else {
      Var pooled = units ? (units->rows() == 1 ? *units : ag::mean_rows(*units))
                         : tape.constant(Matrix::Zero(1, config_.encoder.d));
      parts.push_back(w == 1.0 ? pooled : ag::scale(pooled, w));
    }
  }
  fp.fused = parts.size() == 1 ? parts.front() : ag::concat_cols(parts);
  fp.logits = ag::add_row(ag::matmul(fp.fused, tape.parameter(*head_.weight)), tape.parameter(*head_.bias));
  return fp;
}

Prediction Model::predict(const ModelInput& input) const {
  ag::Tape tape(false);
  const ForwardPass fp = forward(tape, input);
  Prediction p;
  const Matrix& z = fp.logits.value();
  p.probabilities = softmax2(z(0, 0), z(0, 1));
  p.label = p.probabilities[1] > p.probabilities[0] ? 1 : 0;
  auto row = [&](Granularity g) {
    const auto& s = fp.scores[static_cast<std::size_t>(g)];
    return s ? ag::RowVector(s->value().row(0)) : ag::RowVector(0);
  };
  p.similarities.S_D = row(Granularity::document);
  p.similarities.S_S = row(Granularity::sentence);
  p.similarities.S_P = row(Granularity::phrase);
  p.views.email_id = input.email_id;
  p.views.e_D = fp.views.document.value().row(0);
  p.views.e_S = fp.views.sentences ? fp.views.sentences->value() : Matrix(0, config_.encoder.d);
  p.views.e_P = fp.views.phrases ? fp.views.phrases->value() : Matrix(0, config_.encoder.d);
  p.views.phrase_sentence = input.phrase_sentence;
  return p;
}

bool Model::projected() const {
  if (!config_.use_prototypes) return true;
  for (Granularity g : kGranularities)
    if (config_.uses(g) && !bank(g).projected()) return false;
  return true;
}

std::string Model::version() const {
  std::uint64_t h = fnv1a("mailproto-model");
  for (const ag::Parameter* p : store_.all()) {
    h = fnv1a(p->name, h);
    const auto bytes = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p->value.data()), bytes), h);
  }
  for (const auto& bank : banks_) {
    for (const auto& rec : bank.projection) {
      if (rec) h = fnv1a(rec->source_id + "#" + std::to_string(rec->unit_index), h);
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::vector<Matrix> snapshot(const Model& model) {
  std::vector<Matrix> out;
  for (const ag::Parameter* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore(Model& model, const std::vector<Matrix>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) throw std::invalid_argument("snapshot does not match model");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace mailproto
