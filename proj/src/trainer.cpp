#include "mailproto/trainer.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "mailproto/parallel.hpp"

namespace mailproto {

using ag::Matrix;

void validate(const Hyperparams& hp) {
  if (hp.batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (!(hp.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  for (double c : {hp.positive_class_weight, hp.alpha, hp.beta, hp.gamma, hp.delta, hp.lambda1, hp.lambda2,
                   hp.weight_decay, hp.sep_margin})
    if (!(c >= 0.0)) throw std::invalid_argument("loss coefficients and weights must be non-negative");
  if (!(hp.positive_class_weight > 0.0 && hp.positive_class_weight < 1.0))
    throw std::invalid_argument("positive_class_weight must lie in (0, 1)");
  if (hp.theta < -1.0 || hp.theta > 1.0) throw std::invalid_argument("theta must lie in [-1, 1]");
  for (int n : {hp.j, hp.k, hp.m})
    if (n <= 0 || n % 2 != 0) throw std::invalid_argument("prototype counts must be even and positive");
  if (hp.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (hp.projection_every <= 0) throw std::invalid_argument("projection_every must be positive");
  if (hp.patience <= 0) throw std::invalid_argument("patience must be positive");
}

LossWeights loss_weights(const Hyperparams& hp) {
  LossWeights w;
  w.positive_class_weight = hp.positive_class_weight;
  w.theta = hp.theta;
  w.alpha = hp.alpha;
  w.beta = hp.beta;
  w.gamma = hp.gamma;
  w.delta = hp.delta;
  w.sep_margin = hp.sep_margin;
  return w;
}

ModelConfig apply(const Hyperparams& hp, ModelConfig base) {
  base.j = hp.j;
  base.k = hp.k;
  base.m = hp.m;
  base.lambda1 = hp.lambda1;
  base.lambda2 = hp.lambda2;
  base.init_seed = hp.seed;
  return base;
}

nlohmann::json to_json(const Hyperparams& hp) {
  return {{"batch_size", hp.batch_size},
          {"learning_rate", hp.learning_rate},
          {"positive_class_weight", hp.positive_class_weight},
          {"j", hp.j},
          {"k", hp.k},
          {"m", hp.m},
          {"theta", hp.theta},
          {"alpha", hp.alpha},
          {"beta", hp.beta},
          {"gamma", hp.gamma},
          {"delta", hp.delta},
          {"lambda1", hp.lambda1},
          {"lambda2", hp.lambda2},
          {"weight_decay", hp.weight_decay},
          {"epochs", hp.epochs},
          {"seed", hp.seed},
          {"projection_every", hp.projection_every},
          {"patience", hp.patience},
          {"sep_margin", hp.sep_margin}};
}

Hyperparams hyperparams_from_json(const nlohmann::json& j, Hyperparams hp) {
  auto read = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  read("batch_size", hp.batch_size);
  read("learning_rate", hp.learning_rate);
  read("positive_class_weight", hp.positive_class_weight);
  read("j", hp.j);
  read("k", hp.k);
  read("m", hp.m);
  read("theta", hp.theta);
  read("alpha", hp.alpha);
  read("beta", hp.beta);
  read("gamma", hp.gamma);
  read("delta", hp.delta);
  read("lambda1", hp.lambda1);
  read("lambda2", hp.lambda2);
  read("weight_decay", hp.weight_decay);
  read("epochs", hp.epochs);
  read("seed", hp.seed);
  read("projection_every", hp.projection_every);
  read("patience", hp.patience);
  read("sep_margin", hp.sep_margin);
  return hp;
}

// ---- optimiser ---------------------------------------------------------------------

AdamW::AdamW(std::vector<ag::Parameter*> params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(const std::vector<Matrix>& grads) {
  if (grads.size() != params_.size()) throw std::invalid_argument("AdamW: one gradient per parameter required");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Matrix& p = params_[i]->value;
    const Matrix& g = grads[i];
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    const Matrix update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_);
    if (!params_[i]->no_decay && wd_ > 0.0) p -= lr_ * wd_ * p;
    p -= lr_ * update;
  }
}

// ---- data ---------------------------------------------------------------------------

Dataset make_dataset(const Model& model, std::vector<PreparedEmail> emails) {
  Dataset d;
  d.emails = std::move(emails);
  d.inputs.resize(d.emails.size());
  parallel_for(d.emails.size(), 0, [&](std::size_t i) { d.inputs[i] = model.featurize(d.emails[i]); });
  return d;
}

std::array<UnitPool, 3> build_unit_pools(const Model& model, const Dataset& data, int threads) {
  std::vector<Prediction> preds(data.inputs.size());
  parallel_for(data.inputs.size(), threads, [&](std::size_t i) { preds[i] = model.predict(data.inputs[i]); });

  std::array<UnitPool, 3> pools;
  const auto d = model.config().encoder.d;
  std::array<std::vector<ag::RowVector>, 3> rows;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const PreparedEmail& e = data.emails[i];
    const MultiViewEmbedding& v = preds[i].views;
    ProjectionRecord base;
    base.source_id = e.email.id;
    base.source_label = e.label;
    base.source_subject = e.email.subject;
    base.source_document = v.e_D;
    if (model.config().uses(Granularity::document)) {
      ProjectionRecord r = base;
      r.surface_text = e.email.body;
      pools[0].provenance.push_back(std::move(r));
      pools[0].labels.push_back(e.label);
      rows[0].push_back(v.e_D);
    }
    if (model.config().uses(Granularity::sentence)) {
      for (Eigen::Index s = 0; s < v.e_S.rows(); ++s) {
        ProjectionRecord r = base;
        r.unit_index = static_cast<int>(s);
        r.surface_text = e.sentences[static_cast<std::size_t>(s)].text;
        r.source_parse = format_conllu({e.email.id, static_cast<int>(s)}, e.sentences[static_cast<std::size_t>(s)].graph);
        pools[1].provenance.push_back(std::move(r));
        pools[1].labels.push_back(e.label);
        rows[1].push_back(v.e_S.row(s));
      }
    }
    if (model.config().uses(Granularity::phrase)) {
      for (Eigen::Index q = 0; q < v.e_P.rows(); ++q) {
        const PhraseSubgraph& ph = e.phrases[static_cast<std::size_t>(q)];
        ProjectionRecord r = base;
        r.unit_index = static_cast<int>(q);
        r.surface_text = ph.surface_text;
        r.source_parse = format_conllu({e.email.id, ph.sentence_index},
                                       e.sentences[static_cast<std::size_t>(ph.sentence_index)].graph);
        pools[2].provenance.push_back(std::move(r));
        pools[2].labels.push_back(e.label);
        rows[2].push_back(v.e_P.row(q));
      }
    }
  }
  for (std::size_t g = 0; g < 3; ++g) {
    pools[g].embeddings.resize(static_cast<Eigen::Index>(rows[g].size()), d);
    for (std::size_t r = 0; r < rows[g].size(); ++r) pools[g].embeddings.row(static_cast<Eigen::Index>(r)) = rows[g][r];
  }
  return pools;
}

void initialize_prototypes(Model& model, const Dataset& data, std::uint64_t seed, int threads) {
  if (!model.config().use_prototypes) return;
  const auto pools = build_unit_pools(model, data, threads);
  Rng rng(mix_seed(seed, 0x696e6974ULL));
  for (Granularity g : kGranularities) {
    if (!model.config().uses(g)) continue;
    PrototypeBank& bank = model.bank(g);
    const UnitPool& pool = pools[static_cast<std::size_t>(g)];
    for (int cls = 0; cls < 2; ++cls) {
      std::vector<int> candidates;
      for (std::size_t u = 0; u < pool.labels.size(); ++u)
        if (pool.labels[u] == cls) candidates.push_back(static_cast<int>(u));
      if (candidates.empty())
        throw std::runtime_error("cannot initialise " + to_string(g) + " prototypes: no units of class " +
                                 std::to_string(cls));
      rng.shuffle(candidates);
      std::size_t next = 0;
      for (int i : bank.prototypes_of_class(cls)) {
        bank.vectors->value.row(i) = pool.embeddings.row(candidates[next % candidates.size()]);
        ++next;
      }
    }
    bank.projection.assign(static_cast<std::size_t>(bank.count()), std::nullopt);
  }
}

void project_model(Model& model, const Dataset& data, int threads) {
  if (!model.config().use_prototypes) return;
  const auto pools = build_unit_pools(model, data, threads);
  for (Granularity g : kGranularities) {
    if (model.config().uses(g)) project_prototypes(model.bank(g), pools[static_cast<std::size_t>(g)]);
  }
}

// ---- training loop ----------------------------------------------------------------------

namespace {

struct State {
  std::vector<Matrix> values;
  std::array<std::vector<std::optional<ProjectionRecord>>, 3> projection;
};

State capture(const Model& model) {
  State s{snapshot(model), {}};
  for (Granularity g : kGranularities) s.projection[static_cast<std::size_t>(g)] = model.bank(g).projection;
  return s;
}

void reinstate(Model& model, const State& s) {
  restore(model, s.values);
  for (Granularity g : kGranularities) model.bank(g).projection = s.projection[static_cast<std::size_t>(g)];
}

}  // namespace

nlohmann::json to_json(const RunHistory& h, bool include_timing) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"loss",
                      {{"ce", e.train_loss.ce},
                       {"div", e.train_loss.div},
                       {"cls", e.train_loss.cls},
                       {"sep", e.train_loss.sep},
                       {"spa", e.train_loss.spa},
                       {"total", e.train_loss.total}}},
                     {"val_weighted_f1", e.val_weighted_f1},
                     {"val_macro_f1", e.val_macro_f1},
                     {"projected", e.projected}};
    if (include_timing) j["seconds"] = e.seconds;
    epochs.push_back(std::move(j));
  }
  nlohmann::json out{{"epochs", epochs},
                     {"projection_epochs", h.projection_epochs},
                     {"best_epoch", h.best_epoch},
                     {"best_val_weighted_f1", h.best_val_weighted_f1},
                     {"final_val", to_json(h.final_val)},
                     {"aborted", h.aborted},
                     {"abort_reason", h.abort_reason}};
  if (include_timing) out["wall_seconds"] = h.wall_seconds;
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

bool all_finite(const std::vector<Matrix>& grads) {
  for (const auto& g : grads)
    if (!g.allFinite()) return false;
  return true;
}

constexpr std::size_t kGradientChunks = 8;

}  // namespace

RunHistory train(Model& model, const Dataset& train, const Dataset& val, const Hyperparams& hp,
                 const TrainOptions& options) {
  validate(hp);
  RunHistory history;
  if (hp.epochs == 0) return history;
  if (train.inputs.empty()) throw std::invalid_argument("training set is empty");
  const auto start = Clock::now();
  const LossWeights weights = loss_weights(hp);
  const auto params = model.parameters();

  initialize_prototypes(model, train, hp.seed, options.threads);
  AdamW opt(params, hp.learning_rate, hp.weight_decay);
  Rng rng(mix_seed(hp.seed, 0x7368756666ULL));
  std::vector<std::size_t> order(train.inputs.size());
  std::iota(order.begin(), order.end(), 0);

  State best = capture(model);
  double best_f1 = -1.0;
  int stale = 0;

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    rng.shuffle(order);
    LossBreakdown epoch_loss;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(hp.batch_size));
      std::vector<const ModelInput*> batch;
      for (std::size_t i = b0; i < b1; ++i) batch.push_back(&train.inputs[order[i]]);

      std::vector<Matrix> grads;
      grads.reserve(params.size());
      for (const auto* p : params) grads.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      LossBreakdown batch_breakdown;

      if (weights.sep_margin > 0.0) {
        ag::Tape tape;
        ag::Var loss = total_loss(tape, model, batch, weights, &batch_breakdown);
        tape.backward(loss);
        for (std::size_t p = 0; p < params.size(); ++p) tape.add_grad_to(*params[p], grads[p]);
      } else {
        const UnitCounts counts = count_units(model, batch);
        const std::size_t chunks = std::min(kGradientChunks, batch.size());
        std::vector<std::vector<Matrix>> chunk_grads(chunks);
        std::vector<LossBreakdown> chunk_loss(chunks);
        parallel_for(chunks, options.threads, [&](std::size_t c) {
          auto& g = chunk_grads[c];
          for (const auto* p : params) g.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
          const std::size_t lo = c * batch.size() / chunks, hi = (c + 1) * batch.size() / chunks;
          for (std::size_t i = lo; i < hi; ++i) {
            ag::Tape tape;
            ag::Var loss = example_loss(tape, model, *batch[i], weights, batch.size(), counts, &chunk_loss[c]);
            tape.backward(loss);
            for (std::size_t p = 0; p < params.size(); ++p) tape.add_grad_to(*params[p], g[p]);
          }
        });
        for (std::size_t c = 0; c < chunks; ++c) {
          for (std::size_t p = 0; p < params.size(); ++p) grads[p] += chunk_grads[c][p];
          batch_breakdown += chunk_loss[c];
        }
        ag::Tape tape;
        ag::Var loss = batch_loss(tape, model, weights, &batch_breakdown);
        tape.backward(loss);
        for (std::size_t p = 0; p < params.size(); ++p) tape.add_grad_to(*params[p], grads[p]);
      }

      if (!std::isfinite(batch_breakdown.total) || !all_finite(grads)) {
        history.aborted = true;
        history.abort_reason = "non-finite loss or gradient in epoch " + std::to_string(epoch);
        reinstate(model, best);
        if (options.log) *options.log << "aborting: " << history.abort_reason << "\n";
        break;
      }
      opt.step(grads);
      epoch_loss += batch_breakdown;
      ++batches;
    }
    if (history.aborted) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss;
    if (batches > 0) rec.train_loss *= 1.0 / static_cast<double>(batches);
    const bool prototypes = model.config().use_prototypes;
    // Candidates are scored as they would ship: with prototypes projected.
    std::optional<State> training_state;
    if (prototypes && epoch % hp.projection_every == 0) {
      rec.projected = true;
      history.projection_epochs.push_back(epoch);
    } else if (prototypes) {
      training_state = capture(model);
    }
    if (prototypes) project_model(model, train, options.threads);
    const Metrics m = evaluate(model, val.inputs, options.threads);
    rec.val_weighted_f1 = m.weighted_f1;
    rec.val_macro_f1 = m.macro_f1;
    rec.seconds = seconds_since(epoch_start);
    history.epochs.push_back(rec);
    if (options.log)
      *options.log << "epoch " << epoch << "  loss " << rec.train_loss.total << "  val_weighted_f1 "
                   << rec.val_weighted_f1 << (rec.projected ? "  (projected)" : "") << "\n";

    bool stop = false;
    if (m.weighted_f1 > best_f1) {
      best_f1 = m.weighted_f1;
      history.best_epoch = epoch;
      best = capture(model);
      stale = 0;
    } else if (++stale >= hp.patience) {
      stop = true;
    }
    if (training_state) reinstate(model, *training_state);
    if (stop) break;
  }

  reinstate(model, best);
  history.best_val_weighted_f1 = std::max(best_f1, 0.0);
  // already projected unless no epoch completed
  if (model.config().use_prototypes && !model.projected()) project_model(model, train, options.threads);
  if (model.config().use_prototypes) {
    auto& pe = history.projection_epochs;
    if (std::find(pe.begin(), pe.end(), history.best_epoch) == pe.end()) pe.push_back(history.best_epoch);
  }
  history.final_val = evaluate(model, val.inputs, options.threads);
  history.wall_seconds = seconds_since(start);
  if (options.log) *options.log << "final val_weighted_f1 " << history.final_val.weighted_f1 << "\n";
  return history;
}

}  // namespace mailproto
