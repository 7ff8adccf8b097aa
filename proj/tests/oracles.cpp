#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mailproto/losses.hpp"
#include "mailproto/protonet.hpp"
#include "mailproto/synthetic.hpp"

namespace oracles {

using namespace mailproto;
using ag::Matrix;
using ag::RowVector;

namespace {

std::string num(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

void expect_near(Check& c, const std::string& what, double got, double want, double tol) {
  if (!(std::abs(got - want) <= tol)) c.fail(what + " = " + num(got) + ", expected " + num(want));
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

}  // namespace

Check similarity_suite(int pairs, std::uint64_t seed) {
  Check c;
  RowVector p(3);
  p << 0.25, -1.5, 3.0;
  expect_near(c, "sim(p,p)", similarity(p, p), std::log(1e4), 1e-9);
  expect_near(c, "sim(p,p) decimal", similarity(p, p), 9.21034, 5e-6);
  RowVector e = p;
  e(0) += 1.0;
  expect_near(c, "sim at unit distance", similarity(p, e), std::log(2.0 / 1.0001), 1e-9);
  expect_near(c, "sim at unit distance decimal", similarity(p, e), 0.69305, 5e-6);

  Rng rng(seed);
  std::vector<std::pair<double, double>> samples;
  samples.reserve(static_cast<std::size_t>(pairs));
  for (int i = 0; i < pairs; ++i) {
    RowVector a(5), b(5);
    for (int k = 0; k < 5; ++k) a(k) = rng.normal(0, 3), b(k) = rng.normal(0, 3);
    const double s = similarity(a, b);
    if (!(s > 0.0)) c.fail("non-positive similarity " + num(s));
    samples.emplace_back((a - b).squaredNorm(), s);
  }
  std::sort(samples.begin(), samples.end());
  int violations = 0;
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].first > samples[i - 1].first && !(samples[i].second < samples[i - 1].second)) ++violations;
  if (violations) c.fail(std::to_string(violations) + " monotonicity violations");
  if (!(similarity_from_sqdist(1e15) > 0.0)) c.fail("far-field score not positive");
  return c;
}

Check loss_values() {
  Check c;
  const double tol = 1e-9;
  {
    const Matrix uniform = Matrix::Constant(2, 2, 0.5);
    const std::vector<int> y{0, 1};
    expect_near(c, "ce uniform w=0.5", loss_ce(uniform, y, 0.5), 0.5 * std::log(2.0), tol);
    const Matrix onehot = (Matrix(2, 2) << 1, 0, 0, 1).finished();
    if (!(loss_ce(onehot, y, 0.5) <= 1e-6)) c.fail("ce of perfect predictions not ~0");
    const Matrix quarter = (Matrix(1, 2) << 0.75, 0.25).finished();
    const std::vector<int> one{1};
    expect_near(c, "ce p=0.25 w=1", loss_ce(quarter, one, 1.0), -std::log(0.25), tol);
    expect_near(c, "ce p=0.25 w=1 decimal", loss_ce(quarter, one, 1.0), 1.3863, 5e-5);

    ag::Tape t(false);
    const Matrix logits = (Matrix(2, 2) << 0.3, -0.7, 1.1, 0.2).finished();
    Matrix probs(2, 2);
    for (int r = 0; r < 2; ++r) {
      const auto p = softmax2(logits(r, 0), logits(r, 1));
      probs(r, 0) = p[0], probs(r, 1) = p[1];
    }
    expect_near(c, "ce tape vs value", loss_ce(t.constant(logits), y, 0.3).scalar(), loss_ce(probs, y, 0.3), 1e-12);
  }
  {
    const std::vector<int> same{0, 0};
    const Matrix identical = (Matrix(2, 2) << 1, 2, 1, 2).finished();
    expect_near(c, "div identical", loss_div(identical, same, 0.3), 1.4, tol);
    const Matrix orthogonal = (Matrix(2, 2) << 1, 0, 0, 1).finished();
    expect_near(c, "div orthogonal", loss_div(orthogonal, same, 0.3), 0.0, tol);
    const std::vector<int> split{0, 1};
    expect_near(c, "div one per class", loss_div(identical, split, 0.3), 0.0, tol);
    Diagnostics diag;
    const Matrix with_zero = (Matrix(2, 2) << 0, 0, 1, 0).finished();
    expect_near(c, "div zero-norm", loss_div(with_zero, same, 0.3, &diag), 0.0, tol);
    if (diag.empty()) c.fail("zero-norm prototype not reported");
    ag::Tape t(false);
    expect_near(c, "div tape", loss_div(t.constant(identical), same, 0.3).scalar(), 1.4, tol);
  }
  {
    const Matrix protos = (Matrix(3, 2) << 1, 0, 3, 0, 0, 2).finished();
    const std::vector<int> cls{0, 0, 1};
    const Matrix unit = (Matrix(1, 2) << 0, 0).finished();
    const std::vector<int> label0{0};
    expect_near(c, "cls", loss_cls(unit, label0, protos, cls), 1.0, tol);
    expect_near(c, "sep", loss_sep(unit, label0, protos, cls), -4.0, tol);
    expect_near(c, "sep margin", loss_sep(unit, label0, protos, cls, 2.5), -2.5, tol);
    const Matrix on_proto = (Matrix(1, 2) << 3, 0).finished();
    expect_near(c, "cls on prototype", loss_cls(on_proto, label0, protos, cls), 0.0, tol);
    const Matrix two = (Matrix(2, 2) << 0, 0, 3, 1).finished();
    const std::vector<int> labels{0, 0};
    expect_near(c, "cls mean of two", loss_cls(two, labels, protos, cls), 0.5 * (1.0 + 1.0), tol);
    const Matrix coincide = (Matrix(2, 2) << 1, 0, 1, 0).finished();
    const std::vector<int> split{0, 1};
    expect_near(c, "sep = -cls when prototypes coincide",
                loss_sep(unit, label0, coincide, split) + loss_cls(unit, label0, coincide, split), 0.0, tol);
    ag::Tape t(false);
    expect_near(c, "cls tape", loss_cls(t.constant(two), labels, t.constant(protos), cls).scalar(), 1.0, tol);
    expect_near(c, "sep tape", loss_sep(t.constant(unit), label0, t.constant(protos), cls).scalar(), -4.0, tol);
  }
  {
    expect_near(c, "spa zero", loss_spa(Matrix::Zero(3, 2)), 0.0, tol);
    expect_near(c, "spa {1,-2}", loss_spa((Matrix(1, 2) << 1, -2).finished()), 3.0, tol);
    Rng rng(3);
    const Matrix w = random_matrix(rng, 7, 2);
    double oracle = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) oracle += std::abs(w.data()[i]);
    expect_near(c, "spa random", loss_spa(w), oracle, 1e-12);
    ag::Tape t(false);
    expect_near(c, "spa tape", loss_spa(t.constant(w)).scalar(), oracle, 1e-12);
  }
  return c;
}

Check loss_signs(int trials, std::uint64_t seed) {
  Check c;
  Rng rng(seed);
  for (int i = 0; i < trials; ++i) {
    const int per_class = 1 + static_cast<int>(rng.index(4));
    const int d = 2 + static_cast<int>(rng.index(5));
    const Matrix protos = random_matrix(rng, 2 * per_class, d);
    std::vector<int> cls;
    for (int k = 0; k < 2 * per_class; ++k) cls.push_back(k < per_class ? 0 : 1);
    const int n = 1 + static_cast<int>(rng.index(6));
    const Matrix units = random_matrix(rng, n, d);
    std::vector<int> labels;
    for (int u = 0; u < n; ++u) labels.push_back(static_cast<int>(rng.index(2)));
    const double theta = rng.uniform(-0.5, 0.9);
    const double div = loss_div(protos, cls, theta);
    const double cl = loss_cls(units, labels, protos, cls);
    const double sep = loss_sep(units, labels, protos, cls);
    const double spa = loss_spa(random_matrix(rng, 4, 2));
    if (div < 0 || cl < 0 || spa < 0 || sep > 0) {
      c.fail("sign violation in trial " + std::to_string(i));
      break;
    }
    // zero exactly when every same-class cosine is within theta
    bool all_within = true;
    for (int q = 0; q < protos.rows(); ++q)
      for (int r = 0; r < protos.rows(); ++r)
        if (q != r && cls[static_cast<std::size_t>(q)] == cls[static_cast<std::size_t>(r)] &&
            protos.row(q).dot(protos.row(r)) / (protos.row(q).norm() * protos.row(r).norm()) > theta)
          all_within = false;
    if (all_within != (div == 0.0)) {
      c.fail("L_div zero set mismatch in trial " + std::to_string(i));
      break;
    }
  }
  return c;
}

GradientReport total_loss_gradient_check(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.encoder.d = 4;
  cfg.encoder.heads = 2;
  cfg.encoder.text_layers = 1;
  cfg.encoder.graph_layers = 1;
  cfg.encoder.ffn = 8;
  cfg.encoder.vocab_buckets = 32;
  cfg.encoder.max_document_tokens = 24;
  cfg.encoder.max_sentence_tokens = 12;
  cfg.j = cfg.k = cfg.m = 4;
  cfg.init_seed = seed;
  Model model(cfg);

  SyntheticConfig sc;
  sc.count = 4;
  sc.seed = seed;
  const SyntheticCorpus corpus = generate_synthetic_corpus(sc);
  std::vector<ModelInput> inputs;
  for (const auto& e : corpus.emails) inputs.push_back(model.featurize(prepare_email(e, &corpus.parses)));
  std::vector<const ModelInput*> batch;
  for (const auto& in : inputs) batch.push_back(&in);

  LossWeights w;
  w.positive_class_weight = 0.4;
  w.alpha = 0.2;
  w.beta = 0.1;
  w.gamma = 0.05;
  w.delta = 0.01;

  auto value = [&] {
    ag::Tape t(false);
    return total_loss(t, model, batch, w).scalar();
  };
  ag::Tape tape;
  tape.backward(total_loss(tape, model, batch, w));

  GradientReport report;
  Rng pick(seed + 17);
  const double h = 1e-6;
  for (ag::Parameter* p : model.parameters()) {
    ++report.parameters;
    const Matrix g = tape.grad(*p);
    std::vector<Eigen::Index> entries;
    if (p->value.size() <= 16) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) entries.push_back(i);
    } else {
      std::vector<Eigen::Index> nonzero;
      for (Eigen::Index i = 0; i < g.size(); ++i)
        if (g.data()[i] != 0.0) nonzero.push_back(i);
      for (int k = 0; k < 8 && !nonzero.empty(); ++k) entries.push_back(nonzero[pick.index(nonzero.size())]);
      for (int k = 0; k < 8; ++k) entries.push_back(static_cast<Eigen::Index>(pick.index(static_cast<std::size_t>(p->value.size()))));
    }
    for (Eigen::Index i : entries) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      const double up = value();
      p->value.data()[i] = keep - h;
      const double down = value();
      p->value.data()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.data()[i];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      ++report.entries;
      if (rel > report.worst_relative) {
        report.worst_relative = rel;
        report.worst_parameter = p->name;
      }
    }
  }
  return report;
}

Check projection_oracle(int prototypes, int units, int d, std::uint64_t seed) {
  Check c;
  ParameterStore store;
  Rng rng(seed);
  PrototypeBank bank = make_bank(Granularity::sentence, prototypes, d, store, rng);
  UnitPool pool;
  pool.embeddings = random_matrix(rng, units, d);
  for (int u = 0; u < units; ++u) {
    pool.labels.push_back(u < 2 ? u : static_cast<int>(rng.index(2)));
    ProjectionRecord r;
    r.source_id = "unit" + std::to_string(u);
    pool.provenance.push_back(r);
  }
  std::vector<int> expect;
  for (int p = 0; p < prototypes; ++p) {
    int best = -1;
    double best_d = 0.0;
    for (int u = 0; u < units; ++u) {
      if (pool.labels[static_cast<std::size_t>(u)] != bank.class_of[static_cast<std::size_t>(p)]) continue;
      double dist = 0.0;
      for (int k = 0; k < d; ++k) dist += std::pow(bank.value()(p, k) - pool.embeddings(u, k), 2);
      if (best < 0 || dist < best_d) best = u, best_d = dist;
    }
    expect.push_back(best);
  }
  const std::vector<int> got = project_prototypes(bank, pool);
  if (got != expect) c.fail("assignments differ from exhaustive search");
  for (int p = 0; p < prototypes; ++p)
    if (bank.value().row(p) != pool.embeddings.row(expect[static_cast<std::size_t>(p)]))
      c.fail("prototype " + std::to_string(p) + " not replaced by its unit");
  const Matrix once = bank.value();
  const std::vector<int> again = project_prototypes(bank, pool);
  if (again != got || bank.value() != once) c.fail("second projection changed the bank");
  return c;
}

ScoreFunction toy_score() {
  return [](const Matrix& x, Matrix* gradient) {
    RowVector a(4), b(4);
    a << 0.7, -0.4, 0.9, 0.2;
    b << -0.3, 0.8, 0.5, -0.6;
    double f = 0.0;
    if (gradient) gradient->setZero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double u = x.row(i).dot(a), v = x.row(i).dot(b), t = std::tanh(u);
      f += t * v + 0.1 * x.row(i).squaredNorm();
      if (gradient) gradient->row(i) = (1 - t * t) * v * a + t * b + 0.2 * x.row(i);
    }
    return f;
  };
}

double ig_relative_gap(int steps) {
  Rng rng(11);
  const Matrix x = random_matrix(rng, 6, 4, 1.5);
  const Matrix baseline = Matrix::Zero(6, 4);
  const Attribution a = integrated_gradients(toy_score(), x, baseline, steps, "zeros");
  return a.completeness_gap() / std::abs(a.f_input - a.f_baseline);
}

ReferenceMetrics reference_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  ReferenceMetrics r;
  const double n = static_cast<double>(y_true.size());
  double correct = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) correct += y_true[i] == y_pred[i];
  r.accuracy = correct / n;
  for (int k = 0; k < 2; ++k) {
    double tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      tp += y_true[i] == k && y_pred[i] == k;
      predicted += y_pred[i] == k;
      actual += y_true[i] == k;
    }
    const double precision = predicted > 0 ? tp / predicted : 0.0;
    const double recall = actual > 0 ? tp / actual : 0.0;
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    r.macro_f1 += f1 / 2;
    r.weighted_f1 += f1 * actual / n;
  }
  return r;
}

Check metrics_oracle(int random_cases, std::uint64_t seed) {
  Check c;
  const double tol = 1e-12;
  {
    const std::vector<int> t{1, 1, 0, 0}, p{1, 0, 0, 0};
    const Metrics m = compute_metrics(t, p);
    expect_near(c, "fixture class-1 F1", m.per_class[1].f1, 2.0 / 3.0, tol);
    expect_near(c, "fixture class-0 F1", m.per_class[0].f1, 0.8, tol);
    expect_near(c, "fixture weighted F1", m.weighted_f1, (0.8 + 2.0 / 3.0) / 2, tol);
    expect_near(c, "fixture weighted F1 decimal", m.weighted_f1, 0.7333, 5e-5);
    expect_near(c, "fixture macro = weighted on balanced", m.macro_f1, m.weighted_f1, tol);
    const std::vector<int> ones{1, 1, 1, 1};
    expect_near(c, "all-one weighted F1", compute_metrics(t, ones).weighted_f1, 1.0 / 3.0, tol);
    expect_near(c, "perfect", compute_metrics(t, t).weighted_f1, 1.0, tol);
  }
  Rng rng(seed);
  for (int i = 0; i < random_cases; ++i) {
    const std::size_t n = 4 + rng.index(60);
    const double bias = rng.uniform(0.1, 0.9);
    std::vector<int> t, p;
    for (std::size_t k = 0; k < n; ++k) {
      t.push_back(rng.bernoulli(0.5) ? 1 : 0);
      p.push_back(rng.bernoulli(bias) ? t.back() : 1 - t.back());
    }
    const Metrics m = compute_metrics(t, p);
    const Metrics from_confusion = metrics_from_confusion(m.confusion);
    const ReferenceMetrics ref = reference_metrics(t, p);
    const std::string tag = "case " + std::to_string(i) + " ";
    expect_near(c, tag + "weighted", m.weighted_f1, ref.weighted_f1, tol);
    expect_near(c, tag + "macro", m.macro_f1, ref.macro_f1, tol);
    expect_near(c, tag + "accuracy", m.accuracy, ref.accuracy, tol);
    expect_near(c, tag + "confusion path", from_confusion.weighted_f1, ref.weighted_f1, tol);
  }
  return c;
}

}  // namespace oracles
