// Acceptance runner: one PASS / FAIL / SKIP line per criterion, exit status 1 on any FAIL.
#include <chrono>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mailproto/edits.hpp"
#include "mailproto/pipeline.hpp"
#include "oracles.hpp"

using namespace mailproto;

namespace {

struct Outcome {
  enum Kind { pass, fail, skip } kind = pass;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

int failures = 0;

void run(const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {Outcome::fail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (o.kind != Outcome::skip && budget_seconds > 0 && secs > budget_seconds) {
    o.kind = Outcome::fail;
    o.detail += " (over the " + std::to_string(static_cast<int>(budget_seconds)) + " s budget)";
  }
  const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::fail ? "FAIL" : "SKIP";
  if (o.kind == Outcome::fail) ++failures;
  std::cout << tag << "  " << name << "  [" << std::fixed << std::setprecision(1) << secs << " s]  " << o.detail
            << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

// Planted-trigger corpus and the models trained for the learning criterion, reused by the edit criterion.
struct DeskScale {
  ExperimentData data;
  std::vector<std::unique_ptr<Model>> models;
  std::vector<double> val_f1;
};

DeskScale& desk() {
  static DeskScale d;
  return d;
}

ModelConfig desk_config() {
  ModelConfig c;
  c.encoder.d = 32;
  c.encoder.max_document_tokens = 128;
  return c;
}

Hyperparams desk_hyperparams(std::uint64_t seed) {
  Hyperparams hp;
  hp.learning_rate = 2e-3;
  hp.epochs = 30;
  hp.seed = seed;
  return hp;
}

Outcome desk_scale_learning() {
  SyntheticConfig sc;
  sc.count = 2000;
  sc.seed = 11;
  const SyntheticCorpus corpus = generate_synthetic_corpus(sc);
  const SplitCorpus split = balance_and_split(corpus.emails, 1, {0.8, 0.1, 0.1});
  DeskScale& d = desk();
  d.data = prepare_split(split, corpus.parses);
  std::string detail = "val weighted F1 per seed:";
  bool ok = true;
  for (std::uint64_t seed : kSeeds) {
    const Hyperparams hp = desk_hyperparams(seed);
    auto model = std::make_unique<Model>(apply(hp, desk_config()));
    Dataset tr = make_dataset(*model, d.data.train);
    Dataset va = make_dataset(*model, d.data.val);
    const RunHistory h = train(*model, tr, va, hp);
    const double f1 = h.final_val.weighted_f1;
    ok = ok && !h.aborted && f1 >= 0.95 && static_cast<int>(h.epochs.size()) <= 30;
    detail += " " + fmt(f1);
    d.val_f1.push_back(f1);
    d.models.push_back(std::move(model));
  }
  return verdict(ok, detail + " (need >= 0.95 on all)");
}

Outcome edit_direction() {
  DeskScale& d = desk();
  if (d.models.size() != kSeeds.size()) return {Outcome::fail, "desk-scale models unavailable"};
  bool ok = true;
  std::string detail = "main vs closing flip ratio per seed:";
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    const std::vector<std::uint64_t> seed{kSeeds[i]};
    const auto report = simulate_edits(*d.models[i], d.data.test, kEditPositions, seed);
    double main = 0.0, closing = 0.0;
    for (const auto& p : report.positions) {
      if (p.position == EditPosition::main) main = p.mean.value_or(0.0);
      if (p.position == EditPosition::closing) closing = p.mean.value_or(0.0);
    }
    ok = ok && main >= closing;
    detail += " " + fmt(main, 3) + "/" + fmt(closing, 3);
  }
  return verdict(ok, detail);
}

Outcome enron_sanity() {
  const char* root = std::getenv("ENRON_MAILDIR");
  if (!root || !*root) return {Outcome::skip, "set ENRON_MAILDIR to the extracted maildir (optionally ENRON_PARSES)"};
  CorpusSource src;
  src.kind = CorpusKind::enron;
  src.path = root;
  if (const char* p = std::getenv("ENRON_PARSES")) src.parses = p;
  CorpusBundle bundle = load_corpus(src);

  std::vector<LabeledEmail> pos, neg;
  for (const auto& e : bundle.emails) (e.label == 1 ? pos : neg).push_back(e);
  Rng rng(1);
  rng.shuffle(pos);
  rng.shuffle(neg);
  if (pos.size() < 1000 || neg.size() < 1000)
    return {Outcome::fail, "corpus has fewer than 1000 emails in a class"};
  std::vector<LabeledEmail> subset(pos.begin(), pos.begin() + 1000);
  subset.insert(subset.end(), neg.begin(), neg.begin() + 1000);
  const SplitCorpus split = balance_and_split(subset, 1, {0.8, 0.1, 0.1});
  const ExperimentData data = prepare_split(split, bundle.parses);

  ModelConfig base = desk_config();
  base.encoder.components = ComponentSet::parse("SC");
  const std::vector<AblationConfig> configs{{"full", ViewVariant::text_graph, true, ComponentSet::parse("SC")},
                                            {"text only", ViewVariant::text, true, ComponentSet::parse("SC")}};
  Hyperparams hp = desk_hyperparams(1);
  hp.j = hp.k = hp.m = 10;
  const AblationReport r = ablation_run(configs, base, hp, data, kSeeds);
  const double full = r.rows[0].mean, text = r.rows[1].mean;
  return verdict(full >= 0.333 + 0.20 && full >= text,
                 "full " + fmt(full) + ", text only " + fmt(text) + ", majority 0.333");
}

Outcome end_to_end_determinism() {
  auto once = [](std::string& manifest, std::string& metrics, std::string& report) {
    SyntheticConfig sc;
    sc.count = 200;
    sc.seed = 5;
    const SyntheticCorpus corpus = generate_synthetic_corpus(sc);
    const SplitCorpus split = balance_and_split(corpus.emails, 3, {0.8, 0.1, 0.1});
    manifest = format_manifest(manifest_of(split));
    const ExperimentData data = prepare_split(split, corpus.parses);
    Hyperparams hp;
    hp.epochs = 3;
    hp.j = hp.k = hp.m = 4;
    hp.projection_every = 2;
    ModelConfig mc;
    mc.encoder.d = 16;
    mc.encoder.max_document_tokens = 96;
    Model model(apply(hp, mc));
    Dataset tr = make_dataset(model, data.train);
    Dataset va = make_dataset(model, data.val);
    train(model, tr, va, hp);
    const Dataset te = make_dataset(model, data.test);
    metrics = format_metrics(evaluate(model, te.inputs));
    report.clear();
    for (std::size_t i = 0; i < 3 && i < data.test.size(); ++i) {
      const ExplanationReport r = explain(model, data.test[i], 3);
      report += format_report(r) + to_json(r).dump();
    }
  };
  std::string m1, e1, r1, m2, e2, r2;
  once(m1, e1, r1);
  once(m2, e2, r2);
  const bool ok = m1 == m2 && e1 == e2 && r1 == r2;
  return verdict(ok, std::string("manifest ") + (m1 == m2 ? "same" : "differs") + ", metrics " +
                         (e1 == e2 ? "same" : "differs") + ", explanations " + (r1 == r2 ? "same" : "differs"));
}

}  // namespace

int main() {
  run("similarity unit suite", 1, [] {
    const auto c = oracles::similarity_suite();
    return verdict(c.ok, c.ok ? "sim(p,p)=ln 1e4, 10000 pairs monotone and positive" : c.detail);
  });
  run("loss suite", 30, [] {
    const auto v = oracles::loss_values();
    const auto s = oracles::loss_signs();
    const auto g = oracles::total_loss_gradient_check();
    std::string detail = "worst FD relative error " + std::to_string(g.worst_relative) + " over " +
                         std::to_string(g.entries) + " entries";
    if (!v.ok) detail += "; values: " + v.detail;
    if (!s.ok) detail += "; signs: " + s.detail;
    return verdict(v.ok && s.ok && g.worst_relative < 1e-4, detail);
  });
  run("projection oracle", 5, [] {
    const auto c = oracles::projection_oracle(20, 200);
    return verdict(c.ok, c.ok ? "20 prototypes x 200 units match exhaustive search; idempotent" : c.detail);
  });
  run("desk-scale learning", 600, desk_scale_learning);
  run("enron sanity", 3600, enron_sanity);
  run("integrated gradients completeness", 0, [] {
    const double g16 = oracles::ig_relative_gap(16), g128 = oracles::ig_relative_gap(128);
    return verdict(g16 <= 0.05 && g128 <= 0.01, "gap " + fmt(100 * g16, 3) + "% at 16 steps, " +
                                                     fmt(100 * g128, 3) + "% at 128 steps");
  });
  run("edit simulation direction", 0, edit_direction);
  run("metrics oracle", 0, [] {
    const auto c = oracles::metrics_oracle();
    return verdict(c.ok, c.ok ? "0.7333 fixture and 20 random label sets within 1e-12" : c.detail);
  });
  run("end-to-end determinism", 0, end_to_end_determinism);
  return failures ? 1 : 0;
}
