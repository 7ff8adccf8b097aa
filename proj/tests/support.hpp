#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mailproto/autograd.hpp"
#include "mailproto/synthetic.hpp"
#include "mailproto/trainer.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& rel) {
  return std::filesystem::path(MAILPROTO_FIXTURES) / rel;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mailproto_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Small enough that a few epochs take well under a second per email batch.
inline mailproto::ModelConfig tiny_config(int prototypes = 4) {
  mailproto::ModelConfig c;
  c.encoder.d = 8;
  c.encoder.heads = 2;
  c.encoder.text_layers = 1;
  c.encoder.graph_layers = 1;
  c.encoder.ffn = 16;
  c.encoder.vocab_buckets = 256;
  c.encoder.max_document_tokens = 48;
  c.encoder.max_sentence_tokens = 24;
  c.j = c.k = c.m = prototypes;
  return c;
}

inline mailproto::Hyperparams tiny_hyperparams(int epochs, int prototypes = 4) {
  mailproto::Hyperparams hp;
  hp.epochs = epochs;
  hp.batch_size = 16;
  hp.j = hp.k = hp.m = prototypes;
  hp.projection_every = 2;
  return hp;
}

inline mailproto::SyntheticCorpus small_corpus(std::size_t count, std::uint64_t seed = 3) {
  mailproto::SyntheticConfig c;
  c.count = count;
  c.seed = seed;
  return mailproto::generate_synthetic_corpus(c);
}

inline std::vector<mailproto::PreparedEmail> prepare(const std::vector<mailproto::LabeledEmail>& emails,
                                                     const mailproto::ParseIndex& parses) {
  std::vector<mailproto::PreparedEmail> out;
  for (const auto& e : emails) out.push_back(mailproto::prepare_email(e, &parses));
  return out;
}

struct TrainedTiny {
  mailproto::SyntheticCorpus corpus;
  mailproto::SplitCorpus split;
  std::unique_ptr<mailproto::Model> model;
  std::vector<mailproto::PreparedEmail> train;
  std::vector<mailproto::PreparedEmail> test;
};

// One shared small trained model; built on first use.
inline const TrainedTiny& trained_tiny() {
  static const TrainedTiny t = [] {
    TrainedTiny r;
    r.corpus = small_corpus(80, 12);
    r.split = mailproto::balance_and_split(r.corpus.emails, 2, {0.6, 0.2, 0.2});
    const mailproto::Hyperparams hp = tiny_hyperparams(4);
    r.model = std::make_unique<mailproto::Model>(mailproto::apply(hp, tiny_config()));
    r.train = prepare(r.split.train, r.corpus.parses);
    r.test = prepare(r.split.test, r.corpus.parses);
    mailproto::Dataset tr = mailproto::make_dataset(*r.model, r.train);
    mailproto::Dataset va = mailproto::make_dataset(*r.model, prepare(r.split.val, r.corpus.parses));
    mailproto::train(*r.model, tr, va, hp);
    return r;
  }();
  return t;
}

// Largest relative disagreement between tape gradients and central differences of f at x.
inline double fd_check(const mailproto::ag::Matrix& x,
                       const std::function<mailproto::ag::Var(mailproto::ag::Tape&, mailproto::ag::Var)>& f,
                       double h = 1e-6) {
  using namespace mailproto::ag;
  Tape tape;
  Var v = tape.variable(x);
  tape.backward(f(tape, v));
  const Matrix g = tape.grad(v);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    Tape tp(false), tm(false);
    const double fp = f(tp, tp.variable(xp)).scalar();
    const double fm = f(tm, tm.variable(xm)).scalar();
    const double num = (fp - fm) / (2 * h);
    const double err = std::abs(num - g.data()[i]) / std::max(1.0, std::abs(num));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace testing
