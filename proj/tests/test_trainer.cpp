#include <sstream>

#include "doctest.h"
#include "mailproto/checkpoint.hpp"
#include "mailproto/trainer.hpp"
#include "support.hpp"

using namespace mailproto;

namespace {

struct Fixture {
  SyntheticCorpus corpus = testing::small_corpus(60, 8);
  SplitCorpus split = balance_and_split(corpus.emails, 1, {0.6, 0.2, 0.2});
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

bool all_finite(const Model& m) {
  for (const auto* p : m.parameters())
    if (!p->value.allFinite()) return false;
  return true;
}

}  // namespace

TEST_CASE("hyperparameter validation and json") {
  Hyperparams hp;
  CHECK_NOTHROW(validate(hp));
  hp.positive_class_weight = 1.5;
  CHECK_THROWS(validate(hp));
  Hyperparams other;
  other.learning_rate = 0.01;
  other.j = 6;
  const Hyperparams back = hyperparams_from_json(to_json(other));
  CHECK(to_json(back) == to_json(other));
  CHECK(apply(other, ModelConfig{}).j == 6);
}

TEST_CASE("decoupled weight decay") {
  ag::Parameter decayed{"w", ag::Matrix::Constant(1, 2, 2.0)};
  ag::Parameter plain{"b", ag::Matrix::Constant(1, 2, 2.0), true};
  AdamW opt({&decayed, &plain}, 0.1, 0.5);
  opt.step({ag::Matrix::Zero(1, 2), ag::Matrix::Zero(1, 2)});
  CHECK(decayed.value(0, 0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  CHECK(plain.value(0, 0) == 2.0);
  CHECK(opt.steps() == 1);
}

TEST_CASE("zero epochs leave the model untouched") {
  const auto& f = fixture();
  Model model(testing::tiny_config());
  const std::string before = model.version();
  Dataset tr = make_dataset(model, testing::prepare(f.split.train, f.corpus.parses));
  Dataset va = make_dataset(model, testing::prepare(f.split.val, f.corpus.parses));
  const RunHistory h = train(model, tr, va, testing::tiny_hyperparams(0));
  CHECK(h.epochs.empty());
  CHECK(h.projection_epochs.empty());
  CHECK(model.version() == before);
  CHECK_FALSE(model.projected());
}

TEST_CASE("training is deterministic and ends projected") {
  const auto& f = fixture();
  auto run = [&](std::string& version, std::string& history) {
    const Hyperparams hp = testing::tiny_hyperparams(3);
    Model model(apply(hp, testing::tiny_config()));
    Dataset tr = make_dataset(model, testing::prepare(f.split.train, f.corpus.parses));
    Dataset va = make_dataset(model, testing::prepare(f.split.val, f.corpus.parses));
    TrainOptions opt;
    opt.threads = 2;
    const RunHistory h = train(model, tr, va, hp, opt);
    CHECK(h.epochs.size() <= 3);
    CHECK_FALSE(h.aborted);
    CHECK(model.projected());
    CHECK(std::find(h.projection_epochs.begin(), h.projection_epochs.end(), h.best_epoch) != h.projection_epochs.end());
    CHECK(h.final_val.weighted_f1 == doctest::Approx(h.best_val_weighted_f1));
    version = model.version();
    history = to_json(h, false).dump();
  };
  std::string v1, h1, v2, h2;
  run(v1, h1);
  run(v2, h2);
  CHECK(v1 == v2);
  CHECK(h1 == h2);
}

TEST_CASE("checkpoint round trip reproduces metrics exactly") {
  const auto& f = fixture();
  const Hyperparams hp = testing::tiny_hyperparams(2);
  Model model(apply(hp, testing::tiny_config()));
  Dataset tr = make_dataset(model, testing::prepare(f.split.train, f.corpus.parses));
  Dataset va = make_dataset(model, testing::prepare(f.split.val, f.corpus.parses));
  train(model, tr, va, hp);
  const auto dir = testing::scratch_dir("checkpoint");
  save_checkpoint(model, dir);
  const auto loaded = load_checkpoint(dir);
  CHECK(loaded->version() == model.version());
  CHECK(loaded->projected());
  Dataset te = make_dataset(*loaded, testing::prepare(f.split.test, f.corpus.parses));
  CHECK(format_metrics(evaluate(*loaded, te.inputs)) == format_metrics(evaluate(model, te.inputs)));
  for (const auto& in : te.inputs)
    CHECK(loaded->predict(in).probabilities == model.predict(in).probabilities);
  for (Granularity g : kGranularities)
    for (int p = 0; p < model.bank(g).count(); ++p)
      CHECK(loaded->bank(g).projection[static_cast<std::size_t>(p)]->source_id ==
            model.bank(g).projection[static_cast<std::size_t>(p)]->source_id);
  CHECK_THROWS(load_checkpoint(dir / "missing"));
}

TEST_CASE("non-finite loss aborts with the last good state") {
  const auto& f = fixture();
  Hyperparams hp = testing::tiny_hyperparams(3);
  hp.learning_rate = 1e200;
  Model model(apply(hp, testing::tiny_config()));
  Dataset tr = make_dataset(model, testing::prepare(f.split.train, f.corpus.parses));
  Dataset va = make_dataset(model, testing::prepare(f.split.val, f.corpus.parses));
  std::ostringstream log;
  TrainOptions opt;
  opt.log = &log;
  const RunHistory h = train(model, tr, va, hp, opt);
  CHECK(h.aborted);
  CHECK_FALSE(h.abort_reason.empty());
  CHECK(all_finite(model));
}
