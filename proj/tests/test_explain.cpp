#include <cmath>

#include "doctest.h"
#include "mailproto/explain.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mailproto;
using ag::Matrix;

TEST_CASE("integrated gradients closed forms") {
  const ScoreFunction linear = [](const Matrix& x, Matrix* g) {
    if (g) *g = (Matrix(2, 1) << 2.0, 3.0).finished();
    return 2 * x(0, 0) + 3 * x(1, 0);
  };
  const Matrix x = Matrix::Ones(2, 1), zero = Matrix::Zero(2, 1);
  const Attribution a = integrated_gradients(linear, x, zero, 7, "zeros");
  CHECK(a.token_scores == std::vector<double>{2.0, 3.0});
  CHECK(a.total() == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(a.completeness_gap() < 1e-12);
  CHECK(a.steps == 7);
  CHECK(a.baseline == "zeros");

  const Attribution same = integrated_gradients(oracles::toy_score(), x.replicate(3, 4), x.replicate(3, 4), 16);
  for (double s : same.token_scores) CHECK(s == 0.0);
  CHECK_THROWS(integrated_gradients(linear, x, Matrix::Zero(3, 1), 4));
  CHECK_THROWS(integrated_gradients(linear, x, zero, 0));
  const ScoreFunction broken = [](const Matrix&, Matrix* g) {
    if (g) *g = Matrix::Constant(2, 1, std::nan(""));
    return 0.0;
  };
  CHECK_THROWS(integrated_gradients(broken, x, zero, 4));
}

TEST_CASE("completeness tightens with more steps") {
  const double g16 = oracles::ig_relative_gap(16);
  const double g128 = oracles::ig_relative_gap(128);
  CHECK(g16 <= 0.05);
  CHECK(g128 <= 0.01);
  CHECK(g128 < g16);
}

TEST_CASE("document attribution on a trained model") {
  const auto& t = testing::trained_tiny();
  const ModelInput in = t.model->featurize(t.test.front());
  const Attribution a = document_attribution(*t.model, in, 128);
  CHECK(a.token_scores.size() == in.document_ids.size());
  CHECK(a.completeness_gap() <= 0.01 * std::abs(a.f_input - a.f_baseline) + 1e-9);
  const auto per_sentence = sentence_token_attribution(t.test.front(), in, a);
  CHECK(per_sentence.size() == t.test.front().sentences.size());
}

TEST_CASE("attention keyphrases") {
  const DependencyGraph g({{"Sam", "PROPN", 1, "nsubj"},
                           {"eats", "VERB", -1, "root"},
                           {"red", "ADJ", 3, "amod"},
                           {"apples", "NOUN", 1, "dobj"}});
  const std::vector<double> attention{0.1, 0.2, 0.1, 0.6};
  const Keyphrase k = attention_keyphrases(g, attention);
  CHECK(k.keyword_text == "apples");
  CHECK(k.text == "red apples");
  CHECK(k.tokens == std::vector<int>{2, 3});
  CHECK_FALSE(k.fallback);

  // equal attention: attribution decides, then the lower index
  const DependencyGraph two({{"bonus", "NOUN", 1, "compound"}, {"voucher", "NOUN", -1, "root"}});
  CHECK(attention_keyphrases(two, std::vector<double>{0.5, 0.5}, std::vector<double>{0.1, 0.9}).keyword == 1);
  CHECK(attention_keyphrases(two, std::vector<double>{0.5, 0.5}).keyword == 0);

  const DependencyGraph single({{"Thanks", "NOUN", -1, "root"}});
  const Keyphrase s = attention_keyphrases(single, std::vector<double>{1.0});
  CHECK(s.text == "Thanks");
  CHECK(s.keyword_text == "Thanks");

  const DependencyGraph verbs({{"Go", "VERB", -1, "root"}, {"run", "VERB", 0, "xcomp"}, {"jump", "VERB", 0, "conj"}});
  const Keyphrase f = attention_keyphrases(verbs, std::vector<double>{0.9, 0.05, 0.05}, std::vector<double>{0.1, 0.2, 0.7});
  CHECK(f.fallback);
  CHECK(f.keyword_text == "jump");

  // containment over random attentions
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> att(4);
    for (auto& a : att) a = rng.uniform();
    const Keyphrase r = attention_keyphrases(g, att);
    CHECK(std::find(r.tokens.begin(), r.tokens.end(), r.keyword) != r.tokens.end());
    for (std::size_t j = 1; j < r.tokens.size(); ++j) CHECK(r.tokens[j] == r.tokens[j - 1] + 1);
  }
}

TEST_CASE("explanation ranking equals brute force") {
  const auto& t = testing::trained_tiny();
  const Model& model = *t.model;
  for (const auto& email : t.test) {
    const ExplanationReport r = explain(model, email, 100);
    const Prediction p = model.predict(model.featurize(email));
    CHECK(r.probabilities == p.probabilities);
    for (Granularity g : kGranularities) {
      REQUIRE(r.ranked[static_cast<std::size_t>(g)]);
      const auto& list = *r.ranked[static_cast<std::size_t>(g)];
      const PrototypeBank& bank = model.bank(g);
      CHECK(static_cast<int>(list.size()) == bank.count());
      const Matrix units = g == Granularity::document ? Matrix(p.views.e_D)
                           : g == Granularity::sentence ? p.views.e_S
                                                        : p.views.e_P;
      std::vector<std::pair<double, int>> brute;
      for (int i = 0; i < bank.count(); ++i) {
        double best = -1.0;
        for (Eigen::Index u = 0; u < units.rows(); ++u)
          best = std::max(best, similarity(bank.value().row(i), units.row(u), bank.epsilon));
        brute.emplace_back(best, i);
      }
      std::stable_sort(brute.begin(), brute.end(), [](auto& a, auto& b) { return a.first > b.first; });
      for (std::size_t k = 0; k < list.size(); ++k) {
        CHECK(list[k].prototype == brute[k].second);
        CHECK(std::abs(list[k].similarity - brute[k].first) < 1e-12);
        CHECK(list[k].aggregate_score == p.similarities.at(g)(list[k].prototype));
        CHECK_FALSE(list[k].source.source_id.empty());
      }
    }
  }
}

TEST_CASE("a projected source ranks first at zero distance") {
  const auto& t = testing::trained_tiny();
  const Model& model = *t.model;
  const auto& rec = model.bank(Granularity::document).projection.front();
  REQUIRE(rec);
  const PreparedEmail* source = nullptr;
  for (const auto& e : t.train)
    if (e.email.id == rec->source_id) source = &e;
  REQUIRE(source);
  const ExplanationReport r = explain(model, *source, 3);
  const auto& top = r.ranked[0]->front();
  CHECK(top.similarity == doctest::Approx(std::log(1e4)).epsilon(1e-9));
  CHECK(top.source.source_id == source->email.id);
  CHECK(r.ranked[0]->size() == 3);
  CHECK(format_report(r) == format_report(explain(model, *source, 3)));
  CHECK(to_json(r).dump() == to_json(explain(model, *source, 3)).dump());
}

TEST_CASE("explanations need projected prototypes") {
  Model fresh(testing::tiny_config());
  CHECK_THROWS_AS(explain(fresh, testing::trained_tiny().test.front(), 3), NotProjectedError);
  CHECK_THROWS(explain(*testing::trained_tiny().model, testing::trained_tiny().test.front(), 0));
}

TEST_CASE("email keyphrases cover every sentence") {
  const auto& t = testing::trained_tiny();
  const auto ks = email_keyphrases(*t.model, t.test.front(), 16);
  CHECK(ks.size() == t.test.front().sentences.size());
  for (const auto& k : ks) CHECK(k.sentence_text.find(k.keyphrase.keyword_text) != std::string::npos);
}
