#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mailproto/protonet.hpp"
#include "support.hpp"

using namespace mailproto;
using ag::Matrix;
using ag::RowVector;

namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

UnitPool random_pool(int units, int d, std::uint64_t seed) {
  Rng rng(seed);
  UnitPool pool;
  pool.embeddings.resize(units, d);
  for (Eigen::Index i = 0; i < pool.embeddings.size(); ++i) pool.embeddings.data()[i] = rng.normal();
  for (int u = 0; u < units; ++u) {
    pool.labels.push_back(static_cast<int>(rng.index(2)));
    ProjectionRecord r;
    r.source_id = "u" + std::to_string(u);
    pool.provenance.push_back(r);
  }
  return pool;
}

std::vector<int> brute_force(const PrototypeBank& bank, const UnitPool& pool) {
  std::vector<int> out;
  for (int p = 0; p < bank.count(); ++p) {
    int best = -1;
    double best_d = 0.0;
    for (int u = 0; u < pool.embeddings.rows(); ++u) {
      if (pool.labels[static_cast<std::size_t>(u)] != bank.class_of[static_cast<std::size_t>(p)]) continue;
      double d = 0.0;
      for (int c = 0; c < pool.embeddings.cols(); ++c) {
        const double diff = bank.value()(p, c) - pool.embeddings(u, c);
        d += diff * diff;
      }
      if (best < 0 || d < best_d) best = u, best_d = d;
    }
    out.push_back(best);
  }
  return out;
}

void check_projection(int prototypes, int units, std::uint64_t seed) {
  ParameterStore store;
  Rng rng(seed);
  PrototypeBank bank = make_bank(Granularity::sentence, prototypes, 6, store, rng);
  const UnitPool pool = random_pool(units, 6, seed + 100);
  const std::vector<int> expect = brute_force(bank, pool);
  CHECK(nearest_same_class(bank, pool) == expect);
  CHECK(project_prototypes(bank, pool) == expect);
  CHECK(bank.projected());
  for (int p = 0; p < bank.count(); ++p) {
    const int u = expect[static_cast<std::size_t>(p)];
    CHECK(bank.value().row(p) == pool.embeddings.row(u));
    CHECK(bank.projection[static_cast<std::size_t>(p)]->source_id == "u" + std::to_string(u));
  }
  const Matrix once = bank.value();
  CHECK(project_prototypes(bank, pool) == expect);
  CHECK(bank.value() == once);
  for (const auto& rec : bank.projection) CHECK(rec->distance == 0.0);
}

}  // namespace

TEST_CASE("similarity reference values") {
  const RowVector p = row({0.3, -1.2, 2.0});
  CHECK(similarity(p, p) == doctest::Approx(std::log(1e4)).epsilon(1e-12));
  CHECK(std::abs(similarity(p, p) - 9.210340371976184) < 1e-9);
  CHECK(std::abs(similarity(row({0.0, 0.0}), row({1.0, 0.0})) - std::log(2.0 / 1.0001)) < 1e-9);
  CHECK(std::abs(similarity_from_sqdist(1.0) - 0.69305) < 1e-5);
  CHECK(similarity_from_sqdist(1e12) > 0.0);
  CHECK(similarity_from_sqdist(1e12) < 1e-11);
  CHECK_THROWS(similarity(row({1.0}), row({1.0, 2.0})));
  CHECK_THROWS(similarity(p, p, 0.0));
  CHECK_THROWS(similarity(p, p, 1.0));
}

TEST_CASE("similarity decreases strictly with distance") {
  Rng rng(42);
  std::vector<std::pair<double, double>> samples;
  for (int i = 0; i < 10000; ++i) {
    RowVector a(4), b(4);
    for (int c = 0; c < 4; ++c) a(c) = rng.normal(0, 2), b(c) = rng.normal(0, 2);
    const double d2 = (a - b).squaredNorm();
    const double s = similarity(a, b);
    CHECK(s > 0.0);
    samples.emplace_back(d2, s);
  }
  std::sort(samples.begin(), samples.end());
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].first > samples[i - 1].first) CHECK(samples[i].second < samples[i - 1].second);
}

TEST_CASE("granularity aggregation") {
  const Matrix protos = (Matrix(2, 2) << 0, 0, 1, 1).finished();
  const Matrix one = (Matrix(1, 2) << 0.5, 0).finished();
  const RowVector s1 = aggregate_scores(protos, one, 1e-4, Aggregation::mean);
  CHECK(s1(0) == doctest::Approx(similarity(protos.row(0), one.row(0))).epsilon(1e-14));

  const Matrix two = (Matrix(2, 2) << 0.5, 0, 1, 2).finished();
  const RowVector s2 = aggregate_scores(protos, two, 1e-4, Aggregation::mean);
  for (int p = 0; p < 2; ++p) {
    const double hand = 0.5 * (similarity(protos.row(p), two.row(0)) + similarity(protos.row(p), two.row(1)));
    CHECK(std::abs(s2(p) - hand) < 1e-12);
  }
  const RowVector mx = aggregate_scores(protos, two, 1e-4, Aggregation::max);
  CHECK(mx(0) == doctest::Approx(similarity(protos.row(0), two.row(0))));
  const RowVector none = aggregate_scores(protos, Matrix(0, 2), 1e-4, Aggregation::mean);
  CHECK(none.isZero());

  ag::Tape t(false);
  const auto v = aggregate_scores(t.constant(two), t.constant(protos), 1e-4, Aggregation::mean);
  CHECK((v.value() - Matrix(s2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fusion head") {
  ag::Parameter w{"w", Matrix::Zero(3, 2)}, b{"b", Matrix::Zero(1, 2)};
  ClassifierHead head{&w, &b, 0.3, 0.5};
  SimilarityVector zero{RowVector::Zero(1), RowVector::Zero(1), RowVector::Zero(1)};
  const auto half = fuse_and_classify(zero, head);
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);

  SimilarityVector sv{row({2.0}), row({4.0}), row({6.0})};
  CHECK(fuse(sv, 0.3, 0.5) == row({2.0, 1.2, 3.0}));

  // hand-set 2-prototype head: one document and one sentence prototype
  ag::Parameter w2{"w", (Matrix(2, 2) << 1.0, -1.0, 0.5, 2.0).finished()};
  ag::Parameter b2{"b", (Matrix(1, 2) << 0.1, -0.2).finished()};
  ClassifierHead toy{&w2, &b2, 0.3, 0.5};
  SimilarityVector two{row({1.5}), row({2.0}), RowVector(0)};
  // fused [1.5, 0.6]: z0 = 1.5 + 0.3 + 0.1 = 1.9, z1 = -1.5 + 1.2 - 0.2 = -0.5
  const double p1 = 1.0 / (1.0 + std::exp(1.9 - (-0.5)));
  const auto probs = fuse_and_classify(two, toy);
  CHECK(std::abs(probs[1] - p1) < 1e-9);
  CHECK(std::abs(probs[0] + probs[1] - 1.0) < 1e-15);

  head.lambda1 = head.lambda2 = 0.0;
  w.value = (Matrix(3, 2) << 1, 0, 5, -5, 3, 2).finished();
  SimilarityVector a{row({1.0}), row({0.0}), row({0.0})};
  SimilarityVector c{row({1.0}), row({9.0}), row({-4.0})};
  CHECK(fuse_and_classify(a, head) == fuse_and_classify(c, head));
  CHECK_THROWS(fuse_and_classify(SimilarityVector{row({1.0, 2.0}), row({0.0}), row({0.0})}, head));
}

TEST_CASE("projection equals exhaustive nearest same-class search") {
  check_projection(20, 200, 1);
  check_projection(4, 50, 2);
  check_projection(6, 9, 3);
}

TEST_CASE("projection edge cases") {
  ParameterStore store;
  Rng rng(1);
  PrototypeBank bank = make_bank(Granularity::document, 2, 2, store, rng);
  CHECK(bank.class_of == std::vector<int>{0, 1});
  CHECK_FALSE(bank.projected());
  UnitPool pool;
  pool.embeddings = (Matrix(3, 2) << 5, 5, 1, 2, 1, 2).finished();
  pool.labels = {0, 1, 1};
  bank.vectors->value.row(1) = row({1, 2});
  const auto assignment = project_prototypes(bank, pool);
  CHECK(assignment[1] == 1);  // lowest index among equal units
  CHECK(bank.projection[1]->distance == 0.0);
  CHECK(assignment[0] == 0);

  pool.labels = {1, 1, 1};
  CHECK_THROWS_AS(project_prototypes(bank, pool), std::runtime_error);
}
