#include "mailproto/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mailproto/parallel.hpp"

namespace mailproto {

Metrics metrics_from_confusion(const std::vector<std::vector<long>>& confusion) {
  const auto k = confusion.size();
  Metrics m;
  m.confusion = confusion;
  m.per_class.resize(k);
  long correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (confusion[c].size() != k) throw std::invalid_argument("confusion matrix must be square");
    long tp = confusion[c][c], predicted = 0, actual = 0;
    for (std::size_t o = 0; o < k; ++o) {
      predicted += confusion[o][c];
      actual += confusion[c][o];
    }
    auto& cm = m.per_class[c];
    cm.support = actual;
    cm.precision = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    cm.recall = actual > 0 ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    cm.f1 = cm.precision + cm.recall > 0.0 ? 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall) : 0.0;
    m.total += actual;
    correct += tp;
  }
  if (k > 0) {
    double macro = 0.0, weighted = 0.0;
    for (const auto& cm : m.per_class) {
      macro += cm.f1;
      weighted += cm.f1 * static_cast<double>(cm.support);
    }
    m.macro_f1 = macro / static_cast<double>(k);
    m.weighted_f1 = m.total > 0 ? weighted / static_cast<double>(m.total) : 0.0;
    m.accuracy = m.total > 0 ? static_cast<double>(correct) / static_cast<double>(m.total) : 0.0;
  }
  return m;
}

Metrics compute_metrics(std::span<const int> y_true, std::span<const int> y_pred, int num_classes) {
  if (y_true.size() != y_pred.size()) throw std::invalid_argument("label and prediction counts differ");
  const auto k = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<long>> confusion(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= num_classes || y_pred[i] < 0 || y_pred[i] >= num_classes)
      throw std::invalid_argument("label out of range");
    ++confusion[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
  }
  return metrics_from_confusion(confusion);
}

Metrics evaluate(const Model& model, std::span<const ModelInput> examples, int threads) {
  std::vector<int> truth(examples.size()), pred(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    truth[i] = examples[i].label;
    pred[i] = model.predict(examples[i]).label;
  });
  return compute_metrics(truth, pred);
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : m.per_class)
    classes.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  return {{"macro_f1", m.macro_f1}, {"weighted_f1", m.weighted_f1}, {"accuracy", m.accuracy},
          {"per_class", classes},   {"confusion", m.confusion},     {"total", m.total}};
}

std::string format_metrics(const Metrics& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "examples      " << m.total << "\n";
  os << "weighted_f1   " << m.weighted_f1 << "\n";
  os << "macro_f1      " << m.macro_f1 << "\n";
  os << "accuracy      " << m.accuracy << "\n";
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& cm = m.per_class[c];
    os << "class " << c << "       precision " << cm.precision << "  recall " << cm.recall << "  f1 " << cm.f1
       << "  support " << cm.support << "\n";
  }
  os << "confusion     [true][pred]";
  for (const auto& row : m.confusion) {
    os << " [";
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? " " : "") << row[i];
    os << "]";
  }
  os << "\n";
  return os.str();
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_sd(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  TTestResult r;
  r.df = static_cast<int>(a.size()) - 1;
  const double mu = mean(diff);
  const double sd = sample_sd(diff);
  if (sd == 0.0) {
    if (mu == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
      r.diagnostic = "all differences are zero";
    } else {
      r.t = mu > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
      r.diagnostic = "zero variance in the differences; t is infinite";
    }
    return r;
  }
  r.t = mu / (sd / std::sqrt(static_cast<double>(a.size())));
  const boost::math::students_t dist(static_cast<double>(r.df));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

}  // namespace mailproto
