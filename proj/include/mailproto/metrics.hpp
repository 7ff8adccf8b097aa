#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mailproto/model.hpp"

namespace mailproto {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

struct Metrics {
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<long>> confusion;  // [true][predicted]
  long total = 0;
};

// Standard definitions; a class with no predictions or no support gets precision/recall 0.
Metrics compute_metrics(std::span<const int> y_true, std::span<const int> y_pred, int num_classes = 2);
Metrics metrics_from_confusion(const std::vector<std::vector<long>>& confusion);
Metrics evaluate(const Model& model, std::span<const ModelInput> examples, int threads = 0);

nlohmann::json to_json(const Metrics& m);
// Deterministic text rendering with fixed precision.
std::string format_metrics(const Metrics& m);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int df = 0;
  std::string diagnostic;
};

// Paired two-sided t-test on a[i] - b[i] with n-1 degrees of freedom.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> xs);
// Sample standard deviation (n-1); 0 for fewer than two values.
double sample_sd(std::span<const double> xs);

}  // namespace mailproto
