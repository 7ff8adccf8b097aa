#pragma once

// Random hyperparameter search over discrete grids and the variant / input-component
// ablation harness. Both train full models through train().

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mailproto/metrics.hpp"
#include "mailproto/trainer.hpp"

namespace mailproto {

struct SearchSpace {
  std::vector<int> batch_size{16, 32, 64, 128};
  std::vector<double> learning_rate{1e-5, 2e-5, 5e-5};
  std::vector<double> positive_class_weight{0.2, 0.3, 0.4, 0.5};
  std::vector<int> prototypes{6, 10, 20, 30, 40, 50};  // j, k and m are drawn independently
  std::vector<double> theta{0.2, 0.3, 0.4};
  std::vector<double> alpha{0.001, 0.005, 0.01, 0.015, 0.02};
  std::vector<double> beta{0.005, 0.01, 0.02, 0.05, 0.1};
  std::vector<double> gamma{0.001, 0.005, 0.01, 0.015, 0.02};
  std::vector<double> delta{0.001, 0.005, 0.01, 0.015, 0.02};
  std::vector<double> lambda1{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> lambda2{0.1, 0.3, 0.5, 0.7, 0.9};
};

// Throws std::invalid_argument when a grid is empty.
void validate(const SearchSpace& space);
nlohmann::json to_json(const SearchSpace& space);
// Missing keys keep the defaults.
SearchSpace search_space_from_json(const nlohmann::json& j, SearchSpace base = {});

// Searched fields are drawn uniformly from their grids; the rest come from base.
Hyperparams sample_hyperparams(const SearchSpace& space, Rng& rng, const Hyperparams& base);
bool in_space(const SearchSpace& space, const Hyperparams& hp);

// Prepared emails of a fixed split; featurised per trial because the model owns the vocabulary.
struct ExperimentData {
  std::vector<PreparedEmail> train;
  std::vector<PreparedEmail> val;
  std::vector<PreparedEmail> test;
};

struct ExperimentResult {
  RunHistory history;
  Metrics test;
  std::unique_ptr<Model> model;
};

ExperimentResult run_experiment(const ModelConfig& base, const Hyperparams& hp, const ExperimentData& data,
                                const TrainOptions& options = {});

struct Trial {
  int index = 0;  // order of sampling
  Hyperparams hp;
  double val_weighted_f1 = 0.0;
  double seconds = 0.0;
};

struct SearchResult {
  std::vector<Trial> leaderboard;  // best first; ties keep sampling order
  Hyperparams best;
};

// Scores one sampled configuration; higher is better.
using TrialFunction = std::function<double(const Hyperparams& hp, int index)>;

SearchResult random_search(const SearchSpace& space, int budget, std::uint64_t seed, const Hyperparams& base,
                           const TrialFunction& score);
// Scores by the restored model's validation weighted F1 after the final projection.
SearchResult random_search(const SearchSpace& space, int budget, std::uint64_t seed, const Hyperparams& base,
                           const ModelConfig& model, const ExperimentData& data, const TrainOptions& options = {});

nlohmann::json to_json(const SearchResult& r);
std::string format_leaderboard(const SearchResult& r);

struct AblationConfig {
  std::string name;
  ViewVariant variant = ViewVariant::text_graph;
  bool prototypes = true;
  ComponentSet components;
};

// text, graph, text+graph, each with and without prototypes.
std::vector<AblationConfig> variant_ablation(const ComponentSet& components = {});
// One text+graph prototype model per letter string, e.g. {"S", "C", "SC"}.
std::vector<AblationConfig> component_ablation(std::span<const std::string> subsets,
                                               ViewVariant variant = ViewVariant::text_graph);
const std::vector<std::string>& marketing_component_subsets();  // S O C SO SC OC SOC SOCE
const std::vector<std::string>& enron_component_subsets();      // S C SC

struct AblationRow {
  AblationConfig config;
  std::vector<double> weighted_f1;  // test split, one per seed
  double mean = 0.0;
  double sd = 0.0;
  std::optional<TTestResult> versus_first;  // paired over seeds against row 0
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
};

// Every configuration is trained once per seed on the same split.
AblationReport ablation_run(std::span<const AblationConfig> configs, const ModelConfig& base, const Hyperparams& hp,
                            const ExperimentData& data, std::span<const std::uint64_t> seeds,
                            const TrainOptions& options = {});

nlohmann::json to_json(const AblationReport& r);
std::string format_ablation(const AblationReport& r);

}  // namespace mailproto
