#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "mailproto/losses.hpp"
#include "mailproto/metrics.hpp"
#include "mailproto/model.hpp"

namespace mailproto {

struct Hyperparams {
  int batch_size = 32;
  double learning_rate = 2e-3;
  double positive_class_weight = 0.5;
  int j = 20;
  int k = 20;
  int m = 20;
  double theta = 0.3;
  double alpha = 0.01;
  double beta = 0.01;
  double gamma = 0.01;
  double delta = 0.001;
  double lambda1 = 0.3;
  double lambda2 = 0.5;
  double weight_decay = 0.1;
  int epochs = 30;
  std::uint64_t seed = 1;
  int projection_every = 5;
  int patience = 5;
  double sep_margin = 0.0;
};

void validate(const Hyperparams& hp);
LossWeights loss_weights(const Hyperparams& hp);
// Copies prototype counts, fusion weights and the seed into a model configuration.
ModelConfig apply(const Hyperparams& hp, ModelConfig base);
nlohmann::json to_json(const Hyperparams& hp);
Hyperparams hyperparams_from_json(const nlohmann::json& j, Hyperparams base = {});

// Decoupled weight decay; parameters flagged no_decay are only moved by the adaptive step.
class AdamW {
 public:
  AdamW(std::vector<ag::Parameter*> params, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  void step(const std::vector<ag::Matrix>& grads);
  long steps() const { return t_; }

 private:
  std::vector<ag::Parameter*> params_;
  std::vector<ag::Matrix> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
};

struct Dataset {
  std::vector<PreparedEmail> emails;
  std::vector<ModelInput> inputs;
};
Dataset make_dataset(const Model& model, std::vector<PreparedEmail> emails);

// Training-unit embeddings with provenance, one pool per granularity.
std::array<UnitPool, 3> build_unit_pools(const Model& model, const Dataset& data, int threads = 0);
// Each prototype starts at a distinct randomly drawn same-class unit where possible.
void initialize_prototypes(Model& model, const Dataset& data, std::uint64_t seed, int threads = 0);
void project_model(Model& model, const Dataset& data, int threads = 0);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train_loss;  // mean over batches
  double val_weighted_f1 = 0.0;  // with prototypes projected
  double val_macro_f1 = 0.0;
  bool projected = false;  // a scheduled projection that training continued from
  double seconds = 0.0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  std::vector<int> projection_epochs;  // scheduled ones, then the retained epoch if unscheduled
  int best_epoch = 0;
  double best_val_weighted_f1 = 0.0;
  Metrics final_val;  // after restoring the best epoch and the final projection
  bool aborted = false;
  std::string abort_reason;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const RunHistory& h, bool include_timing = true);

struct TrainOptions {
  int threads = 0;
  std::ostream* log = nullptr;
};

// Zero epochs returns the model untouched with an empty history.
RunHistory train(Model& model, const Dataset& train, const Dataset& val, const Hyperparams& hp,
                 const TrainOptions& options = {});

}  // namespace mailproto
