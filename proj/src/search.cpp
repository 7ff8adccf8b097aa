#include "mailproto/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace mailproto {

namespace {

template <typename T>
T draw(Rng& rng, const std::vector<T>& grid) {
  return grid[rng.index(grid.size())];
}

template <typename T>
bool member(const std::vector<T>& grid, T v) {
  return std::find(grid.begin(), grid.end(), v) != grid.end();
}

template <typename T>
void read(const nlohmann::json& j, const char* key, std::vector<T>& out) {
  if (j.contains(key)) out = j.at(key).get<std::vector<T>>();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void validate(const SearchSpace& s) {
  const bool empty = s.batch_size.empty() || s.learning_rate.empty() || s.positive_class_weight.empty() ||
                     s.prototypes.empty() || s.theta.empty() || s.alpha.empty() || s.beta.empty() ||
                     s.gamma.empty() || s.delta.empty() || s.lambda1.empty() || s.lambda2.empty();
  if (empty) throw std::invalid_argument("every search grid needs at least one value");
}

nlohmann::json to_json(const SearchSpace& s) {
  return {{"batch_size", s.batch_size}, {"learning_rate", s.learning_rate},
          {"positive_class_weight", s.positive_class_weight}, {"prototypes", s.prototypes},
          {"theta", s.theta}, {"alpha", s.alpha}, {"beta", s.beta}, {"gamma", s.gamma}, {"delta", s.delta},
          {"lambda1", s.lambda1}, {"lambda2", s.lambda2}};
}

SearchSpace search_space_from_json(const nlohmann::json& j, SearchSpace s) {
  read(j, "batch_size", s.batch_size);
  read(j, "learning_rate", s.learning_rate);
  read(j, "positive_class_weight", s.positive_class_weight);
  read(j, "prototypes", s.prototypes);
  read(j, "theta", s.theta);
  read(j, "alpha", s.alpha);
  read(j, "beta", s.beta);
  read(j, "gamma", s.gamma);
  read(j, "delta", s.delta);
  read(j, "lambda1", s.lambda1);
  read(j, "lambda2", s.lambda2);
  validate(s);
  return s;
}

Hyperparams sample_hyperparams(const SearchSpace& s, Rng& rng, const Hyperparams& base) {
  Hyperparams hp = base;
  hp.batch_size = draw(rng, s.batch_size);
  hp.learning_rate = draw(rng, s.learning_rate);
  hp.positive_class_weight = draw(rng, s.positive_class_weight);
  hp.j = draw(rng, s.prototypes);
  hp.k = draw(rng, s.prototypes);
  hp.m = draw(rng, s.prototypes);
  hp.theta = draw(rng, s.theta);
  hp.alpha = draw(rng, s.alpha);
  hp.beta = draw(rng, s.beta);
  hp.gamma = draw(rng, s.gamma);
  hp.delta = draw(rng, s.delta);
  hp.lambda1 = draw(rng, s.lambda1);
  hp.lambda2 = draw(rng, s.lambda2);
  return hp;
}

bool in_space(const SearchSpace& s, const Hyperparams& hp) {
  return member(s.batch_size, hp.batch_size) && member(s.learning_rate, hp.learning_rate) &&
         member(s.positive_class_weight, hp.positive_class_weight) && member(s.prototypes, hp.j) &&
         member(s.prototypes, hp.k) && member(s.prototypes, hp.m) && member(s.theta, hp.theta) &&
         member(s.alpha, hp.alpha) && member(s.beta, hp.beta) && member(s.gamma, hp.gamma) &&
         member(s.delta, hp.delta) && member(s.lambda1, hp.lambda1) && member(s.lambda2, hp.lambda2);
}

ExperimentResult run_experiment(const ModelConfig& base, const Hyperparams& hp, const ExperimentData& data,
                                const TrainOptions& options) {
  validate(hp);
  ExperimentResult r;
  r.model = std::make_unique<Model>(apply(hp, base));
  const Dataset train_set = make_dataset(*r.model, data.train);
  const Dataset val_set = make_dataset(*r.model, data.val);
  r.history = train(*r.model, train_set, val_set, hp, options);
  if (!data.test.empty()) {
    const Dataset test_set = make_dataset(*r.model, data.test);
    r.test = evaluate(*r.model, test_set.inputs, options.threads);
  }
  return r;
}

SearchResult random_search(const SearchSpace& space, int budget, std::uint64_t seed, const Hyperparams& base,
                           const TrialFunction& score) {
  validate(space);
  if (budget < 1) throw std::invalid_argument("search budget must be at least 1");
  Rng rng(mix_seed(seed, 0x736561726368ULL));
  SearchResult result;
  for (int i = 0; i < budget; ++i) {
    Trial t;
    t.index = i;
    t.hp = sample_hyperparams(space, rng, base);
    const auto t0 = std::chrono::steady_clock::now();
    t.val_weighted_f1 = score(t.hp, i);
    t.seconds = seconds_since(t0);
    result.leaderboard.push_back(t);
  }
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(),
                   [](const Trial& a, const Trial& b) { return a.val_weighted_f1 > b.val_weighted_f1; });
  result.best = result.leaderboard.front().hp;
  return result;
}

SearchResult random_search(const SearchSpace& space, int budget, std::uint64_t seed, const Hyperparams& base,
                           const ModelConfig& model, const ExperimentData& data, const TrainOptions& options) {
  ExperimentData no_test{data.train, data.val, {}};
  return random_search(space, budget, seed, base, [&](const Hyperparams& hp, int index) {
    if (options.log) *options.log << "trial " << index << " " << to_json(hp).dump() << "\n";
    TrainOptions quiet = options;
    quiet.log = nullptr;
    const ExperimentResult r = run_experiment(model, hp, no_test, quiet);
    if (r.history.aborted) return 0.0;
    return r.history.final_val.weighted_f1;
  });
}

nlohmann::json to_json(const SearchResult& r) {
  nlohmann::json board = nlohmann::json::array();
  for (const auto& t : r.leaderboard)
    board.push_back({{"trial", t.index}, {"val_weighted_f1", t.val_weighted_f1}, {"hyperparams", to_json(t.hp)}});
  return {{"best", to_json(r.best)}, {"leaderboard", board}};
}

std::string format_leaderboard(const SearchResult& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "rank  trial  val_weighted_f1  batch  lr        w_pos  j   k   m   theta  alpha   beta    gamma   delta   l1   l2\n";
  int rank = 1;
  for (const auto& t : r.leaderboard) {
    const auto& h = t.hp;
    os << std::setw(4) << rank++ << "  " << std::setw(5) << t.index << "  " << std::setw(15) << t.val_weighted_f1
       << "  " << std::setw(5) << h.batch_size << "  " << std::scientific << std::setprecision(1) << h.learning_rate
       << std::fixed << std::setprecision(4) << "  " << std::setprecision(1) << h.positive_class_weight << "    "
       << std::setw(2) << h.j << "  " << std::setw(2) << h.k << "  " << std::setw(2) << h.m << "  "
       << h.theta << "    " << std::setprecision(3) << h.alpha << "   " << h.beta << "   " << h.gamma << "   "
       << h.delta << "   " << std::setprecision(1) << h.lambda1 << "  " << h.lambda2 << std::setprecision(4) << "\n";
  }
  return os.str();
}

// ---- ablation -----------------------------------------------------------------------------

std::vector<AblationConfig> variant_ablation(const ComponentSet& components) {
  std::vector<AblationConfig> out;
  for (ViewVariant v : {ViewVariant::text, ViewVariant::graph, ViewVariant::text_graph}) {
    for (bool protos : {true, false}) {
      out.push_back({to_string(v) + (protos ? "+prototypes" : ""), v, protos, components});
    }
  }
  return out;
}

std::vector<AblationConfig> component_ablation(std::span<const std::string> subsets, ViewVariant variant) {
  std::vector<AblationConfig> out;
  for (const auto& s : subsets) {
    const ComponentSet c = ComponentSet::parse(s);
    out.push_back({c.str(), variant, true, c});
  }
  return out;
}

const std::vector<std::string>& marketing_component_subsets() {
  static const std::vector<std::string> v{"S", "O", "C", "SO", "SC", "OC", "SOC", "SOCE"};
  return v;
}

const std::vector<std::string>& enron_component_subsets() {
  static const std::vector<std::string> v{"S", "C", "SC"};
  return v;
}

AblationReport ablation_run(std::span<const AblationConfig> configs, const ModelConfig& base, const Hyperparams& hp,
                            const ExperimentData& data, std::span<const std::uint64_t> seeds,
                            const TrainOptions& options) {
  if (configs.empty()) throw std::invalid_argument("ablation needs at least one configuration");
  if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
  if (data.test.empty()) throw std::invalid_argument("ablation needs a test split");
  AblationReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  TrainOptions quiet = options;
  quiet.log = nullptr;
  for (const auto& cfg : configs) {
    ModelConfig mc = base;
    mc.variant = cfg.variant;
    mc.use_prototypes = cfg.prototypes;
    mc.encoder.components = cfg.components;
    AblationRow row;
    row.config = cfg;
    for (std::uint64_t seed : seeds) {
      Hyperparams h = hp;
      h.seed = seed;
      const ExperimentResult r = run_experiment(mc, h, data, quiet);
      row.weighted_f1.push_back(r.test.weighted_f1);
      if (options.log)
        *options.log << cfg.name << " seed " << seed << " test_weighted_f1 " << r.test.weighted_f1 << "\n";
    }
    row.mean = mean(row.weighted_f1);
    row.sd = sample_sd(row.weighted_f1);
    if (!report.rows.empty() && seeds.size() >= 2)
      row.versus_first = paired_t_test(row.weighted_f1, report.rows.front().weighted_f1);
    report.rows.push_back(std::move(row));
  }
  return report;
}

nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j{{"name", row.config.name},
                     {"variant", to_string(row.config.variant)},
                     {"prototypes", row.config.prototypes},
                     {"components", row.config.components.str()},
                     {"weighted_f1", row.weighted_f1},
                     {"mean", row.mean},
                     {"sd", row.sd}};
    if (row.versus_first) {
      const auto& t = *row.versus_first;
      j["versus_first"] = {{"t", std::isfinite(t.t) ? nlohmann::json(t.t) : nlohmann::json(t.t > 0 ? "inf" : "-inf")},
                           {"p", t.p},
                           {"df", t.df}};
    }
    rows.push_back(std::move(j));
  }
  return {{"seeds", r.seeds}, {"rows", rows}};
}

std::string format_ablation(const AblationReport& r) {
  std::ostringstream os;
  os << "configuration               components  weighted_f1 (mean +/- sd over " << r.seeds.size()
     << " seeds)  p vs first\n";
  for (const auto& row : r.rows) {
    os << std::left << std::setw(26) << row.config.name << "  " << std::setw(10) << row.config.components.str()
       << std::right << "  " << std::fixed << std::setprecision(1) << std::setw(5) << 100.0 * row.mean << " +/- "
       << std::setw(4) << 100.0 * row.sd;
    if (row.versus_first) os << "                     " << std::setprecision(4) << row.versus_first->p;
    os << "\n";
  }
  return os.str();
}

}  // namespace mailproto
