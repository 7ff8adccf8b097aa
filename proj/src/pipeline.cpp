#include "mailproto/pipeline.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mailproto/checkpoint.hpp"

namespace mailproto {

std::string to_string(CorpusKind k) {
  switch (k) {
    case CorpusKind::synthetic: return "synthetic";
    case CorpusKind::generic: return "generic";
    case CorpusKind::enron: return "enron";
  }
  return "?";
}

CorpusKind parse_corpus_kind(std::string_view s) {
  if (s == "synthetic") return CorpusKind::synthetic;
  if (s == "generic") return CorpusKind::generic;
  if (s == "enron") return CorpusKind::enron;
  throw std::invalid_argument("unknown corpus kind '" + std::string(s) + "' (synthetic, generic, enron)");
}

std::filesystem::path RunConfig::checkpoint_dir() const {
  if (!checkpoint.empty()) return checkpoint;
  return std::filesystem::path(run_dir) / "checkpoint";
}

namespace {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

nlohmann::json to_json(const SyntheticConfig& s) {
  return {{"count", s.count},
          {"positive_fraction", s.positive_fraction},
          {"seed", s.seed},
          {"greeting_probability", s.greeting_probability},
          {"closing_probability", s.closing_probability},
          {"min_filler_sentences", s.min_filler_sentences},
          {"max_filler_sentences", s.max_filler_sentences}};
}

SyntheticConfig synthetic_from_json(const nlohmann::json& j, SyntheticConfig s) {
  read(j, "count", s.count);
  read(j, "positive_fraction", s.positive_fraction);
  read(j, "seed", s.seed);
  read(j, "greeting_probability", s.greeting_probability);
  read(j, "closing_probability", s.closing_probability);
  read(j, "min_filler_sentences", s.min_filler_sentences);
  read(j, "max_filler_sentences", s.max_filler_sentences);
  return s;
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.contains(it.key())) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
}

// Allowed keys are whatever the default value serialises to.
void check_keys_like(const nlohmann::json& j, const nlohmann::json& reference, const std::string& where) {
  std::set<std::string> allowed;
  for (auto it = reference.begin(); it != reference.end(); ++it) allowed.insert(it.key());
  check_keys(j, allowed, where);
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  check_keys(j,
             {"corpus", "split", "model", "hyperparams", "search", "seeds", "component_subsets", "edits", "explain",
              "threads", "run_dir", "checkpoint", "serve"},
             "run config");
  try {
    if (j.contains("corpus")) {
      const auto& cj = j.at("corpus");
      check_keys(cj, {"kind", "path", "parses", "enrichment", "max_files", "synthetic"}, "corpus");
      if (cj.contains("kind")) c.corpus.kind = parse_corpus_kind(cj.at("kind").get<std::string>());
      read(cj, "path", c.corpus.path);
      read(cj, "parses", c.corpus.parses);
      read(cj, "enrichment", c.corpus.enrichment);
      read(cj, "max_files", c.corpus.max_files);
      if (cj.contains("synthetic")) check_keys_like(cj.at("synthetic"), to_json(SyntheticConfig{}), "corpus.synthetic");
      if (cj.contains("synthetic")) c.corpus.synthetic = synthetic_from_json(cj.at("synthetic"), c.corpus.synthetic);
    }
    if (j.contains("split")) {
      const auto& sj = j.at("split");
      check_keys(sj, {"seed", "train", "val", "test", "manifest"}, "split");
      read(sj, "seed", c.split_seed);
      read(sj, "train", c.ratios.train);
      read(sj, "val", c.ratios.val);
      read(sj, "test", c.ratios.test);
      read(sj, "manifest", c.manifest);
    }
    if (j.contains("model")) {
      const auto reference = mailproto::to_json(ModelConfig{});
      check_keys_like(j.at("model"), reference, "model");
      if (j.at("model").contains("encoder")) check_keys_like(j.at("model").at("encoder"), reference.at("encoder"), "model.encoder");
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
    if (j.contains("hyperparams")) check_keys_like(j.at("hyperparams"), mailproto::to_json(Hyperparams{}), "hyperparams");
    if (j.contains("hyperparams")) c.hyperparams = hyperparams_from_json(j.at("hyperparams"), c.hyperparams);
    if (j.contains("search")) {
      const auto& sj = j.at("search");
      check_keys(sj, {"budget", "seed", "space"}, "search");
      read(sj, "budget", c.search_budget);
      read(sj, "seed", c.search_seed);
      if (sj.contains("space")) check_keys_like(sj.at("space"), to_json(SearchSpace{}), "search.space");
      if (sj.contains("space")) c.search_space = search_space_from_json(sj.at("space"), c.search_space);
    }
    read(j, "seeds", c.seeds);
    read(j, "component_subsets", c.component_subsets);
    if (j.contains("edits")) {
      const auto& ej = j.at("edits");
      check_keys(ej, {"topic_threshold", "seed", "max_donors", "greetings", "sign_offs"}, "edits");
      read(ej, "topic_threshold", c.edits.topic_threshold);
      read(ej, "seed", c.edits.seed);
      read(ej, "max_donors", c.edits.max_donors);
      read(ej, "greetings", c.edits.lexicons.greetings);
      read(ej, "sign_offs", c.edits.lexicons.sign_offs);
    }
    if (j.contains("explain")) {
      const auto& ej = j.at("explain");
      check_keys(ej, {"top_n", "ig_steps"}, "explain");
      read(ej, "top_n", c.top_n);
      read(ej, "ig_steps", c.ig_steps);
    }
    read(j, "threads", c.threads);
    read(j, "run_dir", c.run_dir);
    read(j, "checkpoint", c.checkpoint);
    if (j.contains("serve")) {
      const auto& sj = j.at("serve");
      check_keys(sj, {"host", "port"}, "serve");
      read(sj, "host", c.host);
      read(sj, "port", c.port);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("run config: ") + e.what());
  }
  validate(c.hyperparams);
  validate(c.model.encoder);
  if (c.seeds.empty()) throw std::invalid_argument("run config: seeds must not be empty");
  if (c.top_n < 1) throw std::invalid_argument("run config: explain.top_n must be at least 1");
  if (c.ig_steps < 1) throw std::invalid_argument("run config: explain.ig_steps must be at least 1");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"corpus",
           {{"kind", to_string(c.corpus.kind)},
            {"path", c.corpus.path},
            {"parses", c.corpus.parses},
            {"enrichment", c.corpus.enrichment},
            {"max_files", c.corpus.max_files},
            {"synthetic", to_json(c.corpus.synthetic)}}},
          {"split",
           {{"seed", c.split_seed},
            {"train", c.ratios.train},
            {"val", c.ratios.val},
            {"test", c.ratios.test},
            {"manifest", c.manifest}}},
          {"model", mailproto::to_json(c.model)},
          {"hyperparams", mailproto::to_json(c.hyperparams)},
          {"search", {{"budget", c.search_budget}, {"seed", c.search_seed}, {"space", to_json(c.search_space)}}},
          {"seeds", c.seeds},
          {"component_subsets", c.component_subsets},
          {"edits",
           {{"topic_threshold", c.edits.topic_threshold},
            {"seed", c.edits.seed},
            {"max_donors", c.edits.max_donors},
            {"greetings", c.edits.lexicons.greetings},
            {"sign_offs", c.edits.lexicons.sign_offs}}},
          {"explain", {{"top_n", c.top_n}, {"ig_steps", c.ig_steps}}},
          {"threads", c.threads},
          {"run_dir", c.run_dir},
          {"checkpoint", c.checkpoint},
          {"serve", {{"host", c.host}, {"port", c.port}}}};
}

CorpusBundle load_corpus(const CorpusSource& source) {
  CorpusBundle b;
  switch (source.kind) {
    case CorpusKind::synthetic: {
      SyntheticCorpus syn = generate_synthetic_corpus(source.synthetic);
      b.emails = std::move(syn.emails);
      b.parses = std::move(syn.parses);
      b.enrichment = std::move(syn.enrichment);
      break;
    }
    case CorpusKind::generic:
      if (source.path.empty()) throw CorpusError("corpus.path is required for a generic corpus");
      b.emails = load_generic_corpus(source.path, b.diagnostics);
      break;
    case CorpusKind::enron:
      if (source.path.empty()) throw CorpusError("corpus.path is required for an Enron maildir");
      b.emails = load_enron_maildir(source.path, b.diagnostics, {}, source.max_files);
      break;
  }
  if (!source.parses.empty()) {
    std::set<std::string> ids;
    for (const auto& e : b.emails) ids.insert(e.email.id);
    ParseIndex loaded = load_parses(source.parses, b.diagnostics, &ids);
    for (auto& [key, graph] : loaded) b.parses.insert_or_assign(key, std::move(graph));
  }
  if (!source.enrichment.empty()) {
    b.enrichment = EnrichmentTable::load(source.enrichment);
    for (auto& e : b.emails)
      if (!e.email.interests) e.email = enrich_interests(std::move(e.email), b.enrichment);
  }
  return b;
}

SplitCorpus make_split(const RunConfig& config, const std::vector<LabeledEmail>& emails) {
  if (!config.manifest.empty()) return apply_manifest(emails, parse_manifest(read_text_file(config.manifest)));
  return balance_and_split(emails, config.split_seed, config.ratios);
}

std::vector<PreparedEmail> prepare_all(const std::vector<LabeledEmail>& emails, const ParseIndex& parses) {
  std::vector<PreparedEmail> out;
  out.reserve(emails.size());
  for (const auto& e : emails) out.push_back(prepare_email(e, &parses));
  return out;
}

ExperimentData prepare_split(const SplitCorpus& split, const ParseIndex& parses) {
  return {prepare_all(split.train, parses), prepare_all(split.val, parses), prepare_all(split.test, parses)};
}

nlohmann::json to_json(const EnrichmentTable& table) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [org, interests] : table.entries()) j[org] = interests;
  return j;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mailproto
