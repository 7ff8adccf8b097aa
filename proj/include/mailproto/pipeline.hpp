#pragma once

// Run configuration (one JSON file shared by every CLI command) and the corpus ->
// split -> prepared-email plumbing.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mailproto/corpus.hpp"
#include "mailproto/dependency.hpp"
#include "mailproto/edits.hpp"
#include "mailproto/search.hpp"
#include "mailproto/synthetic.hpp"

namespace mailproto {

enum class CorpusKind { synthetic, generic, enron };
std::string to_string(CorpusKind k);
CorpusKind parse_corpus_kind(std::string_view s);

struct CorpusSource {
  CorpusKind kind = CorpusKind::synthetic;
  std::string path;        // generic line file or maildir root
  std::string parses;      // CoNLL-U file, optional
  std::string enrichment;  // organisation -> interests table, optional
  std::size_t max_files = 0;
  SyntheticConfig synthetic;
};

struct RunConfig {
  CorpusSource corpus;
  std::uint64_t split_seed = 1;
  SplitRatios ratios;
  std::string manifest;  // reuse a stored split instead of drawing one
  ModelConfig model;
  Hyperparams hyperparams;
  SearchSpace search_space;
  int search_budget = 10;
  std::uint64_t search_seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::string> component_subsets = marketing_component_subsets();
  EditOptions edits;
  int top_n = 3;
  int ig_steps = 50;
  int threads = 0;
  std::string run_dir = "runs/default";
  std::string checkpoint;  // defaults to <run_dir>/checkpoint
  std::string host = "127.0.0.1";
  int port = 8080;

  std::filesystem::path checkpoint_dir() const;
};

// Missing keys keep the defaults; unknown top-level keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

struct CorpusBundle {
  std::vector<LabeledEmail> emails;
  ParseIndex parses;
  EnrichmentTable enrichment;
  Diagnostics diagnostics;
};

// Emails without interests are enriched from the table when one is configured.
CorpusBundle load_corpus(const CorpusSource& source);

SplitCorpus make_split(const RunConfig& config, const std::vector<LabeledEmail>& emails);
std::vector<PreparedEmail> prepare_all(const std::vector<LabeledEmail>& emails, const ParseIndex& parses);
ExperimentData prepare_split(const SplitCorpus& split, const ParseIndex& parses);

nlohmann::json to_json(const EnrichmentTable& table);

std::string read_text_file(const std::filesystem::path& path);
// Writes through a temporary file and renames, creating parent directories.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace mailproto
