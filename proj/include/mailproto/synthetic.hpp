#pragma once

// Planted-trigger marketing corpus. Every email carries exactly one trigger noun
// phrase in its main content and the label is caused by which trigger set it came
// from, so both learnability and the effect of edits have a ground truth. Emails
// are generated from dependency templates, so gold parses come for free.

#include <cstdint>
#include <string>
#include <vector>

#include "mailproto/corpus.hpp"
#include "mailproto/dependency.hpp"

namespace mailproto {

struct SyntheticConfig {
  std::size_t count = 2000;
  double positive_fraction = 0.5;
  std::uint64_t seed = 1;
  double greeting_probability = 0.7;
  double closing_probability = 0.7;
  int min_filler_sentences = 1;
  int max_filler_sentences = 3;
};

struct SyntheticCorpus {
  std::vector<LabeledEmail> emails;
  ParseIndex parses;
  EnrichmentTable enrichment;
  std::size_t positives = 0;
};

// Surface forms of the planted trigger phrases, e.g. "your free pass".
const std::vector<std::string>& positive_trigger_phrases();
const std::vector<std::string>& negative_trigger_phrases();

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config);

}  // namespace mailproto
