#pragma once

// Email records, response labelling, corpus ingestion and balanced splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mailproto {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sole element of Email::interests when the recipient organisation is not in the enrichment table.
inline constexpr std::string_view kUnknownInterest = "<unknown>";

struct Email {
  std::string id;
  std::string subject;                                   // S
  std::string body;                                      // C
  std::optional<std::string> recipient_org;              // O
  std::optional<std::vector<std::string>> interests;     // E
  std::vector<std::string> sentences;                    // filled by prepare_email()

  bool interests_unknown() const {
    return interests && interests->size() == 1 && interests->front() == kUnknownInterest;
  }
  bool operator==(const Email&) const = default;
};

enum class SourceCorpus { enron, generic };

struct LabeledEmail {
  Email email;
  int label = 0;  // 1 = responded
  SourceCorpus source = SourceCorpus::generic;
};

// ---- raw messages -------------------------------------------------------------

// Parses an RFC-822 style message: header lines, one blank line, body.
// With headerless=true the whole text is the body.
// Throws CorpusError naming `id` when the message has no body.
Email parse_raw_email(std::string_view raw, std::string id, bool headerless = false);

struct ResponseMarkers {
  std::vector<std::string> subject_prefixes{"RE:", "FW:", "FWD:"};
  std::vector<std::string> body_lines{"-----Original Message-----", "---------------------- Forwarded by"};
};

// label = 1 iff a reply/forward marker is present. A body marker truncates the
// body to the text after the marker line; the result is always a suffix of the input body.
LabeledEmail label_enron(Email email, const ResponseMarkers& markers = {});

struct Diagnostics {
  std::vector<std::string> messages;
  void add(std::string m) { messages.push_back(std::move(m)); }
  bool empty() const { return messages.empty(); }
};

// Walks a maildir-style tree; every regular file is one message. Ids are paths relative to root.
std::vector<LabeledEmail> load_enron_maildir(const std::filesystem::path& root, Diagnostics& diagnostics,
                                             const ResponseMarkers& markers = {},
                                             std::size_t max_files = 0);

// ---- generic line-delimited corpus -------------------------------------------

// One JSON object per line: id, subject, body, recipient_org?, interests?, label.
// Invalid records are skipped with a line-numbered diagnostic; more than 10% invalid
// lines raises CorpusError.
std::vector<LabeledEmail> load_generic_corpus(const std::filesystem::path& path, Diagnostics& diagnostics);
std::vector<LabeledEmail> parse_generic_corpus(std::string_view text, Diagnostics& diagnostics);
std::string format_generic_record(const LabeledEmail& e);
void write_generic_corpus(const std::filesystem::path& path, const std::vector<LabeledEmail>& corpus);

// ---- splits --------------------------------------------------------------------

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitCorpus {
  std::vector<LabeledEmail> train;
  std::vector<LabeledEmail> val;
  std::vector<LabeledEmail> test;
  std::uint64_t seed = 0;
  SplitRatios ratios;
};

// Downsamples the majority class to the minority count, then splits each class by
// the ratios. Deterministic in (corpus order, seed, ratios).
SplitCorpus balance_and_split(const std::vector<LabeledEmail>& corpus, std::uint64_t seed, SplitRatios ratios);

struct SplitManifest {
  std::uint64_t seed = 0;
  SplitRatios ratios;
  std::array<std::vector<std::string>, 3> ids;  // train, val, test
};

SplitManifest manifest_of(const SplitCorpus& split);
std::string format_manifest(const SplitManifest& m);
SplitManifest parse_manifest(std::string_view text);
// Rebuilds the split from a corpus and a manifest; unknown ids raise CorpusError.
SplitCorpus apply_manifest(const std::vector<LabeledEmail>& corpus, const SplitManifest& m);

// ---- organisation interests ------------------------------------------------------

class EnrichmentTable {
 public:
  EnrichmentTable() = default;
  explicit EnrichmentTable(std::map<std::string, std::vector<std::string>> entries);

  static EnrichmentTable load(const std::filesystem::path& path);
  static EnrichmentTable parse(std::string_view json_text);

  void add(std::string_view org, std::vector<std::string> interests);
  // nullopt means "unknown".
  std::optional<std::vector<std::string>> lookup(std::string_view org) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

Email enrich_interests(Email email, const EnrichmentTable& table);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

}  // namespace mailproto
