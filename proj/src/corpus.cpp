#include "mailproto/corpus.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mailproto/random.hpp"

namespace mailproto {

using nlohmann::json;

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

bool istarts_with(std::string_view text, std::string_view prefix) {
  if (text.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(text[i])) != std::tolower(static_cast<unsigned char>(prefix[i])))
      return false;
  }
  return true;
}

std::optional<std::string> domain_of_first_address(std::string_view to) {
  // "Jane <jane@enron.com>, bob@x.com" -> enron.com
  const std::size_t comma = to.find(',');
  std::string_view first = to.substr(0, comma);
  const std::size_t at = first.find('@');
  if (at == std::string_view::npos) return std::nullopt;
  std::size_t end = at + 1;
  while (end < first.size() && !std::isspace(static_cast<unsigned char>(first[end])) && first[end] != '>' &&
         first[end] != '"' && first[end] != ';')
    ++end;
  std::string domain = to_lower(first.substr(at + 1, end - at - 1));
  if (domain.empty()) return std::nullopt;
  return domain;
}

}  // namespace

Email parse_raw_email(std::string_view raw, std::string id, bool headerless) {
  Email email;
  email.id = std::move(id);
  if (headerless) {
    email.body = std::string(raw);
    if (blank(email.body)) throw CorpusError("email " + email.id + ": empty body");
    return email;
  }

  std::map<std::string, std::string> headers;
  std::string last_key;
  std::size_t pos = 0;
  bool found_separator = false;
  while (pos < raw.size()) {
    const std::size_t nl = raw.find('\n', pos);
    const std::size_t line_end = nl == std::string_view::npos ? raw.size() : nl;
    const std::string_view line = strip_cr(raw.substr(pos, line_end - pos));
    pos = nl == std::string_view::npos ? raw.size() : nl + 1;
    if (line.empty()) {
      found_separator = true;
      break;
    }
    if ((line.front() == ' ' || line.front() == '\t') && !last_key.empty()) {
      headers[last_key] += " " + trim(line);
      continue;
    }
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos || colon == 0) {
      throw CorpusError("email " + email.id + ": malformed header line '" + std::string(line) + "'");
    }
    last_key = to_lower(trim(line.substr(0, colon)));
    // First occurrence wins (e.g. repeated X- headers).
    headers.try_emplace(last_key, trim(line.substr(colon + 1)));
  }
  if (!found_separator) throw CorpusError("email " + email.id + ": no blank line separating headers from body");

  email.body = std::string(raw.substr(pos));
  if (blank(email.body)) throw CorpusError("email " + email.id + ": empty body");
  if (auto it = headers.find("subject"); it != headers.end()) email.subject = it->second;
  if (auto it = headers.find("to"); it != headers.end()) email.recipient_org = domain_of_first_address(it->second);
  return email;
}

LabeledEmail label_enron(Email email, const ResponseMarkers& markers) {
  LabeledEmail out;
  out.source = SourceCorpus::enron;

  const std::string subject = trim(email.subject);
  for (const auto& prefix : markers.subject_prefixes) {
    if (istarts_with(subject, prefix)) out.label = 1;
  }

  // Earliest body marker line.
  std::size_t best_line_start = std::string::npos;
  std::size_t best_next = std::string::npos;
  std::size_t pos = 0;
  const std::string& body = email.body;
  while (pos < body.size() && best_line_start == std::string::npos) {
    const std::size_t nl = body.find('\n', pos);
    const std::size_t line_end = nl == std::string::npos ? body.size() : nl;
    const std::string line = trim(std::string_view(body).substr(pos, line_end - pos));
    for (const auto& marker : markers.body_lines) {
      if (!marker.empty() && line.rfind(marker, 0) == 0) {
        best_line_start = pos;
        best_next = nl == std::string::npos ? body.size() : nl + 1;
        break;
      }
    }
    pos = nl == std::string::npos ? body.size() : nl + 1;
  }
  if (best_line_start != std::string::npos) {
    out.label = 1;
    std::string suffix = body.substr(best_next);
    if (!blank(suffix)) email.body = std::move(suffix);
  }
  out.email = std::move(email);
  return out;
}

std::vector<LabeledEmail> load_enron_maildir(const std::filesystem::path& root, Diagnostics& diagnostics,
                                             const ResponseMarkers& markers, std::size_t max_files) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw CorpusError("maildir root not found: " + root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LabeledEmail> out;
  for (const auto& file : files) {
    if (max_files && out.size() >= max_files) break;
    std::ifstream in(file, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      out.push_back(label_enron(parse_raw_email(buf.str(), fs::relative(file, root).generic_string()), markers));
    } catch (const CorpusError& e) {
      diagnostics.add(e.what());
    }
  }
  return out;
}

namespace {

std::optional<LabeledEmail> record_from_json(const json& j, std::string& why) {
  if (!j.is_object()) {
    why = "record is not an object";
    return std::nullopt;
  }
  auto str_field = [&](const char* key, bool required) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
      if (required) why = std::string("missing field '") + key + "'";
      return std::nullopt;
    }
    if (!it->is_string()) {
      why = std::string("field '") + key + "' is not a string";
      return std::nullopt;
    }
    return it->get<std::string>();
  };
  LabeledEmail rec;
  auto id = str_field("id", true);
  if (!id) return std::nullopt;
  if (id->empty()) {
    why = "empty id";
    return std::nullopt;
  }
  rec.email.id = *id;
  rec.email.subject = str_field("subject", false).value_or("");
  if (!why.empty()) return std::nullopt;
  auto body = str_field("body", true);
  if (!body) return std::nullopt;
  if (blank(*body)) {
    why = "empty body";
    return std::nullopt;
  }
  rec.email.body = *body;
  rec.email.recipient_org = str_field("recipient_org", false);
  if (!why.empty()) return std::nullopt;
  if (rec.email.recipient_org) rec.email.recipient_org = to_lower(trim(*rec.email.recipient_org));
  if (auto it = j.find("interests"); it != j.end() && !it->is_null()) {
    if (it->is_string() && it->get<std::string>() == "unknown") {
      rec.email.interests = std::vector<std::string>{std::string(kUnknownInterest)};
    } else if (it->is_array() && std::all_of(it->begin(), it->end(), [](const json& x) { return x.is_string(); })) {
      rec.email.interests = it->get<std::vector<std::string>>();
    } else {
      why = "field 'interests' must be a list of strings or \"unknown\"";
      return std::nullopt;
    }
  }
  auto lab = j.find("label");
  if (lab == j.end() || !lab->is_number_integer() || (lab->get<int>() != 0 && lab->get<int>() != 1)) {
    why = "label must be 0 or 1";
    return std::nullopt;
  }
  rec.label = lab->get<int>();
  rec.source = SourceCorpus::generic;
  return rec;
}

}  // namespace

std::vector<LabeledEmail> parse_generic_corpus(std::string_view text, Diagnostics& diagnostics) {
  std::vector<LabeledEmail> out;
  std::set<std::string> seen;
  std::size_t lines = 0, invalid = 0, line_no = 0, pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    const std::string_view line = strip_cr(text.substr(pos, end - pos));
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (blank(line)) continue;
    ++lines;
    std::string why;
    std::optional<LabeledEmail> rec;
    try {
      rec = record_from_json(json::parse(line), why);
    } catch (const json::parse_error& e) {
      why = std::string("not valid JSON: ") + e.what();
    }
    if (rec && !seen.insert(rec->email.id).second) {
      why = "duplicate id '" + rec->email.id + "'";
      rec.reset();
    }
    if (!rec) {
      ++invalid;
      diagnostics.add("line " + std::to_string(line_no) + ": " + why);
      continue;
    }
    out.push_back(std::move(*rec));
  }
  if (lines > 0 && static_cast<double>(invalid) > 0.1 * static_cast<double>(lines)) {
    throw CorpusError("corpus rejected: " + std::to_string(invalid) + " of " + std::to_string(lines) +
                      " lines invalid (more than 10%)");
  }
  return out;
}

std::vector<LabeledEmail> load_generic_corpus(const std::filesystem::path& path, Diagnostics& diagnostics) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_generic_corpus(buf.str(), diagnostics);
}

std::string format_generic_record(const LabeledEmail& e) {
  json j;
  j["id"] = e.email.id;
  j["subject"] = e.email.subject;
  j["body"] = e.email.body;
  j["recipient_org"] = e.email.recipient_org ? json(*e.email.recipient_org) : json(nullptr);
  if (e.email.interests_unknown()) {
    j["interests"] = "unknown";
  } else {
    j["interests"] = e.email.interests ? json(*e.email.interests) : json(nullptr);
  }
  j["label"] = e.label;
  return j.dump();
}

void write_generic_corpus(const std::filesystem::path& path, const std::vector<LabeledEmail>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write corpus file " + path.string());
  for (const auto& e : corpus) out << format_generic_record(e) << '\n';
}

SplitCorpus balance_and_split(const std::vector<LabeledEmail>& corpus, std::uint64_t seed, SplitRatios ratios) {
  const double total = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw CorpusError("split ratios must be nonnegative and sum to 1");
  }
  std::array<std::vector<const LabeledEmail*>, 2> by_class;
  std::set<std::string> ids;
  for (const auto& e : corpus) {
    if (!ids.insert(e.email.id).second) throw CorpusError("duplicate email id '" + e.email.id + "'");
    by_class[static_cast<std::size_t>(e.label)].push_back(&e);
  }
  if (by_class[0].size() < 2 || by_class[1].size() < 2) {
    throw CorpusError("balance_and_split needs at least 2 examples of each class");
  }
  const std::size_t m = std::min(by_class[0].size(), by_class[1].size());
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(m) * ratios.val));
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(m) * ratios.test));
  if (n_val + n_test > m) throw CorpusError("split ratios leave no training examples");
  const std::size_t n_train = m - n_val - n_test;
  if (n_train == 0 || n_val == 0 || n_test == 0) {
    throw CorpusError("a split would receive zero examples of a class (minority count " + std::to_string(m) + ")");
  }

  Rng rng(seed);
  SplitCorpus split;
  split.seed = seed;
  split.ratios = ratios;
  for (auto& members : by_class) {
    rng.shuffle(members);
    members.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.val : split.test);
      dst.push_back(*members[i]);
    }
  }
  rng.shuffle(split.train);
  rng.shuffle(split.val);
  rng.shuffle(split.test);
  return split;
}

SplitManifest manifest_of(const SplitCorpus& split) {
  SplitManifest m;
  m.seed = split.seed;
  m.ratios = split.ratios;
  const std::array<const std::vector<LabeledEmail>*, 3> parts{&split.train, &split.val, &split.test};
  for (std::size_t i = 0; i < 3; ++i) {
    for (const auto& e : *parts[i]) m.ids[i].push_back(e.email.id);
  }
  return m;
}

std::string format_manifest(const SplitManifest& m) {
  json j;
  j["seed"] = m.seed;
  j["ratios"] = {{"train", m.ratios.train}, {"val", m.ratios.val}, {"test", m.ratios.test}};
  j["train"] = m.ids[0];
  j["val"] = m.ids[1];
  j["test"] = m.ids[2];
  return j.dump(2) + "\n";
}

SplitManifest parse_manifest(std::string_view text) {
  SplitManifest m;
  try {
    const json j = json::parse(text);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.ratios = {j.at("ratios").at("train").get<double>(), j.at("ratios").at("val").get<double>(),
                j.at("ratios").at("test").get<double>()};
    m.ids[0] = j.at("train").get<std::vector<std::string>>();
    m.ids[1] = j.at("val").get<std::vector<std::string>>();
    m.ids[2] = j.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw CorpusError(std::string("malformed split manifest: ") + e.what());
  }
  return m;
}

SplitCorpus apply_manifest(const std::vector<LabeledEmail>& corpus, const SplitManifest& m) {
  std::map<std::string, const LabeledEmail*> index;
  for (const auto& e : corpus) index.emplace(e.email.id, &e);
  SplitCorpus split;
  split.seed = m.seed;
  split.ratios = m.ratios;
  std::array<std::vector<LabeledEmail>*, 3> parts{&split.train, &split.val, &split.test};
  for (std::size_t i = 0; i < 3; ++i) {
    for (const auto& id : m.ids[i]) {
      auto it = index.find(id);
      if (it == index.end()) throw CorpusError("manifest references unknown email id '" + id + "'");
      parts[i]->push_back(*it->second);
    }
  }
  return split;
}

EnrichmentTable::EnrichmentTable(std::map<std::string, std::vector<std::string>> entries) {
  for (auto& [org, interests] : entries) add(org, std::move(interests));
}

EnrichmentTable EnrichmentTable::parse(std::string_view json_text) {
  EnrichmentTable table;
  try {
    const json j = json::parse(json_text);
    for (auto it = j.begin(); it != j.end(); ++it) table.add(it.key(), it.value().get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw CorpusError(std::string("malformed enrichment table: ") + e.what());
  }
  return table;
}

EnrichmentTable EnrichmentTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open enrichment table " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void EnrichmentTable::add(std::string_view org, std::vector<std::string> interests) {
  entries_[to_lower(trim(org))] = std::move(interests);
}

std::optional<std::vector<std::string>> EnrichmentTable::lookup(std::string_view org) const {
  auto it = entries_.find(to_lower(trim(org)));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

Email enrich_interests(Email email, const EnrichmentTable& table) {
  if (!email.recipient_org) return email;
  if (auto found = table.lookup(*email.recipient_org)) {
    email.interests = std::move(*found);
  } else {
    email.interests = std::vector<std::string>{std::string(kUnknownInterest)};
  }
  return email;
}

}  // namespace mailproto
