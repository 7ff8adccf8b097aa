#include "mailproto/synthetic.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "mailproto/random.hpp"

namespace mailproto {

namespace {

struct Word {
  const char* form;
  const char* upos;
  const char* rel;  // relation to the phrase head; ignored for the head itself
};

// Noun phrase: modifiers in order, head noun last.
using NounPhrase = std::vector<Word>;

const std::vector<NounPhrase>& positive_nps() {
  static const std::vector<NounPhrase> v{
      {{"your", "DET", "det"}, {"free", "ADJ", "amod"}, {"pass", "NOUN", ""}},
      {{"an", "DET", "det"}, {"exclusive", "ADJ", "amod"}, {"invitation", "NOUN", ""}},
      {{"a", "DET", "det"}, {"personal", "ADJ", "amod"}, {"demo", "NOUN", ""}},
      {{"the", "DET", "det"}, {"bonus", "NOUN", "compound"}, {"voucher", "NOUN", ""}},
      {{"your", "DET", "det"}, {"complimentary", "ADJ", "amod"}, {"ticket", "NOUN", ""}},
  };
  return v;
}

const std::vector<NounPhrase>& negative_nps() {
  static const std::vector<NounPhrase> v{
      {{"this", "DET", "det"}, {"mandatory", "ADJ", "amod"}, {"notice", "NOUN", ""}},
      {{"the", "DET", "det"}, {"overdue", "ADJ", "amod"}, {"invoice", "NOUN", ""}},
      {{"an", "DET", "det"}, {"automated", "ADJ", "amod"}, {"reminder", "NOUN", ""}},
      {{"the", "DET", "det"}, {"policy", "NOUN", "compound"}, {"update", "NOUN", ""}},
      {{"a", "DET", "det"}, {"service", "NOUN", "compound"}, {"outage", "NOUN", ""}},
  };
  return v;
}

const std::vector<NounPhrase>& filler_nps() {
  static const std::vector<NounPhrase> v{
      {{"the", "DET", "det"}, {"quarterly", "ADJ", "amod"}, {"report", "NOUN", ""}},
      {{"our", "DET", "det"}, {"new", "ADJ", "amod"}, {"office", "NOUN", ""}},
      {{"the", "DET", "det"}, {"team", "NOUN", "compound"}, {"meeting", "NOUN", ""}},
      {{"the", "DET", "det"}, {"project", "NOUN", "compound"}, {"schedule", "NOUN", ""}},
      {{"the", "DET", "det"}, {"shared", "ADJ", "amod"}, {"calendar", "NOUN", ""}},
      {{"the", "DET", "det"}, {"budget", "NOUN", "compound"}, {"draft", "NOUN", ""}},
      {{"our", "DET", "det"}, {"travel", "NOUN", "compound"}, {"plans", "NOUN", ""}},
      {{"the", "DET", "det"}, {"final", "ADJ", "amod"}, {"slides", "NOUN", ""}},
      {{"the", "DET", "det"}, {"client", "NOUN", "compound"}, {"list", "NOUN", ""}},
      {{"the", "DET", "det"}, {"training", "NOUN", "compound"}, {"session", "NOUN", ""}},
  };
  return v;
}

std::string np_text(const NounPhrase& np) {
  std::string s;
  for (const auto& w : np) {
    if (!s.empty()) s += ' ';
    s += w.form;
  }
  return s;
}

constexpr std::array kVerbs{"review", "check", "see", "read", "claim", "share", "open", "confirm"};
constexpr std::array kPastVerbs{"arrived", "changed", "moved", "started", "returned", "improved"};
constexpr std::array kAdverbs{"today", "now", "soon", "again", "tomorrow", "carefully"};
constexpr std::array kPredicates{"ready", "available", "attached", "final", "online"};
constexpr std::array kNames{"Ann", "Phil", "John", "Maria", "Priya", "Tom", "Lena", "Omar", "Kate", "Ravi"};
constexpr std::array kSubjects{"Quick question", "Update for next week", "Following up", "Meeting notes",
                               "Friday plans", "Checking in", "Project status", "A note for you",
                               "Plans", "Hello"};
constexpr std::array kOrgs{"acme.com", "globex.com", "initech.com", "umbrella.org",
                           "hooli.io", "stark.net", "wayne.co", "wonka.biz"};

template <typename T, std::size_t N>
const T& pick(Rng& rng, const std::array<T, N>& items) {
  return items[rng.index(N)];
}

const NounPhrase& pick(Rng& rng, const std::vector<NounPhrase>& items) { return items[rng.index(items.size())]; }

class SentenceBuilder {
 public:
  int add(std::string form, std::string upos, int head, std::string rel) {
    tokens_.push_back(DepToken{std::move(form), std::move(upos), head, std::move(rel)});
    return static_cast<int>(tokens_.size()) - 1;
  }
  // Adds the phrase with its head attached to `governor`; returns the head index.
  int add_np(const NounPhrase& np, int governor, const std::string& rel) {
    const int first = static_cast<int>(tokens_.size());
    const int head = first + static_cast<int>(np.size()) - 1;
    for (std::size_t i = 0; i + 1 < np.size(); ++i) add(np[i].form, np[i].upos, head, np[i].rel);
    add(np.back().form, np.back().upos, governor, rel);
    return head;
  }
  void set_head(int i, int head, std::string rel) {
    tokens_[static_cast<std::size_t>(i)].head = head;
    tokens_[static_cast<std::size_t>(i)].deprel = std::move(rel);
  }
  std::vector<DepToken>& tokens() { return tokens_; }

 private:
  std::vector<DepToken> tokens_;
};

std::string capitalise(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

// Verb-object, we-verb-object, subject-verb-adverb or copular template around `np`.
std::vector<DepToken> clause_with(Rng& rng, const NounPhrase& np) {
  SentenceBuilder b;
  switch (rng.index(4)) {
    case 0: {  // Please review the report today .
      const bool please = rng.bernoulli(0.5);
      int please_at = -1;
      if (please) please_at = b.add("Please", "INTJ", -1, "discourse");
      const int verb = b.add(pick(rng, kVerbs), "VERB", -1, "root");
      if (please) b.set_head(please_at, verb, "discourse");
      b.add_np(np, verb, "dobj");
      if (rng.bernoulli(0.5)) b.add(pick(rng, kAdverbs), "ADV", verb, "advmod");
      b.add(".", "PUNCT", verb, "punct");
      break;
    }
    case 1: {  // We share the report now .
      const int we = b.add("We", "PRON", -1, "nsubj");
      const int verb = b.add(pick(rng, kVerbs), "VERB", -1, "root");
      b.set_head(we, verb, "nsubj");
      b.add_np(np, verb, "dobj");
      if (rng.bernoulli(0.5)) b.add(pick(rng, kAdverbs), "ADV", verb, "advmod");
      b.add(".", "PUNCT", verb, "punct");
      break;
    }
    case 2: {  // The report arrived today .
      const int head = b.add_np(np, -1, "nsubj");
      const int verb = b.add(pick(rng, kPastVerbs), "VERB", -1, "root");
      b.set_head(head, verb, "nsubj");
      b.add(pick(rng, kAdverbs), "ADV", verb, "advmod");
      b.add(".", "PUNCT", verb, "punct");
      b.tokens()[0].form = capitalise(b.tokens()[0].form);
      break;
    }
    default: {  // The report is ready .
      const int head = b.add_np(np, -1, "nsubj");
      b.add("is", "AUX", -1, "cop");
      const int adj = b.add(pick(rng, kPredicates), "ADJ", -1, "root");
      b.set_head(head, adj, "nsubj");
      b.set_head(head + 1, adj, "cop");
      b.add(".", "PUNCT", adj, "punct");
      b.tokens()[0].form = capitalise(b.tokens()[0].form);
      break;
    }
  }
  return std::move(b.tokens());
}

std::vector<DepToken> greeting(Rng& rng) {
  SentenceBuilder b;
  const std::string name = pick(rng, kNames);
  switch (rng.index(4)) {
    case 0: {
      const int hi = b.add("Hi", "INTJ", -1, "root");
      b.add(name, "PROPN", hi, "vocative");
      b.add(",", "PUNCT", hi, "punct");
      break;
    }
    case 1: {
      const int hi = b.add("Hello", "INTJ", -1, "root");
      b.add(name, "PROPN", hi, "vocative");
      b.add(".", "PUNCT", hi, "punct");
      break;
    }
    case 2: {
      b.add("Dear", "ADJ", 1, "amod");
      const int n = b.add(name, "PROPN", -1, "root");
      b.add(",", "PUNCT", n, "punct");
      break;
    }
    default: {  // I hope you are doing well .
      b.add("I", "PRON", 1, "nsubj");
      const int hope = b.add("hope", "VERB", -1, "root");
      b.add("you", "PRON", 4, "nsubj");
      b.add("are", "AUX", 4, "aux");
      b.add("doing", "VERB", hope, "ccomp");
      b.add("well", "ADV", 4, "advmod");
      b.add(".", "PUNCT", hope, "punct");
      break;
    }
  }
  return std::move(b.tokens());
}

std::vector<DepToken> closing(Rng& rng) {
  SentenceBuilder b;
  switch (rng.index(4)) {
    case 0: {
      b.add("Best", "ADJ", 1, "amod");
      const int r = b.add("regards", "NOUN", -1, "root");
      b.add(".", "PUNCT", r, "punct");
      break;
    }
    case 1: {
      b.add("Kind", "ADJ", 1, "amod");
      const int r = b.add("regards", "NOUN", -1, "root");
      b.add(".", "PUNCT", r, "punct");
      break;
    }
    case 2: {
      const int t = b.add("Thanks", "NOUN", -1, "root");
      b.add(".", "PUNCT", t, "punct");
      break;
    }
    default: {
      const int t = b.add("Thank", "VERB", -1, "root");
      b.add("you", "PRON", t, "dobj");
      b.add(".", "PUNCT", t, "punct");
      break;
    }
  }
  return std::move(b.tokens());
}

std::string render(const std::vector<DepToken>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    const bool attach = t.upos == "PUNCT" && (t.form == "," || t.form == "." || t.form == "!" || t.form == "?");
    if (!out.empty() && !attach) out += ' ';
    out += t.form;
  }
  return out;
}

}  // namespace

const std::vector<std::string>& positive_trigger_phrases() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out;
    for (const auto& np : positive_nps()) out.push_back(np_text(np));
    return out;
  }();
  return v;
}

const std::vector<std::string>& negative_trigger_phrases() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out;
    for (const auto& np : negative_nps()) out.push_back(np_text(np));
    return out;
  }();
  return v;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config) {
  if (config.positive_fraction < 0.0 || config.positive_fraction > 1.0)
    throw std::invalid_argument("positive_fraction must lie in [0, 1]");
  if (config.min_filler_sentences < 0 || config.max_filler_sentences < config.min_filler_sentences)
    throw std::invalid_argument("invalid filler sentence range");

  SyntheticCorpus out;
  out.enrichment.add("acme.com", {"logistics", "supply chain"});
  out.enrichment.add("globex.com", {"energy"});
  out.enrichment.add("initech.com", {"software", "cloud storage"});
  out.enrichment.add("umbrella.org", {"healthcare"});
  out.enrichment.add("hooli.io", {"search", "advertising"});
  out.enrichment.add("stark.net", {"manufacturing"});

  Rng rng(config.seed);
  const auto positives = static_cast<std::size_t>(std::llround(config.positive_fraction * static_cast<double>(config.count)));
  std::vector<int> labels(config.count, 0);
  for (std::size_t i = 0; i < positives; ++i) labels[i] = 1;
  rng.shuffle(labels);
  out.positives = positives;

  for (std::size_t n = 0; n < config.count; ++n) {
    const int label = labels[n];
    std::ostringstream id;
    id << "syn-" << std::setw(6) << std::setfill('0') << n;

    std::vector<std::vector<DepToken>> main;
    const int fillers = config.min_filler_sentences +
                        static_cast<int>(rng.index(static_cast<std::size_t>(config.max_filler_sentences -
                                                                            config.min_filler_sentences + 1)));
    for (int f = 0; f < fillers; ++f) main.push_back(clause_with(rng, pick(rng, filler_nps())));
    const auto& trigger = pick(rng, label == 1 ? positive_nps() : negative_nps());
    main.insert(main.begin() + static_cast<std::ptrdiff_t>(rng.index(main.size() + 1)), clause_with(rng, trigger));

    std::vector<std::vector<DepToken>> sentences;
    std::string body;
    if (rng.bernoulli(config.greeting_probability)) {
      sentences.push_back(greeting(rng));
      body = render(sentences.back()) + "\n\n";
    }
    for (std::size_t i = 0; i < main.size(); ++i) {
      if (i) body += ' ';
      body += render(main[i]);
      sentences.push_back(main[i]);
    }
    if (rng.bernoulli(config.closing_probability)) {
      sentences.push_back(closing(rng));
      body += "\n\n" + render(sentences.back());
    }

    LabeledEmail e;
    e.email.id = id.str();
    e.email.subject = pick(rng, kSubjects);
    e.email.body = std::move(body);
    e.email.recipient_org = std::string(pick(rng, kOrgs));
    e.email = enrich_interests(std::move(e.email), out.enrichment);
    e.label = label;
    e.source = SourceCorpus::generic;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      out.parses.emplace(SentenceKey{e.email.id, static_cast<int>(s)}, DependencyGraph(std::move(sentences[s])));
    }
    out.emails.push_back(std::move(e));
  }
  return out;
}

}  // namespace mailproto
