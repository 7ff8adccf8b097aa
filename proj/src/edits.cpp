#include "mailproto/edits.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <map>
#include <sstream>

#include "mailproto/metrics.hpp"
#include "mailproto/parallel.hpp"
#include "mailproto/random.hpp"
#include "mailproto/tokenizer.hpp"

namespace mailproto {

using ag::RowVector;

std::string to_string(EditPosition p) {
  switch (p) {
    case EditPosition::subject: return "subject";
    case EditPosition::opening: return "opening";
    case EditPosition::main: return "main";
    case EditPosition::closing: return "closing";
  }
  return "?";
}

EditPosition parse_edit_position(std::string_view s) {
  for (EditPosition p : kEditPositions)
    if (to_string(p) == s) return p;
  throw std::invalid_argument("unknown edit position '" + std::string(s) + "' (subject, opening, main, closing)");
}

const std::vector<std::string>& default_greetings() {
  static const std::vector<std::string> words{"hi",        "hello",          "hey",       "dear",     "good morning",
                                              "good afternoon", "good evening", "greetings", "i hope you", "hope you",
                                              "hope this"};
  return words;
}

const std::vector<std::string>& default_sign_offs() {
  static const std::vector<std::string> words{"best",  "regards", "kind regards", "thanks",      "thank you",
                                              "sincerely", "cheers", "warm regards", "best wishes", "talk soon",
                                              "yours"};
  return words;
}

bool matches_lexicon(std::string_view sentence, const std::vector<std::string>& lexicon) {
  const std::string s = to_lower(trim(sentence));
  for (const auto& entry : lexicon) {
    const std::string e = to_lower(entry);
    if (e.empty() || !s.starts_with(e)) continue;
    if (s.size() == e.size() || !std::isalpha(static_cast<unsigned char>(s[e.size()]))) return true;
  }
  return false;
}

std::vector<int> EmailPositions::sentences_at(EditPosition p) const {
  switch (p) {
    case EditPosition::subject: return {};
    case EditPosition::opening: return opening ? std::vector<int>{*opening} : std::vector<int>{};
    case EditPosition::main: return main;
    case EditPosition::closing: return closing ? std::vector<int>{*closing} : std::vector<int>{};
  }
  return {};
}

EmailPositions classify_positions(const std::string& subject, const std::vector<std::string>& sentences,
                                  const Lexicons& lexicons) {
  EmailPositions p;
  p.subject = subject;
  p.sentences = sentences;
  const int n = static_cast<int>(sentences.size());
  if (n >= 2) {
    if (matches_lexicon(sentences.front(), lexicons.greetings)) p.opening = 0;
    if (matches_lexicon(sentences.back(), lexicons.sign_offs)) p.closing = n - 1;
  }
  for (int i = 0; i < n; ++i)
    if (i != p.opening.value_or(-1) && i != p.closing.value_or(-1)) p.main.push_back(i);
  return p;
}

EmailPositions classify_positions(const Email& email, const Lexicons& lexicons) {
  return classify_positions(email.subject, email.sentences.empty() ? sentence_segment(email.body) : email.sentences,
                            lexicons);
}

namespace {

double cosine(const RowVector& a, const RowVector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0 || a.size() != b.size()) return 0.0;
  return a.dot(b) / (na * nb);
}

double p_response(const Model& model, const PreparedEmail& e) { return model.predict(model.featurize(e)).probabilities[1]; }

int word_count(std::string_view text) {
  int n = 0;
  for (const auto& t : split_words(text))
    if (std::isalnum(static_cast<unsigned char>(t.text.front()))) ++n;
  return n;
}

struct Donor {
  int prototype = 0;
  const ProjectionRecord* source = nullptr;
  double topic = 0.0;
  bool random = false;
};

std::vector<Donor> select_donors(const PrototypeBank& bank, const RowVector& e_D, const std::string& email_id,
                                 EditPosition position, const EditOptions& options) {
  std::vector<Donor> all, matched;
  for (int i : bank.prototypes_of_class(1)) {
    const auto& rec = bank.projection[static_cast<std::size_t>(i)];
    if (!rec) continue;
    all.push_back({i, &*rec, cosine(rec->source_document, e_D), false});
  }
  if (all.empty()) throw NoPositivePrototypesError("no projected positive-class " + to_string(bank.granularity) +
                                                   " prototypes to draw edits from");
  for (const auto& d : all)
    if (d.topic >= options.topic_threshold) matched.push_back(d);
  if (matched.empty()) {
    Rng rng(mix_seed(mix_seed(options.seed, fnv1a(email_id)), static_cast<std::uint64_t>(position)));
    Donor d = all[rng.index(all.size())];
    d.random = true;
    return {d};
  }
  std::stable_sort(matched.begin(), matched.end(), [](const Donor& a, const Donor& b) { return a.topic > b.topic; });
  return matched;
}

// Token range, head and surface text of a sentence's top keyphrase.
struct Phrase {
  int begin = 0;
  int end = 0;
  int head = 0;
  std::string text;
};

std::optional<Phrase> sentence_phrase(const Model& model, const DependencyGraph& graph, std::string_view text) {
  if (graph.size() == 0) return std::nullopt;
  const auto attention = sentence_attention(model, graph);
  const std::vector<double> none;
  const Keyphrase k = attention_keyphrases(graph, attention ? *attention : none);
  Phrase p{k.tokens.front(), k.tokens.back(), k.keyword, k.text};
  if (auto spans = align_tokens(text, graph.tokens())) {
    const auto& s = *spans;
    p.text = std::string(text.substr(s[static_cast<std::size_t>(p.begin)].begin,
                                     s[static_cast<std::size_t>(p.end)].end - s[static_cast<std::size_t>(p.begin)].begin));
  }
  return p;
}

// Whole subject when it is short, otherwise its top keyphrase under the graph encoder's attention.
std::optional<TextSpan> subject_phrase(const Model& model, const std::string& subject) {
  if (word_count(subject) == 0) return std::nullopt;
  const std::string trimmed = trim(subject);
  const std::size_t lead = subject.find(trimmed);
  if (word_count(subject) <= 2) return TextSpan{lead, lead + trimmed.size()};
  const DependencyGraph g = fallback_graph(subject);
  const auto spans = align_tokens(subject, g.tokens());
  if (!spans) return TextSpan{lead, lead + trimmed.size()};
  const auto attention = sentence_attention(model, g);
  const std::vector<double> none;
  const Keyphrase k = attention_keyphrases(g, attention ? *attention : none);
  return TextSpan{(*spans)[static_cast<std::size_t>(k.tokens.front())].begin,
                  (*spans)[static_cast<std::size_t>(k.tokens.back())].end};
}

PreparedEmail replace_in_sentence(const PreparedEmail& email, int sentence, int begin, int end, int head,
                                  const DependencyGraph& donor, const Phrase& donor_phrase) {
  PreparedEmail e = email;
  auto& s = e.sentences[static_cast<std::size_t>(sentence)];
  const std::size_t b = s.token_spans[static_cast<std::size_t>(begin)].begin;
  const std::size_t len = s.token_spans[static_cast<std::size_t>(end)].end - b;
  const std::size_t at = *s.body_offset + b;
  s.text.replace(b, len, donor_phrase.text);
  s.graph = splice_phrase(s.graph, begin, end, head, donor, donor_phrase.begin, donor_phrase.end, donor_phrase.head);
  auto spans = align_tokens(s.text, s.graph.tokens());
  s.token_spans = spans ? std::move(*spans) : std::vector<TextSpan>{};
  e.email.body.replace(at, len, donor_phrase.text);
  const auto delta = static_cast<std::ptrdiff_t>(donor_phrase.text.size()) - static_cast<std::ptrdiff_t>(len);
  for (auto& other : e.sentences)
    if (&other != &s && other.body_offset && *other.body_offset > at)
      other.body_offset = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(*other.body_offset) + delta);
  if (static_cast<std::size_t>(sentence) < e.email.sentences.size())
    e.email.sentences[static_cast<std::size_t>(sentence)] = s.text;
  refresh_phrases(e);
  return e;
}

}  // namespace

std::vector<EditSuggestion> suggest_edits(const Model& model, const PreparedEmail& email, EditPosition position,
                                          const EditOptions& options) {
  const auto& cfg = model.config();
  if (!cfg.use_prototypes) throw std::invalid_argument("edit suggestions need a model with prototypes");
  if (!model.projected()) throw NotProjectedError("prototypes are not projected; project them before suggesting edits");

  const Prediction before = model.predict(model.featurize(email));
  std::vector<EditSuggestion> out;

  if (position == EditPosition::subject) {
    if (!cfg.uses(Granularity::document)) return out;
    const auto target = subject_phrase(model, email.email.subject);
    if (!target) return out;
    const std::string original = email.email.subject.substr(target->begin, target->end - target->begin);
    const PrototypeBank& bank = model.bank(Granularity::document);
    std::vector<std::string> seen;
    for (const Donor& d : select_donors(bank, before.views.e_D, email.email.id, position, options)) {
      const std::string& donor_subject = d.source->source_subject;
      const auto span = subject_phrase(model, donor_subject);
      if (!span) continue;
      const std::string replacement = donor_subject.substr(span->begin, span->end - span->begin);
      if (replacement == original || std::find(seen.begin(), seen.end(), replacement) != seen.end()) continue;
      if (static_cast<int>(seen.size()) >= options.max_donors) break;
      seen.push_back(replacement);
      PreparedEmail edited = email;
      edited.email.subject.replace(target->begin, target->end - target->begin, replacement);
      EditSuggestion s;
      s.position = position;
      s.span = *target;
      s.original = original;
      s.replacement = replacement;
      s.source_granularity = Granularity::document;
      s.prototype = d.prototype;
      s.source = *d.source;
      s.topic_match = d.topic;
      s.random_fallback = d.random;
      s.before = before.probabilities[1];
      s.after = p_response(model, edited);
      s.edited_subject = edited.email.subject;
      s.edited_body = edited.email.body;
      out.push_back(std::move(s));
    }
  } else {
    const Granularity g = cfg.uses(Granularity::sentence) ? Granularity::sentence : Granularity::phrase;
    if (!cfg.uses(g)) return out;
    std::vector<std::string> texts;
    for (const auto& s : email.sentences) texts.push_back(s.text);
    const EmailPositions positions = classify_positions(email.email.subject, texts, options.lexicons);
    const std::vector<int> targets = positions.sentences_at(position);
    if (targets.empty()) return out;

    const PrototypeBank& bank = model.bank(g);
    struct Candidate {
      Donor donor;
      DependencyGraph graph;
      Phrase phrase;
    };
    std::vector<Candidate> donors;
    std::vector<std::string> seen;
    for (const Donor& d : select_donors(bank, before.views.e_D, email.email.id, position, options)) {
      if (static_cast<int>(donors.size()) >= options.max_donors) break;
      Diagnostics diag;
      const ParseIndex parsed = parse_conllu(d.source->source_parse, diag);
      if (parsed.empty()) continue;
      const DependencyGraph& graph = parsed.begin()->second;
      const std::string donor_text = g == Granularity::sentence ? d.source->surface_text : graph.text();
      auto phrase = sentence_phrase(model, graph, donor_text);
      if (!phrase || std::find(seen.begin(), seen.end(), phrase->text) != seen.end()) continue;
      seen.push_back(phrase->text);
      donors.push_back({d, graph, *phrase});
    }

    for (int t : targets) {
      const auto& sentence = email.sentences[static_cast<std::size_t>(t)];
      if (!sentence.body_offset || sentence.token_spans.size() != static_cast<std::size_t>(sentence.graph.size()))
        continue;
      const auto target = sentence_phrase(model, sentence.graph, sentence.text);
      if (!target) continue;
      const std::size_t b = sentence.token_spans[static_cast<std::size_t>(target->begin)].begin;
      const std::size_t e = sentence.token_spans[static_cast<std::size_t>(target->end)].end;
      const std::string original = sentence.text.substr(b, e - b);
      for (const Candidate& c : donors) {
        if (c.phrase.text == original) continue;
        const PreparedEmail edited =
            replace_in_sentence(email, t, target->begin, target->end, target->head, c.graph, c.phrase);
        EditSuggestion s;
        s.position = position;
        s.sentence = t;
        s.span = {*sentence.body_offset + b, *sentence.body_offset + e};
        s.original = original;
        s.replacement = c.phrase.text;
        s.source_granularity = g;
        s.prototype = c.donor.prototype;
        s.source = *c.donor.source;
        s.topic_match = c.donor.topic;
        s.random_fallback = c.donor.random;
        s.before = before.probabilities[1];
        s.after = p_response(model, edited);
        s.edited_subject = edited.email.subject;
        s.edited_body = edited.email.body;
        out.push_back(std::move(s));
      }
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const EditSuggestion& a, const EditSuggestion& b) { return a.after > b.after; });
  return out;
}

nlohmann::json to_json(const EditSuggestion& s) {
  return {{"position", to_string(s.position)},
          {"sentence", s.sentence},
          {"span", {s.span.begin, s.span.end}},
          {"original", s.original},
          {"replacement", s.replacement},
          {"source",
           {{"granularity", to_string(s.source_granularity)},
            {"prototype", s.prototype},
            {"id", s.source.source_id},
            {"unit", s.source.unit_index},
            {"text", s.source.surface_text}}},
          {"topic_match", s.topic_match},
          {"random_fallback", s.random_fallback},
          {"before", s.before},
          {"after", s.after},
          {"edited_subject", s.edited_subject},
          {"edited_body", s.edited_body}};
}

std::string format_suggestions(const std::vector<EditSuggestion>& suggestions) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  if (suggestions.empty()) os << "no suggestions\n";
  for (std::size_t i = 0; i < suggestions.size(); ++i) {
    const auto& s = suggestions[i];
    os << i + 1 << ". [" << to_string(s.position) << "] \"" << s.original << "\" -> \"" << s.replacement << "\"  p "
       << s.before << " -> " << s.after << "\n";
    os << "   from " << to_string(s.source_granularity) << " prototype " << s.prototype << " (" << s.source.source_id
       << "), topic match " << s.topic_match << (s.random_fallback ? ", random fallback" : "") << "\n";
  }
  return os.str();
}

// ---- simulation ----------------------------------------------------------------------------

std::optional<double> PositionOutcome::ratio() const {
  if (negatives == 0) return std::nullopt;
  return static_cast<double>(flipped) / static_cast<double>(negatives);
}

EditSimulationRun simulate_edits(const Model& model, std::span<const PreparedEmail> emails,
                                 std::span<const EditPosition> positions, const EditOptions& options, int threads) {
  std::vector<std::array<PositionOutcome, 4>> per(emails.size());
  parallel_for(emails.size(), threads, [&](std::size_t i) {
    if (model.predict(model.featurize(emails[i])).label != 0) return;
    for (EditPosition p : positions) {
      auto& o = per[i][static_cast<std::size_t>(p)];
      o.negatives = 1;
      const auto suggestions = suggest_edits(model, emails[i], p, options);
      if (suggestions.empty()) continue;
      o.edited = 1;
      if (suggestions.front().after > 0.5) o.flipped = 1;
    }
  });
  EditSimulationRun run;
  run.seed = options.seed;
  for (const auto& o : per)
    for (std::size_t p = 0; p < 4; ++p) {
      run.outcomes[p].negatives += o[p].negatives;
      run.outcomes[p].edited += o[p].edited;
      run.outcomes[p].flipped += o[p].flipped;
    }
  return run;
}

EditSimulationReport summarize_edit_runs(std::vector<EditSimulationRun> runs, std::span<const EditPosition> positions) {
  EditSimulationReport r;
  r.runs = std::move(runs);
  for (EditPosition p : positions) {
    PositionSummary s;
    s.position = p;
    std::vector<double> ratios;
    for (const auto& run : r.runs) {
      const auto& o = run.outcomes[static_cast<std::size_t>(p)];
      s.negatives += o.negatives;
      s.edited += o.edited;
      s.flipped += o.flipped;
      if (auto v = o.ratio()) ratios.push_back(*v);
    }
    s.runs_with_negatives = static_cast<int>(ratios.size());
    if (!ratios.empty()) {
      s.mean = mean(ratios);
      s.sd = sample_sd(ratios);
    }
    r.positions.push_back(s);
  }
  return r;
}

EditSimulationReport simulate_edits(const Model& model, std::span<const PreparedEmail> emails,
                                    std::span<const EditPosition> positions, std::span<const std::uint64_t> seeds,
                                    const EditOptions& options, int threads) {
  std::vector<EditSimulationRun> runs;
  for (std::uint64_t seed : seeds) {
    EditOptions o = options;
    o.seed = seed;
    runs.push_back(simulate_edits(model, emails, positions, o, threads));
  }
  return summarize_edit_runs(std::move(runs), positions);
}

std::string format_simulation_report(const EditSimulationReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "position  negatives  edited  flipped  flip_ratio (mean +/- sd over " << r.runs.size() << " runs)\n";
  for (const auto& s : r.positions) {
    os << std::left << std::setw(10) << to_string(s.position) << std::right << std::setw(9) << s.negatives
       << std::setw(8) << s.edited << std::setw(9) << s.flipped << "  ";
    if (s.mean)
      os << *s.mean << " +/- " << s.sd;
    else
      os << "n/a (no predicted negatives)";
    os << "\n";
  }
  return os.str();
}

nlohmann::json to_json(const EditSimulationReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json o = nlohmann::json::object();
    for (EditPosition p : kEditPositions) {
      const auto& x = run.outcomes[static_cast<std::size_t>(p)];
      o[to_string(p)] = {{"negatives", x.negatives}, {"edited", x.edited}, {"flipped", x.flipped}};
    }
    runs.push_back({{"seed", run.seed}, {"outcomes", o}});
  }
  nlohmann::json positions = nlohmann::json::array();
  for (const auto& s : r.positions) {
    nlohmann::json j{{"position", to_string(s.position)},
                     {"negatives", s.negatives},
                     {"edited", s.edited},
                     {"flipped", s.flipped},
                     {"runs_with_negatives", s.runs_with_negatives}};
    if (s.mean) {
      j["flip_ratio_mean"] = *s.mean;
      j["flip_ratio_sd"] = s.sd;
    } else {
      j["flip_ratio_mean"] = nullptr;
      j["note"] = "no predicted negatives";
    }
    positions.push_back(std::move(j));
  }
  return {{"runs", runs}, {"positions", positions}};
}

}  // namespace mailproto
