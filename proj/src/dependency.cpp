#include "mailproto/dependency.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

#include "mailproto/tokenizer.hpp"

namespace mailproto {

std::string validate_tree(const std::vector<DepToken>& tokens) {
  if (tokens.empty()) return "empty sentence";
  const int n = static_cast<int>(tokens.size());
  int roots = 0;
  for (int i = 0; i < n; ++i) {
    const auto& t = tokens[static_cast<std::size_t>(i)];
    if (t.head == -1) {
      ++roots;
      if (t.deprel != "root") return "token " + std::to_string(i + 1) + " has no governor but relation '" + t.deprel + "'";
    } else if (t.head < 0 || t.head >= n) {
      return "token " + std::to_string(i + 1) + " has governor out of range";
    } else if (t.deprel == "root") {
      return "token " + std::to_string(i + 1) + " labelled root but has a governor";
    } else if (t.head == i) {
      return "token " + std::to_string(i + 1) + " governs itself";
    }
  }
  if (roots != 1) return std::to_string(roots) + " root tokens (expected exactly one)";
  // Every chain must reach the root within n steps.
  for (int i = 0; i < n; ++i) {
    int at = i;
    for (int steps = 0; steps <= n && at != -1; ++steps) at = tokens[static_cast<std::size_t>(at)].head;
    if (at != -1) return "cycle through token " + std::to_string(i + 1);
  }
  return {};
}

DependencyGraph::DependencyGraph(std::vector<DepToken> tokens) : tokens_(std::move(tokens)) {
  if (auto why = validate_tree(tokens_); !why.empty()) throw ParseError("invalid dependency tree: " + why);
  for (int i = 0; i < size(); ++i) {
    if (tokens_[static_cast<std::size_t>(i)].head == -1) root_ = i;
  }
}

std::vector<DepEdge> DependencyGraph::edges() const {
  std::vector<DepEdge> out;
  for (int i = 0; i < size(); ++i) {
    const auto& t = tokens_[static_cast<std::size_t>(i)];
    if (t.head >= 0) out.push_back(DepEdge{i, t.deprel, t.head});
  }
  return out;
}

std::vector<std::vector<int>> DependencyGraph::children() const {
  std::vector<std::vector<int>> out(tokens_.size());
  for (int i = 0; i < size(); ++i) {
    const int h = tokens_[static_cast<std::size_t>(i)].head;
    if (h >= 0) out[static_cast<std::size_t>(h)].push_back(i);
  }
  return out;
}

std::vector<int> DependencyGraph::subtree(int i) const {
  const auto kids = children();
  std::vector<int> out;
  std::vector<int> stack{i};
  while (!stack.empty()) {
    const int at = stack.back();
    stack.pop_back();
    out.push_back(at);
    for (int c : kids[static_cast<std::size_t>(at)]) stack.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string DependencyGraph::text() const {
  std::string out;
  for (const auto& t : tokens_) {
    if (!out.empty()) out += ' ';
    out += t.form;
  }
  return out;
}

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t tab = line.find('\t', pos);
    out.emplace_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return out;
}

std::optional<int> to_int(std::string_view s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

struct Block {
  std::optional<std::string> email_id;
  std::optional<int> sent_index;
  std::vector<std::pair<int, DepToken>> rows;  // 1-based id, token with 1-based head
  std::string error;
  std::size_t first_line = 0;
};

void finish_block(Block& b, ParseIndex& out, Diagnostics& diagnostics, const std::set<std::string>* known_ids) {
  if (b.rows.empty() && !b.email_id && b.error.empty()) return;
  const std::string where = "parse block at line " + std::to_string(b.first_line);
  if (!b.error.empty()) {
    diagnostics.add(where + ": " + b.error);
    return;
  }
  if (!b.email_id || !b.sent_index) {
    diagnostics.add(where + ": missing '# email_id' or '# sent_index' comment");
    return;
  }
  if (known_ids && !known_ids->contains(*b.email_id)) {
    diagnostics.add(where + ": unknown email id '" + *b.email_id + "', dropped");
    return;
  }
  std::vector<DepToken> tokens(b.rows.size());
  std::vector<bool> filled(b.rows.size(), false);
  for (auto& [id, tok] : b.rows) {
    if (id < 1 || id > static_cast<int>(b.rows.size())) {
      diagnostics.add(where + ": token id " + std::to_string(id) + " out of sequence");
      return;
    }
    auto slot = filled[static_cast<std::size_t>(id - 1)];
    if (slot) {
      diagnostics.add(where + ": token " + std::to_string(id) + " listed twice (two governors)");
      return;
    }
    slot = true;
    tok.head = tok.head - 1;  // 0 -> -1 (root)
    tokens[static_cast<std::size_t>(id - 1)] = std::move(tok);
  }
  if (auto why = validate_tree(tokens); !why.empty()) {
    diagnostics.add(where + " (" + *b.email_id + "#" + std::to_string(*b.sent_index) + "): rejected, " + why);
    return;
  }
  SentenceKey key{*b.email_id, *b.sent_index};
  if (out.contains(key)) {
    diagnostics.add(where + ": duplicate sentence " + key.email_id + "#" + std::to_string(key.sentence_index));
    return;
  }
  out.emplace(std::move(key), DependencyGraph(std::move(tokens)));
}

std::optional<std::string> comment_value(std::string_view line, std::string_view key) {
  std::string_view rest = line.substr(1);
  while (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
  if (rest.substr(0, key.size()) != key) return std::nullopt;
  rest.remove_prefix(key.size());
  while (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
  if (rest.empty() || rest.front() != '=') return std::nullopt;
  return trim(rest.substr(1));
}

}  // namespace

ParseIndex parse_conllu(std::string_view text, Diagnostics& diagnostics, const std::set<std::string>* known_ids) {
  ParseIndex out;
  Block block;
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (trim(line).empty()) {
      finish_block(block, out, diagnostics, known_ids);
      block = Block{};
      continue;
    }
    if (block.first_line == 0) block.first_line = line_no;
    if (line.front() == '#') {
      if (auto v = comment_value(line, "email_id")) block.email_id = *v;
      if (auto v = comment_value(line, "sent_index")) {
        block.sent_index = to_int(*v);
        if (!block.sent_index && block.error.empty()) block.error = "non-integer sent_index";
      }
      continue;
    }
    if (!block.error.empty()) continue;
    const auto cols = split_tabs(line);
    std::string id_s, form, upos, head_s, deprel;
    if (cols.size() == 5) {
      id_s = cols[0], form = cols[1], upos = cols[2], head_s = cols[3], deprel = cols[4];
    } else if (cols.size() == 10 || cols.size() == 8) {
      id_s = cols[0], form = cols[1], upos = cols[3], head_s = cols[6], deprel = cols[7];
    } else {
      block.error = "line " + std::to_string(line_no) + ": expected 5 or 10 tab-separated columns";
      continue;
    }
    // Multiword ranges and empty nodes carry no tree structure.
    if (id_s.find('-') != std::string::npos || id_s.find('.') != std::string::npos) continue;
    const auto id = to_int(id_s);
    const auto head = to_int(head_s);
    if (!id || !head) {
      block.error = "line " + std::to_string(line_no) + ": non-integer ID or HEAD";
      continue;
    }
    block.rows.emplace_back(*id, DepToken{form, upos, *head, to_lower(deprel)});
  }
  finish_block(block, out, diagnostics, known_ids);
  return out;
}

ParseIndex load_parses(const std::filesystem::path& path, Diagnostics& diagnostics,
                       const std::set<std::string>* known_ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open parse file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_conllu(buf.str(), diagnostics, known_ids);
}

std::string format_conllu(const SentenceKey& key, const DependencyGraph& graph) {
  std::ostringstream os;
  os << "# email_id = " << key.email_id << "\n# sent_index = " << key.sentence_index << "\n";
  for (int i = 0; i < graph.size(); ++i) {
    const auto& t = graph.token(i);
    os << (i + 1) << '\t' << t.form << "\t_\t" << t.upos << "\t_\t_\t" << (t.head + 1) << '\t' << t.deprel
       << "\t_\t_\n";
  }
  os << '\n';
  return os.str();
}

void write_parses(const std::filesystem::path& path, const ParseIndex& parses) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write parse file " + path.string());
  for (const auto& [key, graph] : parses) out << format_conllu(key, graph);
}

const std::vector<std::string>& default_abbreviations() {
  static const std::vector<std::string> list{"e.g", "i.e", "etc", "mr", "mrs", "ms", "dr", "prof", "vs", "inc",
                                             "jr", "sr", "st", "no", "approx", "dept", "corp", "ltd", "co", "a.m",
                                             "p.m", "u.s", "fig", "cf"};
  return list;
}

std::vector<TextSpan> sentence_spans(std::string_view body, const std::vector<std::string>& abbreviations) {
  std::vector<TextSpan> out;
  const std::size_t n = body.size();
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    std::size_t b = start, e = end;
    while (b < e && std::isspace(static_cast<unsigned char>(body[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(body[e - 1]))) --e;
    if (b < e) out.push_back({b, e});
    start = end;
  };
  std::size_t i = 0;
  while (i < n) {
    const char c = body[i];
    if (c == '\n') {
      // Blank line (paragraph break) ends a sentence.
      std::size_t j = i + 1;
      while (j < n && (body[j] == ' ' || body[j] == '\t' || body[j] == '\r')) ++j;
      if (j < n && body[j] == '\n') {
        emit(i);
        i = j + 1;
        continue;
      }
    }
    if (c == '.' || c == '!' || c == '?') {
      std::size_t j = i;
      while (j < n && (body[j] == '.' || body[j] == '!' || body[j] == '?' || body[j] == '"' || body[j] == '\'' ||
                       body[j] == ')'))
        ++j;
      const bool boundary = j >= n || std::isspace(static_cast<unsigned char>(body[j]));
      bool abbreviation = false;
      if (boundary && c == '.' && j == i + 1) {
        // Word immediately before the period, including inner periods ("e.g").
        std::size_t w = i;
        while (w > start && !std::isspace(static_cast<unsigned char>(body[w - 1]))) --w;
        std::string word = to_lower(body.substr(w, i - w));
        while (!word.empty() && !std::isalnum(static_cast<unsigned char>(word.front()))) word.erase(word.begin());
        abbreviation = std::find(abbreviations.begin(), abbreviations.end(), word) != abbreviations.end();
      }
      if (boundary && !abbreviation) {
        emit(j);
        i = j;
        continue;
      }
      i = j;
      continue;
    }
    ++i;
  }
  emit(n);
  return out;
}

std::vector<std::string> sentence_segment(std::string_view body, const std::vector<std::string>& abbreviations) {
  std::vector<std::string> out;
  for (const auto& s : sentence_spans(body, abbreviations)) out.emplace_back(body.substr(s.begin, s.end - s.begin));
  return out;
}

DependencyGraph fallback_graph(std::string_view sentence) {
  auto words = split_words(sentence);
  if (words.empty()) words.push_back(TextToken{std::string(sentence.empty() ? "_" : sentence), 0, sentence.size()});
  std::vector<DepToken> tokens;
  for (std::size_t i = 0; i < words.size(); ++i) {
    tokens.push_back(DepToken{words[i].text, "X", i == 0 ? -1 : 0, i == 0 ? "root" : "dep"});
  }
  return DependencyGraph(std::move(tokens));
}

namespace {

PhraseSubgraph make_subgraph(const DependencyGraph& g, std::vector<int> nodes, std::string relation, int anchor,
                             const std::string& email_id, int sentence_index) {
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  PhraseSubgraph sg;
  sg.anchor_relation = std::move(relation);
  sg.anchor = anchor;
  sg.email_id = email_id;
  sg.sentence_index = sentence_index;
  for (const auto& e : g.edges()) {
    if (std::binary_search(nodes.begin(), nodes.end(), e.dependent) &&
        std::binary_search(nodes.begin(), nodes.end(), e.governor))
      sg.edges.push_back(e);
  }
  for (int i : nodes) {
    if (!sg.surface_text.empty()) sg.surface_text += ' ';
    sg.surface_text += g.token(i).form;
  }
  sg.nodes = std::move(nodes);
  return sg;
}

}  // namespace

std::vector<PhraseSubgraph> extract_subgraphs(const DependencyGraph& graph, const std::set<std::string>& anchors,
                                              const std::string& email_id, int sentence_index) {
  std::vector<PhraseSubgraph> out;
  const int root = graph.root_index();
  for (int i = 0; i < graph.size(); ++i) {
    const auto& t = graph.token(i);
    if (t.head < 0 || !anchors.contains(t.deprel)) continue;
    auto nodes = graph.subtree(i);
    nodes.push_back(root);
    out.push_back(make_subgraph(graph, std::move(nodes), t.deprel, i, email_id, sentence_index));
  }
  if (out.empty()) {
    std::vector<int> nodes{root};
    const auto children = graph.children();
    for (int c : children[static_cast<std::size_t>(root)]) nodes.push_back(c);
    out.push_back(make_subgraph(graph, std::move(nodes), "root", root, email_id, sentence_index));
  }
  return out;
}

std::optional<std::vector<TextSpan>> align_tokens(std::string_view text, const std::vector<DepToken>& tokens,
                                                  std::size_t from) {
  std::vector<TextSpan> spans;
  std::size_t cursor = from;
  auto alnum_at = [&](std::size_t k) { return k < text.size() && std::isalnum(static_cast<unsigned char>(text[k])); };
  for (const auto& t : tokens) {
    if (t.form.empty()) return std::nullopt;
    const bool word_start = std::isalnum(static_cast<unsigned char>(t.form.front()));
    const bool word_end = std::isalnum(static_cast<unsigned char>(t.form.back()));
    std::size_t at = text.find(t.form, cursor);
    // A word token must not match inside a longer word.
    while (at != std::string_view::npos && ((word_start && at > 0 && alnum_at(at - 1)) ||
                                            (word_end && alnum_at(at + t.form.size())))) {
      at = text.find(t.form, at + 1);
    }
    if (at == std::string_view::npos) return std::nullopt;
    // Only whitespace and punctuation may be skipped between tokens.
    for (std::size_t k = cursor; k < at; ++k) {
      if (std::isalnum(static_cast<unsigned char>(text[k])) && !spans.empty()) return std::nullopt;
    }
    spans.push_back({at, at + t.form.size()});
    cursor = at + t.form.size();
  }
  return spans;
}

DependencyGraph splice_phrase(const DependencyGraph& target, int begin, int end, int target_head,
                              const DependencyGraph& donor, int donor_begin, int donor_end, int donor_head) {
  if (begin < 0 || end < begin || end >= target.size() || target_head < begin || target_head > end)
    throw ParseError("splice_phrase: invalid target span");
  if (donor_begin < 0 || donor_end < donor_begin || donor_end >= donor.size() || donor_head < donor_begin ||
      donor_head > donor_end)
    throw ParseError("splice_phrase: invalid donor span");

  const int inserted = donor_end - donor_begin + 1;
  const int removed = end - begin + 1;
  const int new_head = begin + (donor_head - donor_begin);
  auto map_target = [&](int i) {
    if (i < begin) return i;
    if (i > end) return i - removed + inserted;
    return new_head;  // any removed token collapses onto the new head
  };

  std::vector<DepToken> out;
  out.reserve(static_cast<std::size_t>(target.size() - removed + inserted));
  for (int i = 0; i < begin; ++i) out.push_back(target.token(i));
  for (int i = donor_begin; i <= donor_end; ++i) {
    DepToken t = donor.token(i);
    if (i == donor_head) {
      const auto& th = target.token(target_head);
      t.deprel = th.deprel;
      t.head = th.head;  // remapped below
    } else if (t.head < donor_begin || t.head > donor_end) {
      t.head = donor_head;
      t.deprel = "dep";
    }
    out.push_back(std::move(t));
  }
  for (int i = end + 1; i < target.size(); ++i) out.push_back(target.token(i));

  for (int i = 0; i < static_cast<int>(out.size()); ++i) {
    auto& t = out[static_cast<std::size_t>(i)];
    const bool from_donor = i >= begin && i < begin + inserted;
    if (from_donor && i != new_head) {
      t.head = begin + (t.head - donor_begin);
    } else if (t.head >= 0) {
      t.head = map_target(t.head);
    }
    if (t.head == i) {
      t.head = -1;
      t.deprel = "root";
    }
  }
  return DependencyGraph(std::move(out));
}

namespace {

void add_fallback_sentences(PreparedEmail& p, std::string_view body, std::size_t from, std::size_t to) {
  const std::string_view gap = body.substr(from, to - from);
  for (const auto& span : sentence_spans(gap)) {
    const std::string_view text = gap.substr(span.begin, span.end - span.begin);
    // Stray punctuation between parsed sentences is not a sentence.
    if (std::none_of(text.begin(), text.end(), [](unsigned char c) { return std::isalnum(c); })) continue;
    PreparedSentence s;
    s.text = std::string(text);
    s.body_offset = from + span.begin;
    s.graph = fallback_graph(text);
    s.parsed = false;
    if (auto spans = align_tokens(s.text, s.graph.tokens())) s.token_spans = std::move(*spans);
    p.sentences.push_back(std::move(s));
    p.structural_degraded = true;
  }
}

}  // namespace

void refresh_phrases(PreparedEmail& p, const std::set<std::string>& anchors) {
  p.phrases.clear();
  p.email.sentences.clear();
  for (std::size_t i = 0; i < p.sentences.size(); ++i) {
    p.email.sentences.push_back(p.sentences[i].text);
    auto sgs = extract_subgraphs(p.sentences[i].graph, anchors, p.email.id, static_cast<int>(i));
    for (auto& sg : sgs) p.phrases.push_back(std::move(sg));
  }
}

PreparedEmail prepare_email(const Email& email, const ParseIndex* parses, const std::set<std::string>& anchors) {
  PreparedEmail p;
  p.email = email;
  const std::string& body = email.body;
  std::size_t cursor = 0;
  if (parses) {
    auto it = parses->lower_bound(SentenceKey{email.id, std::numeric_limits<int>::min()});
    for (; it != parses->end() && it->first.email_id == email.id; ++it) {
      const DependencyGraph& g = it->second;
      PreparedSentence s;
      s.graph = g;
      s.parsed = true;
      if (auto spans = align_tokens(body, g.tokens(), cursor)) {
        const std::size_t b = spans->front().begin, e = spans->back().end;
        add_fallback_sentences(p, body, cursor, b);
        s.text = body.substr(b, e - b);
        s.body_offset = b;
        for (auto& sp : *spans) sp = {sp.begin - b, sp.end - b};
        s.token_spans = std::move(*spans);
        cursor = e;
      } else {
        s.text = g.text();
        if (auto spans2 = align_tokens(s.text, g.tokens())) s.token_spans = std::move(*spans2);
      }
      p.sentences.push_back(std::move(s));
    }
  }
  add_fallback_sentences(p, body, cursor, body.size());
  refresh_phrases(p, anchors);
  return p;
}

PreparedEmail prepare_email(const LabeledEmail& email, const ParseIndex* parses, const std::set<std::string>& anchors) {
  PreparedEmail p = prepare_email(email.email, parses, anchors);
  p.label = email.label;
  return p;
}

}  // namespace mailproto
