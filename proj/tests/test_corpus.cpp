#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "mailproto/pipeline.hpp"
#include "support.hpp"

using namespace mailproto;

namespace {

std::vector<LabeledEmail> make_corpus(int positives, int negatives) {
  std::vector<LabeledEmail> out;
  for (int i = 0; i < positives + negatives; ++i) {
    LabeledEmail e;
    e.email.id = "e" + std::to_string(i);
    e.email.subject = "s";
    e.email.body = "b";
    e.label = i < positives ? 1 : 0;
    out.push_back(e);
  }
  return out;
}

int count_label(const std::vector<LabeledEmail>& v, int label) {
  int n = 0;
  for (const auto& e : v) n += e.label == label;
  return n;
}

std::vector<std::string> ids(const std::vector<LabeledEmail>& v) {
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(e.email.id);
  return out;
}

}  // namespace

TEST_CASE("raw message fields") {
  const Email e = parse_raw_email("To: jane@enron.com\nSubject: budget review\n\nNumbers attached.\n", "x");
  CHECK(e.subject == "budget review");
  CHECK(e.body == "Numbers attached.\n");
  REQUIRE(e.recipient_org);
  CHECK(*e.recipient_org == "enron.com");
  CHECK_THROWS_AS(parse_raw_email("Subject: empty\n\n   \n", "x"), CorpusError);
}

TEST_CASE("response labelling") {
  Email reply = parse_raw_email("Subject: RE: meeting\n\nSounds good.\n", "a");
  LabeledEmail l = label_enron(reply);
  CHECK(l.label == 1);
  CHECK(l.email.body == "Sounds good.\n");

  LabeledEmail plain = label_enron(parse_raw_email("Subject: lunch?\n\nAre you free?\n", "b"));
  CHECK(plain.label == 0);
  CHECK(plain.email.body == "Are you free?\n");

  LabeledEmail quoted =
      label_enron(parse_raw_email("Subject: notes\n\nSee below.\n-----Original Message-----\nOld text.\n", "c"));
  CHECK(quoted.label == 1);
  CHECK(quoted.email.body == "Old text.\n");
}

TEST_CASE("maildir fixture matches the hand-extracted records") {
  Diagnostics diag;
  const auto emails = load_enron_maildir(testing::fixture("enron_maildir"), diag);
  CHECK(diag.empty());
  const auto expected = nlohmann::json::parse(read_text_file(testing::fixture("enron_expected.json")));
  REQUIRE(emails.size() == expected.size());
  REQUIRE(emails.size() == 10);
  std::map<std::string, const LabeledEmail*> by_id;
  for (const auto& e : emails) by_id[e.email.id] = &e;
  for (const auto& x : expected) {
    const std::string id = x["id"].get<std::string>();
    CAPTURE(id);
    REQUIRE(by_id.contains(id));
    const LabeledEmail& e = *by_id[id];
    CHECK(e.email.subject == x["subject"].get<std::string>());
    CHECK(e.email.body == x["body"].get<std::string>());
    CHECK(e.label == x["label"].get<int>());
    CHECK(e.source == SourceCorpus::enron);
    if (x["recipient_org"].is_null())
      CHECK_FALSE(e.email.recipient_org.has_value());
    else
      CHECK(e.email.recipient_org == x["recipient_org"].get<std::string>());
  }
}

TEST_CASE("generic corpus records") {
  Diagnostics diag;
  const std::string text =
      R"({"id":"a","subject":"s","body":"b","label":1})"
      "\n"
      R"({"id":"b","subject":"s","label":0})"
      "\n";
  // one bad line of two exceeds the invalid-line budget
  CHECK_THROWS_AS(parse_generic_corpus(text, diag), CorpusError);

  std::string many = text;
  for (int i = 0; i < 20; ++i)
    many += R"({"id":"g)" + std::to_string(i) + R"(","subject":"s","body":"b","label":0})" + "\n";
  Diagnostics d2;
  const auto v = parse_generic_corpus(many, d2);
  CHECK(v.size() == 21);
  CHECK(v[0].label == 1);
  REQUIRE(d2.messages.size() == 1);
  CHECK(d2.messages[0].find("line 2") != std::string::npos);

  const auto syn = testing::small_corpus(1000, 5);
  const auto dir = testing::scratch_dir("generic");
  write_generic_corpus(dir / "c.jsonl", syn.emails);
  Diagnostics d3;
  const auto back = load_generic_corpus(dir / "c.jsonl", d3);
  CHECK(back.size() == 1000);
  CHECK(count_label(back, 1) == static_cast<int>(syn.positives));
  CHECK(d3.empty());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].email == syn.emails[i].email);
}

TEST_CASE("balanced split arithmetic and determinism") {
  const auto corpus = make_corpus(100, 300);
  const SplitCorpus s = balance_and_split(corpus, 7, {0.8, 0.1, 0.1});
  CHECK(s.train.size() == 160);
  CHECK(s.val.size() == 20);
  CHECK(s.test.size() == 20);
  for (const auto* part : {&s.train, &s.val, &s.test}) CHECK(count_label(*part, 1) == count_label(*part, 0));

  const SplitCorpus again = balance_and_split(corpus, 7, {0.8, 0.1, 0.1});
  CHECK(ids(again.train) == ids(s.train));
  CHECK(ids(again.test) == ids(s.test));
  const SplitCorpus other = balance_and_split(corpus, 8, {0.8, 0.1, 0.1});
  CHECK(ids(other.train) != ids(s.train));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto odd = balance_and_split(make_corpus(37, 90), seed, {0.8, 0.1, 0.1});
    for (const auto* part : {&odd.train, &odd.val, &odd.test})
      CHECK(std::abs(count_label(*part, 1) - count_label(*part, 0)) <= 1);
  }
  CHECK_THROWS(balance_and_split(make_corpus(1, 5), 1, {0.8, 0.1, 0.1}));
}

TEST_CASE("split manifest round trip") {
  const auto corpus = make_corpus(30, 40);
  const SplitCorpus s = balance_and_split(corpus, 3, {0.8, 0.1, 0.1});
  const std::string text = format_manifest(manifest_of(s));
  const SplitCorpus back = apply_manifest(corpus, parse_manifest(text));
  CHECK(ids(back.train) == ids(s.train));
  CHECK(ids(back.val) == ids(s.val));
  CHECK(ids(back.test) == ids(s.test));
  CHECK(format_manifest(manifest_of(back)) == text);

  SplitManifest bad = manifest_of(s);
  bad.ids[0].push_back("missing");
  CHECK_THROWS_AS(apply_manifest(corpus, bad), CorpusError);
}

TEST_CASE("organisation interests") {
  const EnrichmentTable table = EnrichmentTable::parse(R"({"acme.com": ["logistics"]})");
  Email e;
  e.recipient_org = "acme.com";
  CHECK(enrich_interests(e, table).interests == std::vector<std::string>{"logistics"});
  e.recipient_org = "other.org";
  const Email unknown = enrich_interests(e, table);
  CHECK(unknown.interests_unknown());
  Email none;
  CHECK(enrich_interests(none, table) == none);
  CHECK_THROWS_AS(EnrichmentTable::parse("[1, 2"), CorpusError);
}
