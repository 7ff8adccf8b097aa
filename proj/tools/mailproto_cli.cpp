#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "mailproto/checkpoint.hpp"
#include "mailproto/pipeline.hpp"
#include "mailproto/service.hpp"

using namespace mailproto;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string run_dir;
  std::string checkpoint;
  std::optional<int> threads;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "run configuration (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "override a config value, e.g. --set hyperparams.epochs=5");
  sub->add_option("--run-dir", c.run_dir, "output directory");
  sub->add_option("--checkpoint", c.checkpoint, "checkpoint directory");
  sub->add_option("--threads", c.threads, "worker threads (0 = hardware)");
  sub->add_option("--epochs", c.epochs, "training epochs");
  sub->add_option("--seed", c.seed, "training seed");
}

void set_path(nlohmann::json& root, const std::string& path, nlohmann::json value) {
  nlohmann::json* node = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("bad override path '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    if (!(*node)[key].is_object()) (*node)[key] = nlohmann::json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig resolve(const Common& c) {
  nlohmann::json raw = nlohmann::json::object();
  if (!c.config.empty()) {
    try {
      raw = nlohmann::json::parse(read_text_file(c.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument("config " + c.config + ": " + e.what());
    }
  }
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    const std::string text = s.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set_path(raw, s.substr(0, eq), value);
  }
  if (!c.run_dir.empty()) raw["run_dir"] = c.run_dir;
  if (!c.checkpoint.empty()) raw["checkpoint"] = c.checkpoint;
  if (c.threads) raw["threads"] = *c.threads;
  if (c.epochs) set_path(raw, "hyperparams.epochs", *c.epochs);
  if (c.seed) set_path(raw, "hyperparams.seed", *c.seed);
  return run_config_from_json(raw);
}

void report_diagnostics(const Diagnostics& d) {
  for (const auto& m : d.messages) std::cerr << "warning: " << m << "\n";
}

fs::path manifest_path(const RunConfig& c) { return fs::path(c.run_dir) / "manifest.txt"; }

// An explicit manifest wins, then the one written by train, then a fresh split.
SplitCorpus split_for(RunConfig c, const std::vector<LabeledEmail>& emails) {
  if (c.manifest.empty() && fs::exists(manifest_path(c))) c.manifest = manifest_path(c).string();
  return make_split(c, emails);
}

ExperimentData load_experiment(const RunConfig& c, SplitCorpus* split_out = nullptr) {
  CorpusBundle bundle = load_corpus(c.corpus);
  report_diagnostics(bundle.diagnostics);
  SplitCorpus split = split_for(c, bundle.emails);
  ExperimentData data = prepare_split(split, bundle.parses);
  if (split_out) *split_out = std::move(split);
  return data;
}

std::unique_ptr<Model> open_checkpoint(const RunConfig& c) {
  const std::string path = resolve_checkpoint_path(c.checkpoint_dir().string());
  return load_checkpoint(path);
}

TrainOptions train_options(const RunConfig& c) { return {c.threads, &std::cerr}; }

// --id looks the email up in the configured corpus; --input reads a service request body.
PreparedEmail select_email(const RunConfig& c, const std::string& id, const std::string& input) {
  if (!input.empty()) return parse_request(read_text_file(input));
  if (id.empty()) throw std::invalid_argument("pass --id or --input");
  CorpusBundle bundle = load_corpus(c.corpus);
  for (const auto& e : bundle.emails)
    if (e.email.id == id) return prepare_email(e, &bundle.parses);
  throw std::invalid_argument("no email with id '" + id + "' in the corpus");
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

// ---- commands -----------------------------------------------------------------------

int cmd_ingest(const RunConfig& c, const std::string& out_dir) {
  CorpusBundle bundle = load_corpus(c.corpus);
  report_diagnostics(bundle.diagnostics);
  const fs::path out = out_dir.empty() ? fs::path(c.run_dir) / "corpus" : fs::path(out_dir);
  std::string lines;
  for (const auto& e : bundle.emails) lines += format_generic_record(e) + "\n";
  write_text_file(out / "corpus.jsonl", lines);
  if (!bundle.parses.empty()) write_parses(out / "parses.conllu", bundle.parses);
  if (bundle.enrichment.size() > 0) write_json(out / "enrichment.json", to_json(bundle.enrichment));
  std::size_t positives = 0;
  for (const auto& e : bundle.emails) positives += e.label == 1;
  std::cout << "ingested " << bundle.emails.size() << " emails (" << positives << " responded), "
            << bundle.parses.size() << " parsed sentences into " << out.string() << "\n";
  return 0;
}

int cmd_parse_prep(const RunConfig& c, const std::string& emit, const std::string& import, const std::string& out) {
  if (emit.empty() && import.empty()) throw std::invalid_argument("pass --emit and/or --import");
  CorpusBundle bundle = load_corpus(c.corpus);
  report_diagnostics(bundle.diagnostics);
  if (!emit.empty()) {
    std::string lines;
    std::size_t n = 0;
    for (const auto& e : bundle.emails) {
      const auto sentences = sentence_segment(e.email.body);
      for (std::size_t i = 0; i < sentences.size(); ++i, ++n)
        lines += nlohmann::json{{"email_id", e.email.id}, {"sent_index", i}, {"text", sentences[i]}}.dump() + "\n";
    }
    write_text_file(emit, lines);
    std::cout << "wrote " << n << " sentences to " << emit << "\n";
  }
  if (!import.empty()) {
    std::set<std::string> ids;
    for (const auto& e : bundle.emails) ids.insert(e.email.id);
    Diagnostics diag;
    const ParseIndex parses = load_parses(import, diag, &ids);
    report_diagnostics(diag);
    const fs::path dest = out.empty() ? fs::path(c.run_dir) / "corpus" / "parses.conllu" : fs::path(out);
    write_parses(dest, parses);
    std::cout << "imported " << parses.size() << " parses (" << diag.messages.size() << " rejected) into "
              << dest.string() << "\n";
  }
  return 0;
}

int cmd_train(const RunConfig& c) {
  SplitCorpus split;
  const ExperimentData data = load_experiment(c, &split);
  const fs::path run(c.run_dir);
  write_json(run / "config.json", to_json(c));
  write_text_file(manifest_path(c), format_manifest(manifest_of(split)));
  std::cerr << "train " << data.train.size() << "  val " << data.val.size() << "  test " << data.test.size() << "\n";

  Model model(apply(c.hyperparams, c.model));
  const Dataset train_set = make_dataset(model, data.train);
  const Dataset val_set = make_dataset(model, data.val);
  const RunHistory history = train(model, train_set, val_set, c.hyperparams, train_options(c));
  save_checkpoint(model, c.checkpoint_dir());
  write_json(run / "history.json", to_json(history, false));
  write_json(run / "timing.json", {{"wall_seconds", history.wall_seconds}});
  if (!history.epochs.empty()) {
    write_json(run / "metrics_val.json", to_json(history.final_val));
    write_text_file(run / "metrics_val.txt", format_metrics(history.final_val));
    std::cout << format_metrics(history.final_val);
  }
  std::cout << "checkpoint " << c.checkpoint_dir().string() << " (best epoch " << history.best_epoch
            << ", version " << model.version() << ")\n";
  if (history.aborted) {
    std::cerr << "error: " << history.abort_reason << "\n";
    return 3;
  }
  return 0;
}

int cmd_evaluate(const RunConfig& c, const std::string& which, const std::string& out) {
  const auto model = open_checkpoint(c);
  const ExperimentData data = load_experiment(c);
  const std::vector<PreparedEmail>* emails = which == "test" ? &data.test : which == "val" ? &data.val : &data.train;
  const Dataset set = make_dataset(*model, *emails);
  const Metrics m = evaluate(*model, set.inputs, c.threads);
  const fs::path dir = out.empty() ? fs::path(c.run_dir) : fs::path(out);
  write_json(dir / ("metrics_" + which + ".json"), to_json(m));
  write_text_file(dir / ("metrics_" + which + ".txt"), format_metrics(m));
  std::cout << format_metrics(m);
  return 0;
}

int cmd_search(const RunConfig& c) {
  const ExperimentData data = load_experiment(c);
  const SearchResult r =
      random_search(c.search_space, c.search_budget, c.search_seed, c.hyperparams, c.model, data, train_options(c));
  const fs::path run(c.run_dir);
  write_json(run / "search.json", to_json(r));
  write_text_file(run / "search.txt", format_leaderboard(r));
  write_json(run / "best_hyperparams.json", to_json(r.best));
  std::cout << format_leaderboard(r);
  return 0;
}

int cmd_ablate(const RunConfig& c, const std::string& kind) {
  const ExperimentData data = load_experiment(c);
  std::vector<AblationConfig> configs;
  if (kind == "variants")
    configs = variant_ablation(c.model.encoder.components);
  else if (kind == "components")
    configs = component_ablation(c.component_subsets, c.model.variant);
  else
    throw std::invalid_argument("--kind must be variants or components");
  const AblationReport r = ablation_run(configs, c.model, c.hyperparams, data, c.seeds, train_options(c));
  const fs::path run(c.run_dir);
  write_json(run / ("ablation_" + kind + ".json"), to_json(r));
  write_text_file(run / ("ablation_" + kind + ".txt"), format_ablation(r));
  std::cout << format_ablation(r);
  return 0;
}

int cmd_explain(const RunConfig& c, const std::string& id, const std::string& input, std::optional<int> top_n,
                const std::string& out, bool keyphrases) {
  const auto model = open_checkpoint(c);
  const PreparedEmail email = select_email(c, id, input);
  const ExplanationReport report = explain(*model, email, top_n.value_or(c.top_n));
  nlohmann::json j = to_json(report);
  std::cout << format_report(report);
  if (keyphrases) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& k : email_keyphrases(*model, email, c.ig_steps)) {
      std::cout << "sentence " << k.sentence << ": keyword \"" << k.keyphrase.keyword_text << "\", keyphrase \""
                << k.keyphrase.text << "\"\n";
      list.push_back({{"sentence", k.sentence}, {"keyword", k.keyphrase.keyword_text}, {"keyphrase", k.keyphrase.text}});
    }
    j["keyphrases"] = list;
  }
  if (!out.empty()) write_json(out, j);
  return 0;
}

int cmd_suggest(const RunConfig& c, const std::string& id, const std::string& input, const std::string& position,
                const std::string& out) {
  const auto model = open_checkpoint(c);
  const PreparedEmail email = select_email(c, id, input);
  const auto suggestions = suggest_edits(*model, email, parse_edit_position(position), c.edits);
  std::cout << format_suggestions(suggestions);
  if (!out.empty()) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& s : suggestions) list.push_back(to_json(s));
    write_json(out, list);
  }
  return 0;
}

int cmd_simulate(const RunConfig& c) {
  const auto model = open_checkpoint(c);
  const ExperimentData data = load_experiment(c);
  const EditSimulationReport r = simulate_edits(*model, data.test, kEditPositions, c.seeds, c.edits, c.threads);
  const fs::path run(c.run_dir);
  write_json(run / "edit_simulation.json", to_json(r));
  write_text_file(run / "edit_simulation.txt", format_simulation_report(r));
  std::cout << format_simulation_report(r);
  return 0;
}

HttpServer* g_server = nullptr;

int cmd_serve(const RunConfig& c, const std::string& host, std::optional<int> port) {
  ServiceOptions options;
  options.edits = c.edits;
  options.default_top_n = c.top_n;
  InferenceService service(open_checkpoint(c), options);
  HttpServer server(service);
  const int bound = server.bind(host.empty() ? c.host : host, port.value_or(c.port));
  std::cerr << "serving model " << service.version() << " on " << (host.empty() ? c.host : host) << ":" << bound
            << (service.model().projected() ? "" : " (not projected: inference endpoints answer 503)") << "\n";
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based email response prediction: training, explanation and edit suggestions"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  Common common;

  auto* ingest = app.add_subcommand("ingest", "load a corpus (synthetic, generic line file or maildir) into the store");
  std::string ingest_out;
  ingest->add_option("--out", ingest_out, "store directory (default <run_dir>/corpus)");

  auto* parse_prep = app.add_subcommand("parse-prep", "emit sentences for an external parser or import its parses");
  std::string emit, import, parse_out;
  parse_prep->add_option("--emit", emit, "write one JSON line per sentence");
  parse_prep->add_option("--import", import, "CoNLL-U file to validate against the corpus")->check(CLI::ExistingFile);
  parse_prep->add_option("--out", parse_out, "where to write the accepted parses");

  auto* train_cmd = app.add_subcommand("train", "train a model and write its checkpoint");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
  std::string which = "test", eval_out;
  evaluate_cmd->add_option("--split", which, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate_cmd->add_option("--out", eval_out, "output directory (default run_dir)");

  auto* search_cmd = app.add_subcommand("search", "random hyperparameter search");
  auto* ablate_cmd = app.add_subcommand("ablate", "variant or input-component ablation over seeds");
  std::string ablate_kind = "variants";
  ablate_cmd->add_option("--kind", ablate_kind, "variants or components")
      ->check(CLI::IsMember({"variants", "components"}));

  std::string email_id, input, out, position = "main";
  std::optional<int> top_n;
  bool keyphrases = false;
  auto* explain_cmd = app.add_subcommand("explain", "prototype evidence for one email");
  explain_cmd->add_option("--id", email_id, "email id in the configured corpus");
  explain_cmd->add_option("--input", input, "request JSON (subject, body, ...)")->check(CLI::ExistingFile);
  explain_cmd->add_option("--top-n", top_n, "prototypes per granularity");
  explain_cmd->add_option("--out", out, "write the report as JSON");
  explain_cmd->add_flag("--keyphrases", keyphrases, "also extract per-sentence keyphrases");

  auto* suggest_cmd = app.add_subcommand("suggest", "prototype-based edit suggestions for one email");
  suggest_cmd->add_option("--id", email_id, "email id in the configured corpus");
  suggest_cmd->add_option("--input", input, "request JSON (subject, body, ...)")->check(CLI::ExistingFile);
  suggest_cmd->add_option("--position", position, "subject, opening, main or closing")
      ->check(CLI::IsMember({"subject", "opening", "main", "closing"}));
  suggest_cmd->add_option("--out", out, "write suggestions as JSON");

  auto* simulate_cmd = app.add_subcommand("simulate-edits", "flip-ratio simulation on predicted test negatives");

  auto* serve_cmd = app.add_subcommand("serve", "HTTP inference service");
  std::string host;
  std::optional<int> port;
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("--port", port, "port (0 picks a free one)");

  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) add_common(sub, common);

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig c = resolve(common);
    if (ingest->parsed()) return cmd_ingest(c, ingest_out);
    if (parse_prep->parsed()) return cmd_parse_prep(c, emit, import, parse_out);
    if (train_cmd->parsed()) return cmd_train(c);
    if (evaluate_cmd->parsed()) return cmd_evaluate(c, which, eval_out);
    if (search_cmd->parsed()) return cmd_search(c);
    if (ablate_cmd->parsed()) return cmd_ablate(c, ablate_kind);
    if (explain_cmd->parsed()) return cmd_explain(c, email_id, input, top_n, out, keyphrases);
    if (suggest_cmd->parsed()) return cmd_suggest(c, email_id, input, position, out);
    if (simulate_cmd->parsed()) return cmd_simulate(c);
    if (serve_cmd->parsed()) return cmd_serve(c, host, port);
  } catch (const RequestError& e) {
    std::cerr << "error: invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
