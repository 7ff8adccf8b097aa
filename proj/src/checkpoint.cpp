#include "mailproto/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mailproto {

namespace fs = std::filesystem;

json to_json(const EncoderConfig& c) {
  return json{{"text_encoder_kind", to_string(c.text_encoder_kind)},
              {"pretrained_name", c.pretrained_name},
              {"graph_encoder_kind", to_string(c.graph_encoder_kind)},
              {"d", c.d},
              {"heads", c.heads},
              {"text_layers", c.text_layers},
              {"graph_layers", c.graph_layers},
              {"ffn", c.ffn},
              {"vocab_buckets", c.vocab_buckets},
              {"vocab_salt", c.vocab_salt},
              {"max_document_tokens", c.max_document_tokens},
              {"max_sentence_tokens", c.max_sentence_tokens},
              {"components", c.components.str()}};
}

json to_json(const ModelConfig& c) {
  return json{{"encoder", to_json(c.encoder)},
              {"variant", to_string(c.variant)},
              {"use_prototypes", c.use_prototypes},
              {"j", c.j},
              {"k", c.k},
              {"m", c.m},
              {"lambda1", c.lambda1},
              {"lambda2", c.lambda2},
              {"epsilon", c.epsilon},
              {"aggregation", to_string(c.aggregation)},
              {"init_seed", c.init_seed}};
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

EncoderConfig encoder_config_from_json(const json& j, EncoderConfig c) {
  if (j.contains("text_encoder_kind"))
    c.text_encoder_kind = parse_text_encoder_kind(j.at("text_encoder_kind").get<std::string>());
  read(j, "pretrained_name", c.pretrained_name);
  if (j.contains("graph_encoder_kind"))
    c.graph_encoder_kind = parse_graph_encoder_kind(j.at("graph_encoder_kind").get<std::string>());
  read(j, "d", c.d);
  read(j, "heads", c.heads);
  read(j, "text_layers", c.text_layers);
  read(j, "graph_layers", c.graph_layers);
  read(j, "ffn", c.ffn);
  read(j, "vocab_buckets", c.vocab_buckets);
  read(j, "vocab_salt", c.vocab_salt);
  read(j, "max_document_tokens", c.max_document_tokens);
  read(j, "max_sentence_tokens", c.max_sentence_tokens);
  if (j.contains("components")) c.components = ComponentSet::parse(j.at("components").get<std::string>());
  return c;
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"), c.encoder);
  if (j.contains("variant")) c.variant = parse_view_variant(j.at("variant").get<std::string>());
  read(j, "use_prototypes", c.use_prototypes);
  read(j, "j", c.j);
  read(j, "k", c.k);
  read(j, "m", c.m);
  read(j, "lambda1", c.lambda1);
  read(j, "lambda2", c.lambda2);
  read(j, "epsilon", c.epsilon);
  if (j.contains("aggregation")) c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  read(j, "init_seed", c.init_seed);
  return c;
}

json projection_to_json(const ProjectionRecord& r) {
  std::vector<double> doc(r.source_document.data(), r.source_document.data() + r.source_document.size());
  return json{{"source_id", r.source_id},       {"unit_index", r.unit_index},
              {"surface_text", r.surface_text}, {"distance", r.distance},
              {"source_label", r.source_label}, {"source_subject", r.source_subject},
              {"source_parse", r.source_parse}, {"source_document", doc}};
}

ProjectionRecord projection_from_json(const json& j) {
  ProjectionRecord r;
  r.source_id = j.at("source_id").get<std::string>();
  r.unit_index = j.at("unit_index").get<int>();
  r.surface_text = j.at("surface_text").get<std::string>();
  r.distance = j.at("distance").get<double>();
  r.source_label = j.value("source_label", 0);
  r.source_subject = j.value("source_subject", std::string());
  r.source_parse = j.value("source_parse", std::string());
  const auto doc = j.value("source_document", std::vector<double>{});
  r.source_document = Eigen::Map<const ag::RowVector>(doc.data(), static_cast<Eigen::Index>(doc.size()));
  return r;
}

namespace {

json matrix_to_json(const ag::Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

ag::Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw std::runtime_error("matrix size mismatch");
  ag::Matrix m(rows, cols);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[i++].get<double>();
  return m;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

json prototypes_to_json(const Model& model) {
  json banks = json::array();
  for (Granularity g : kGranularities) {
    const PrototypeBank& bank = model.bank(g);
    if (!bank.vectors) continue;
    json protos = json::array();
    for (int i = 0; i < bank.count(); ++i) {
      const auto row = bank.value().row(i);
      json p{{"id", i},
             {"class", bank.class_of[static_cast<std::size_t>(i)]},
             {"vector", std::vector<double>(row.begin(), row.end())}};
      const auto& rec = bank.projection[static_cast<std::size_t>(i)];
      p["projection"] = rec ? projection_to_json(*rec) : json(nullptr);
      protos.push_back(std::move(p));
    }
    banks.push_back(json{{"granularity", to_string(g)}, {"epsilon", bank.epsilon}, {"prototypes", protos}});
  }
  return json{{"model_version", model.version()}, {"banks", banks}};
}

void save_checkpoint(const Model& model, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.json", to_json(model.config()).dump(2) + "\n");
  json weights = json::object();
  for (const ag::Parameter* p : model.parameters()) weights[p->name] = matrix_to_json(p->value);
  write_text(dir / "weights.json", weights.dump() + "\n");
  write_text(dir / "prototypes.json", prototypes_to_json(model).dump(2) + "\n");
}

std::unique_ptr<Model> load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("checkpoint directory " + dir.string() + " does not exist");
  const ModelConfig config = model_config_from_json(read_json(dir / "config.json"));
  auto model = std::make_unique<Model>(config);
  const json weights = read_json(dir / "weights.json");
  for (ag::Parameter* p : model->parameters()) {
    if (!weights.contains(p->name)) throw std::runtime_error("checkpoint lacks parameter " + p->name);
    ag::Matrix m = matrix_from_json(weights.at(p->name));
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw std::runtime_error("checkpoint parameter " + p->name + " has the wrong shape");
    p->value = std::move(m);
  }
  const json protos = read_json(dir / "prototypes.json");
  for (const auto& b : protos.at("banks")) {
    PrototypeBank& bank = model->bank(parse_granularity(b.at("granularity").get<std::string>()));
    if (!bank.vectors) continue;
    for (const auto& p : b.at("prototypes")) {
      const int id = p.at("id").get<int>();
      if (id < 0 || id >= bank.count()) throw std::runtime_error("prototype id out of range in checkpoint");
      if (!p.at("projection").is_null()) bank.projection[static_cast<std::size_t>(id)] = projection_from_json(p.at("projection"));
    }
  }
  return model;
}

}  // namespace mailproto
