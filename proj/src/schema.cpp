#include "lnscope/schema.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lnscope/error.hpp"

namespace lnscope {

namespace {

using json = nlohmann::ordered_json;

constexpr std::string_view kLayerPlaceholder = "{layer}";

struct RoleInfo {
  Role role;
  std::string_view name;
};

constexpr RoleInfo kRoleNames[] = {
    {Role::output_ln_gamma, "output_ln_gamma"},
    {Role::output_ln_beta, "output_ln_beta"},
    {Role::attn_ln_gamma, "attn_ln_gamma"},
    {Role::attn_ln_beta, "attn_ln_beta"},
    {Role::output_dense_weight, "output_dense_weight"},
    {Role::output_dense_bias, "output_dense_bias"},
    {Role::attn_output_dense_bias, "attn_output_dense_bias"},
    {Role::token_embedding, "token_embedding"},
    {Role::position_embedding, "position_embedding"},
    {Role::token_type_embedding, "token_type_embedding"},
    {Role::embedding_ln_gamma, "embedding_ln_gamma"},
    {Role::embedding_ln_beta, "embedding_ln_beta"},
};

std::vector<std::string> split_alternatives(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  std::istringstream in(text);
  while (std::getline(in, current, '|')) {
    if (!current.empty()) out.push_back(current);
  }
  return out;
}

std::string substitute_layer(std::string text, int layer) {
  const auto replacement = std::to_string(layer);
  for (auto pos = text.find(kLayerPlaceholder); pos != std::string::npos;
       pos = text.find(kLayerPlaceholder, pos + replacement.size())) {
    text.replace(pos, kLayerPlaceholder.size(), replacement);
  }
  return text;
}

// Hugging Face BERT-family names, with and without the model prefix.
ModelSchema bert_family(std::string name, std::string_view prefix, int layers, int hidden) {
  ModelSchema schema;
  schema.name = std::move(name);
  schema.hidden_dim = hidden;
  schema.num_layers = layers;
  schema.ln_position = LnPosition::post_ln;
  schema.ln_eps = 1e-12;
  const std::string p(prefix);
  auto layer = [&](std::string_view suffix) {
    const std::string s(suffix);
    return p + ".encoder.layer.{layer}." + s + "|encoder.layer.{layer}." + s;
  };
  auto layer_tf = [&](std::string_view suffix, std::string_view tf_suffix) {
    return layer(suffix) + "|" + p + ".encoder.layer.{layer}." + std::string(tf_suffix);
  };
  auto emb = [&](std::string_view suffix) {
    const std::string s(suffix);
    return p + ".embeddings." + s + "|embeddings." + s;
  };
  schema.component_templates = {
      {Role::output_ln_gamma, layer_tf("output.LayerNorm.weight", "output.LayerNorm.gamma")},
      {Role::output_ln_beta, layer_tf("output.LayerNorm.bias", "output.LayerNorm.beta")},
      {Role::attn_ln_gamma, layer_tf("attention.output.LayerNorm.weight", "attention.output.LayerNorm.gamma")},
      {Role::attn_ln_beta, layer_tf("attention.output.LayerNorm.bias", "attention.output.LayerNorm.beta")},
      {Role::output_dense_weight, layer("output.dense.weight")},
      {Role::output_dense_bias, layer("output.dense.bias")},
      {Role::attn_output_dense_bias, layer("attention.output.dense.bias")},
      {Role::token_embedding, emb("word_embeddings.weight")},
      {Role::position_embedding, emb("position_embeddings.weight")},
      {Role::token_type_embedding, emb("token_type_embeddings.weight")},
      {Role::embedding_ln_gamma, emb("LayerNorm.weight")},
      {Role::embedding_ln_beta, emb("LayerNorm.bias")},
  };
  schema.feature_axes = {
      {Role::output_dense_weight, 0},
      {Role::token_embedding, 1},
      {Role::position_embedding, 1},
      {Role::token_type_embedding, 1},
  };
  return schema;
}

ModelSchema gpt2_large() {
  ModelSchema schema;
  schema.name = "gpt2-large-style";
  schema.hidden_dim = 1280;
  schema.num_layers = 36;
  schema.ln_position = LnPosition::pre_ln;
  schema.ln_eps = 1e-5;
  auto layer = [](std::string_view suffix) {
    const std::string s(suffix);
    return "h.{layer}." + s + "|transformer.h.{layer}." + s;
  };
  schema.component_templates = {
      {Role::attn_ln_gamma, layer("ln_1.weight")},
      {Role::attn_ln_beta, layer("ln_1.bias")},
      {Role::output_ln_gamma, layer("ln_2.weight")},
      {Role::output_ln_beta, layer("ln_2.bias")},
      {Role::output_dense_weight, layer("mlp.c_proj.weight")},
      {Role::output_dense_bias, layer("mlp.c_proj.bias")},
      {Role::attn_output_dense_bias, layer("attn.c_proj.bias")},
      {Role::token_embedding, "wte.weight|transformer.wte.weight"},
      {Role::position_embedding, "wpe.weight|transformer.wpe.weight"},
  };
  // GPT-2 Conv1D stores weights as [in, out].
  schema.feature_axes = {
      {Role::output_dense_weight, 1},
      {Role::token_embedding, 1},
      {Role::position_embedding, 1},
  };
  return schema;
}

}  // namespace

std::string_view role_name(Role role) {
  for (const auto& info : kRoleNames) {
    if (info.role == role) return info.name;
  }
  return "unknown";
}

Role role_from_name(std::string_view name) {
  for (const auto& info : kRoleNames) {
    if (info.name == name) return info.role;
  }
  throw UsageError("unknown component role '" + std::string(name) + "'");
}

bool is_matrix_role(Role role) {
  return role == Role::output_dense_weight || role == Role::token_embedding || role == Role::position_embedding ||
         role == Role::token_type_embedding;
}

std::optional<Role> paired_role(Role role) {
  switch (role) {
    case Role::output_ln_gamma: return Role::output_ln_beta;
    case Role::attn_ln_gamma: return Role::attn_ln_beta;
    case Role::embedding_ln_gamma: return Role::embedding_ln_beta;
    case Role::output_dense_weight: return Role::output_dense_bias;
    default: return std::nullopt;
  }
}

std::string_view ln_position_name(LnPosition position) {
  return position == LnPosition::post_ln ? "post_ln" : "pre_ln";
}

LnPosition ln_position_from_name(std::string_view name) {
  if (name == "post_ln") return LnPosition::post_ln;
  if (name == "pre_ln") return LnPosition::pre_ln;
  throw SchemaError("unknown ln_position '" + std::string(name) + "'");
}

bool ModelSchema::is_layered(Role role) const {
  auto it = component_templates.find(role);
  return it != component_templates.end() && it->second.find(kLayerPlaceholder) != std::string::npos;
}

std::vector<std::string> ModelSchema::candidate_names(const ComponentRef& ref) const {
  auto it = component_templates.find(ref.role);
  if (it == component_templates.end()) {
    throw SchemaError("schema '" + name + "' has no template for role " + std::string(role_name(ref.role)));
  }
  if (ref.layer < 0 || ref.layer >= num_layers) {
    throw SchemaError("layer " + std::to_string(ref.layer) + " out of range [0, " + std::to_string(num_layers) + ")");
  }
  auto names = split_alternatives(it->second);
  for (auto& n : names) n = substitute_layer(std::move(n), ref.layer);
  return names;
}

void ModelSchema::validate() const {
  if (hidden_dim <= 0) throw SchemaError("schema hidden_dim must be positive");
  if (num_layers <= 0) throw SchemaError("schema num_layers must be positive");
  if (!(ln_eps > 0.0)) throw SchemaError("schema ln_eps must be positive");
  for (const auto& [role, axis] : feature_axes) {
    if (axis != 0 && axis != 1) throw SchemaError("feature axis for " + std::string(role_name(role)) + " must be 0 or 1");
  }
  for (const auto& [role, text] : component_templates) {
    if (split_alternatives(text).empty()) throw SchemaError("empty template for " + std::string(role_name(role)));
  }
}

std::string resolve_name(const Checkpoint& checkpoint, const ModelSchema& schema, const ComponentRef& ref) {
  const auto names = schema.candidate_names(ref);
  for (const auto& n : names) {
    if (checkpoint.contains(n)) return n;
  }
  throw SchemaError("no tensor for " + std::string(role_name(ref.role)) + " layer " + std::to_string(ref.layer) +
                    " (tried '" + names.front() + "'" + (names.size() > 1 ? " and alternatives" : "") + ")");
}

const TensorRecord& resolve(const Checkpoint& checkpoint, const ModelSchema& schema, const ComponentRef& ref) {
  const auto& record = checkpoint.tensor(resolve_name(checkpoint, schema, ref));
  const auto m = static_cast<std::int64_t>(schema.hidden_dim);
  const auto& shape = record.shape();
  if (is_matrix_role(ref.role)) {
    auto axis = schema.feature_axes.find(ref.role);
    if (shape.size() != 2) {
      throw SchemaError("'" + record.name() + "' should be a matrix, has rank " + std::to_string(shape.size()));
    }
    if (axis != schema.feature_axes.end() && shape[axis->second] != m) {
      throw SchemaError("'" + record.name() + "' feature axis " + std::to_string(axis->second) + " has size " +
                        std::to_string(shape[axis->second]) + ", expected " + std::to_string(m));
    }
  } else if (shape.size() != 1 || shape[0] != m) {
    throw SchemaError("'" + record.name() + "' should have shape [" + std::to_string(m) + "]");
  }
  return record;
}

std::vector<std::string> preset_names() {
  return {"bert-base-style",  "bert-medium-style",  "bert-small-style", "bert-large-style",
          "mbert-style",      "roberta-base-style", "gpt2-large-style"};
}

ModelSchema preset_schema(std::string_view name) {
  if (name == "bert-base-style") return bert_family("bert-base-style", "bert", 12, 768);
  if (name == "bert-medium-style") return bert_family("bert-medium-style", "bert", 8, 512);
  if (name == "bert-small-style") return bert_family("bert-small-style", "bert", 4, 512);
  if (name == "mbert-style") return bert_family("mbert-style", "bert", 12, 768);
  if (name == "bert-large-style") {
    auto schema = bert_family("bert-large-style", "bert", 24, 1024);
    schema.default_layer_fraction = 1.0 / 3.0;
    return schema;
  }
  if (name == "roberta-base-style") {
    auto schema = bert_family("roberta-base-style", "roberta", 12, 768);
    schema.ln_eps = 1e-5;
    schema.default_k_sigma = 2.0;
    return schema;
  }
  if (name == "gpt2-large-style") return gpt2_large();
  throw UsageError("unknown schema preset '" + std::string(name) + "'");
}

ModelSchema schema_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed schema config: ") + e.what());
  }
  ModelSchema schema;
  try {
    schema.name = doc.value("name", std::string("custom"));
    schema.hidden_dim = doc.at("hidden_dim").get<int>();
    schema.num_layers = doc.at("num_layers").get<int>();
    schema.ln_position = ln_position_from_name(doc.at("ln_position").get<std::string>());
    schema.ln_eps = doc.at("ln_eps").get<double>();
    for (const auto& [key, value] : doc.at("component_templates").items()) {
      schema.component_templates[role_from_name(key)] = value.get<std::string>();
    }
    if (doc.contains("feature_axes")) {
      for (const auto& [key, value] : doc.at("feature_axes").items()) {
        schema.feature_axes[role_from_name(key)] = value.get<int>();
      }
    }
    schema.default_k_sigma = doc.value("default_k_sigma", 3.0);
    schema.default_layer_fraction = doc.value("default_layer_fraction", 0.5);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("invalid schema config: ") + e.what());
  } catch (const UsageError& e) {
    throw SchemaError(std::string("invalid schema config: ") + e.what());
  }
  schema.validate();
  return schema;
}

std::string schema_to_json(const ModelSchema& schema) {
  json doc;
  doc["name"] = schema.name;
  doc["hidden_dim"] = schema.hidden_dim;
  doc["num_layers"] = schema.num_layers;
  doc["ln_position"] = ln_position_name(schema.ln_position);
  doc["ln_eps"] = schema.ln_eps;
  json templates = json::object();
  for (const auto& [role, text] : schema.component_templates) templates[std::string(role_name(role))] = text;
  doc["component_templates"] = std::move(templates);
  json axes = json::object();
  for (const auto& [role, axis] : schema.feature_axes) axes[std::string(role_name(role))] = axis;
  doc["feature_axes"] = std::move(axes);
  doc["default_k_sigma"] = schema.default_k_sigma;
  doc["default_layer_fraction"] = schema.default_layer_fraction;
  return doc.dump(2);
}

ModelSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return schema_from_json(buffer.str());
}

}  // namespace lnscope
