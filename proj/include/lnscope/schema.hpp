#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lnscope/checkpoint.hpp"

namespace lnscope {

enum class LnPosition { post_ln, pre_ln };

// Abstract model components. Templates for per-layer roles contain a
// `{layer}` placeholder; embedding roles are layer-independent.
enum class Role {
  output_ln_gamma,
  output_ln_beta,
  attn_ln_gamma,
  attn_ln_beta,
  output_dense_weight,
  output_dense_bias,
  attn_output_dense_bias,
  token_embedding,
  position_embedding,
  token_type_embedding,
  embedding_ln_gamma,
  embedding_ln_beta,
};

inline constexpr Role kAllRoles[] = {
    Role::output_ln_gamma,    Role::output_ln_beta,       Role::attn_ln_gamma,
    Role::attn_ln_beta,       Role::output_dense_weight,  Role::output_dense_bias,
    Role::attn_output_dense_bias, Role::token_embedding,  Role::position_embedding,
    Role::token_type_embedding,   Role::embedding_ln_gamma, Role::embedding_ln_beta,
};

std::string_view role_name(Role role);
Role role_from_name(std::string_view name);

// Roles whose tensors are matrices (need a feature-axis annotation).
bool is_matrix_role(Role role);

// γ role -> its β partner (and dense weight -> dense bias). Empty if unpaired.
std::optional<Role> paired_role(Role role);

struct ComponentRef {
  Role role;
  int layer = 0;
};

std::string_view ln_position_name(LnPosition position);
LnPosition ln_position_from_name(std::string_view name);

struct ModelSchema {
  std::string name = "custom";
  int hidden_dim = 0;
  int num_layers = 0;
  LnPosition ln_position = LnPosition::post_ln;
  double ln_eps = 1e-12;
  // A template may list alternatives separated by '|'; the first name
  // present in the checkpoint wins.
  std::map<Role, std::string> component_templates;
  // For matrix roles: which axis indexes the hidden (output-feature) dims.
  std::map<Role, int> feature_axes;
  // Detection defaults carried by presets (relaxations for some models).
  double default_k_sigma = 3.0;
  double default_layer_fraction = 0.5;

  bool has_template(Role role) const { return component_templates.count(role) != 0; }
  bool is_layered(Role role) const;

  // Candidate tensor names for (role, layer). Throws SchemaError when the
  // role has no template or the layer is out of range.
  std::vector<std::string> candidate_names(const ComponentRef& ref) const;

  void validate() const;
};

// Resolves a component to its tensor, checking the schema's shape
// invariants: γ/β/bias vectors are [hidden_dim]; matrices carry hidden_dim
// on their annotated feature axis.
const TensorRecord& resolve(const Checkpoint& checkpoint, const ModelSchema& schema, const ComponentRef& ref);

// Name of the tensor `resolve` would return (no shape checks).
std::string resolve_name(const Checkpoint& checkpoint, const ModelSchema& schema, const ComponentRef& ref);

// Built-in presets: bert-base-style, bert-medium-style, bert-small-style,
// bert-large-style, mbert-style, roberta-base-style, gpt2-large-style.
std::vector<std::string> preset_names();
ModelSchema preset_schema(std::string_view name);

// JSON schema config: hidden_dim, num_layers, ln_position, ln_eps,
// component_templates, and optionally feature_axes, name, default_k_sigma,
// default_layer_fraction.
ModelSchema schema_from_json(std::string_view text);
std::string schema_to_json(const ModelSchema& schema);
ModelSchema load_schema(const std::filesystem::path& path);

}  // namespace lnscope
