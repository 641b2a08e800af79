#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "lnscope/error.hpp"
#include "lnscope/schema.hpp"
#include "lnscope/train.hpp"

using namespace lnscope;

namespace {

ModelSchema tiny_schema() {
  ModelSchema schema;
  schema.hidden_dim = 4;
  schema.num_layers = 2;
  schema.component_templates[Role::output_ln_gamma] = "encoder.{layer}.out_ln.gamma";
  return schema;
}

Checkpoint tiny_checkpoint() {
  Checkpoint ckpt;
  for (int l = 0; l < 2; ++l) {
    ckpt.put(TensorRecord::from_floats("encoder." + std::to_string(l) + ".out_ln.gamma", {4}, std::vector<float>(4, 1.0f)));
  }
  return ckpt;
}

}  // namespace

TEST(Schema, SubstitutesLayerIntoTemplate) {
  const auto schema = tiny_schema();
  const auto ckpt = tiny_checkpoint();
  EXPECT_EQ(resolve(ckpt, schema, {Role::output_ln_gamma, 0}).name(), "encoder.0.out_ln.gamma");
  EXPECT_EQ(resolve_name(ckpt, schema, {Role::output_ln_gamma, 1}), "encoder.1.out_ln.gamma");
}

TEST(Schema, MissingTemplateIsAnError) {
  EXPECT_THROW(resolve(tiny_checkpoint(), tiny_schema(), {Role::output_ln_beta, 0}), SchemaError);
}

TEST(Schema, LayerOutOfRangeAndMissingTensor) {
  const auto schema = tiny_schema();
  EXPECT_THROW(resolve(tiny_checkpoint(), schema, {Role::output_ln_gamma, 2}), SchemaError);
  EXPECT_THROW(resolve(tiny_checkpoint(), schema, {Role::output_ln_gamma, -1}), SchemaError);
  Checkpoint partial;
  EXPECT_THROW(resolve(partial, schema, {Role::output_ln_gamma, 0}), SchemaError);
}

TEST(Schema, ShapeMismatchIsAnError) {
  auto schema = tiny_schema();
  schema.hidden_dim = 5;
  EXPECT_THROW(resolve(tiny_checkpoint(), schema, {Role::output_ln_gamma, 0}), SchemaError);
}

TEST(Schema, SyntheticLayersAllHaveShapeM) {
  testkit::SyntheticSpec spec;
  const auto ckpt = testkit::synthetic_checkpoint(spec);
  const auto schema = testkit::synthetic_schema(spec.num_layers, spec.hidden_dim);
  for (int l = 0; l < spec.num_layers; ++l) {
    EXPECT_EQ(resolve(ckpt, schema, {Role::output_ln_gamma, l}).shape(), (std::vector<std::int64_t>{spec.hidden_dim}));
  }
  const auto& dense = resolve(ckpt, schema, {Role::output_dense_weight, 3});
  EXPECT_EQ(dense.shape(), (std::vector<std::int64_t>{spec.hidden_dim, spec.ff_dim}));
}

TEST(Schema, ResolutionTotality) {
  // resolve succeeds exactly for declared (role, layer) pairs
  testkit::SyntheticSpec spec;
  spec.num_layers = 3;
  const auto ckpt = testkit::synthetic_checkpoint(spec);
  auto schema = testkit::synthetic_schema(3, spec.hidden_dim);
  schema.component_templates.erase(Role::attn_ln_beta);
  int ok = 0;
  int failed = 0;
  for (Role role : {Role::output_ln_gamma, Role::output_ln_beta, Role::attn_ln_gamma, Role::attn_ln_beta}) {
    for (int layer = -1; layer <= 3; ++layer) {
      try {
        resolve(ckpt, schema, {role, layer});
        ++ok;
      } catch (const SchemaError&) {
        ++failed;
      }
    }
  }
  EXPECT_EQ(ok, 3 * 3);
  EXPECT_EQ(failed, 4 * 5 - 9);
}

TEST(Schema, AlternativeNamesResolve) {
  const auto schema = preset_schema("bert-base-style");
  Checkpoint ckpt;
  ckpt.put(TensorRecord::from_floats("encoder.layer.0.output.LayerNorm.weight", {768}, std::vector<float>(768, 1.0f)));
  EXPECT_EQ(resolve_name(ckpt, schema, {Role::output_ln_gamma, 0}), "encoder.layer.0.output.LayerNorm.weight");
}

TEST(Schema, Presets) {
  const auto base = preset_schema("bert-base-style");
  EXPECT_EQ(base.num_layers, 12);
  EXPECT_EQ(base.hidden_dim, 768);
  EXPECT_EQ(base.ln_position, LnPosition::post_ln);
  const auto medium = preset_schema("bert-medium-style");
  EXPECT_EQ(medium.num_layers, 8);
  EXPECT_EQ(medium.hidden_dim, 512);
  const auto large = preset_schema("bert-large-style");
  EXPECT_EQ(large.num_layers, 24);
  EXPECT_NEAR(large.default_layer_fraction, 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(preset_schema("roberta-base-style").default_k_sigma, 2.0);
  EXPECT_EQ(preset_schema("gpt2-large-style").ln_position, LnPosition::pre_ln);
  EXPECT_THROW(preset_schema("nope"), UsageError);
  for (const auto& name : preset_names()) EXPECT_NO_THROW(preset_schema(name).validate());
}

TEST(Schema, JsonRoundTripAndFile) {
  const auto schema = preset_schema("gpt2-large-style");
  const auto back = schema_from_json(schema_to_json(schema));
  EXPECT_EQ(schema_to_json(back), schema_to_json(schema));
  const auto dir = testkit::temp_dir("schema");
  const auto path = std::filesystem::path(dir) / "schema.json";
  write_text_file(path, schema_to_json(schema));
  EXPECT_EQ(load_schema(path).num_layers, 36);
  std::filesystem::remove_all(dir);
}

TEST(Schema, InvalidConfigs) {
  EXPECT_THROW(schema_from_json("{"), SchemaError);
  EXPECT_THROW(schema_from_json(R"({"hidden_dim": 4})"), SchemaError);
  EXPECT_THROW(schema_from_json(
                   R"({"hidden_dim":4,"num_layers":1,"ln_position":"post_ln","ln_eps":0,"component_templates":{}})"),
               SchemaError);
  EXPECT_THROW(schema_from_json(
                   R"({"hidden_dim":4,"num_layers":1,"ln_position":"sideways","ln_eps":1e-5,"component_templates":{}})"),
               SchemaError);
  EXPECT_THROW(schema_from_json(
                   R"({"hidden_dim":4,"num_layers":1,"ln_position":"post_ln","ln_eps":1e-5,"component_templates":{"bogus":"x"}})"),
               SchemaError);
}

TEST(Schema, RoleNames) {
  for (Role role : kAllRoles) EXPECT_EQ(role_from_name(role_name(role)), role);
  EXPECT_EQ(paired_role(Role::output_ln_gamma), Role::output_ln_beta);
  EXPECT_EQ(paired_role(Role::attn_ln_gamma), Role::attn_ln_beta);
  EXPECT_FALSE(paired_role(Role::output_ln_beta).has_value());
  EXPECT_TRUE(is_matrix_role(Role::output_dense_weight));
  EXPECT_FALSE(is_matrix_role(Role::output_ln_gamma));
}
