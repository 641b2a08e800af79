#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lnscope/checkpoint.hpp"
#include "lnscope/schema.hpp"

namespace lnscope {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct EncoderConfig {
  int num_layers = 2;
  int hidden_dim = 64;
  int num_heads = 4;
  int ff_dim = 256;
  int vocab_size = 1000;
  int max_seq_len = 128;
  int num_token_types = 2;
  double ln_eps = 1e-12;

  void validate() const;
  std::string to_json() const;
  static EncoderConfig from_json(std::string_view text);
};

// Weights follow the [out, in] convention: y = W x + b.
template <class T>
struct LayerParams {
  Mat<T> query_w, key_w, value_w, attn_out_w;  // [m, m]
  Vec<T> query_b, key_b, value_b, attn_out_b;  // [m]
  Vec<T> attn_ln_gamma, attn_ln_beta;
  Mat<T> ff_in_w;   // [ff, m]
  Vec<T> ff_in_b;   // [ff]
  Mat<T> ff_out_w;  // [m, ff]
  Vec<T> ff_out_b;  // [m]
  Vec<T> out_ln_gamma, out_ln_beta;
};

template <class T>
struct EncoderParams {
  EncoderConfig config;
  Mat<T> token_embedding;       // [V, m]
  Mat<T> position_embedding;    // [max_seq_len, m]
  Mat<T> token_type_embedding;  // [types, m]
  Vec<T> emb_ln_gamma, emb_ln_beta;
  std::vector<LayerParams<T>> layers;
  Mat<T> decoder;       // [V, m]
  Vec<T> decoder_bias;  // [V]

  // All tensors allocated and zero-filled.
  static EncoderParams zeros(const EncoderConfig& config);
  // Truncated normal (std 0.02, cut at 2 std) for matrices, zero biases,
  // γ = 1 and β = 0 for every LayerNorm.
  static EncoderParams initialize(const EncoderConfig& config, std::uint64_t seed);

  template <class U>
  EncoderParams<U> cast() const;

  std::size_t parameter_count() const;
};

// Visits every tensor with its canonical checkpoint name. The visitor gets
// (const std::string& name, auto& eigen_object).
template <class Params, class Visitor>
void visit_params(Params& params, Visitor&& visit) {
  visit(std::string("embeddings.word_embeddings.weight"), params.token_embedding);
  visit(std::string("embeddings.position_embeddings.weight"), params.position_embedding);
  visit(std::string("embeddings.token_type_embeddings.weight"), params.token_type_embedding);
  visit(std::string("embeddings.LayerNorm.weight"), params.emb_ln_gamma);
  visit(std::string("embeddings.LayerNorm.bias"), params.emb_ln_beta);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& layer = params.layers[i];
    const std::string p = "encoder.layer." + std::to_string(i) + ".";
    visit(p + "attention.self.query.weight", layer.query_w);
    visit(p + "attention.self.query.bias", layer.query_b);
    visit(p + "attention.self.key.weight", layer.key_w);
    visit(p + "attention.self.key.bias", layer.key_b);
    visit(p + "attention.self.value.weight", layer.value_w);
    visit(p + "attention.self.value.bias", layer.value_b);
    visit(p + "attention.output.dense.weight", layer.attn_out_w);
    visit(p + "attention.output.dense.bias", layer.attn_out_b);
    visit(p + "attention.output.LayerNorm.weight", layer.attn_ln_gamma);
    visit(p + "attention.output.LayerNorm.bias", layer.attn_ln_beta);
    visit(p + "intermediate.dense.weight", layer.ff_in_w);
    visit(p + "intermediate.dense.bias", layer.ff_in_b);
    visit(p + "output.dense.weight", layer.ff_out_w);
    visit(p + "output.dense.bias", layer.ff_out_b);
    visit(p + "output.LayerNorm.weight", layer.out_ln_gamma);
    visit(p + "output.LayerNorm.bias", layer.out_ln_beta);
  }
  visit(std::string("cls.predictions.decoder.weight"), params.decoder);
  visit(std::string("cls.predictions.bias"), params.decoder_bias);
}

// Flat view of one parameter tensor.
template <class T>
struct TensorSlot {
  std::string name;
  std::vector<std::int64_t> shape;
  T* data;
  std::size_t size;
};

namespace detail {
template <class Element, class Params>
std::vector<TensorSlot<Element>> collect_slots(Params& params) {
  std::vector<TensorSlot<Element>> slots;
  visit_params(params, [&](const std::string& name, auto& tensor) {
    using Tensor = std::decay_t<decltype(tensor)>;
    std::vector<std::int64_t> shape{static_cast<std::int64_t>(tensor.rows())};
    if constexpr (Tensor::ColsAtCompileTime != 1) shape.push_back(static_cast<std::int64_t>(tensor.cols()));
    slots.push_back({name, std::move(shape), tensor.data(), static_cast<std::size_t>(tensor.size())});
  });
  return slots;
}
}  // namespace detail

// Every tensor in canonical order (the order `visit_params` uses).
template <class T>
std::vector<TensorSlot<T>> param_slots(EncoderParams<T>& params) {
  return detail::collect_slots<T>(params);
}

template <class T>
std::vector<TensorSlot<const T>> param_slots(const EncoderParams<T>& params) {
  return detail::collect_slots<const T>(params);
}

// Schema matching the canonical tensor names above.
ModelSchema mini_encoder_schema(const EncoderConfig& config);

// Checkpoint metadata keys written alongside the tensors.
inline constexpr const char* kMetaFormat = "lnscope.format";
inline constexpr const char* kMetaConfig = "lnscope.config";
inline constexpr const char* kMetaStep = "lnscope.step";
inline constexpr const char* kMetaVocab = "lnscope.vocab";

Checkpoint params_to_checkpoint(const EncoderParams<float>& params);
EncoderParams<float> params_from_checkpoint(const Checkpoint& checkpoint);
// True when the checkpoint carries mini-encoder metadata.
bool is_mini_encoder_checkpoint(const Checkpoint& checkpoint);
EncoderConfig config_from_checkpoint(const Checkpoint& checkpoint);

// One MLM training/eval example: inputs with [MASK] already substituted,
// the masked positions and the original token ids there.
struct MlmExample {
  std::vector<int> input_ids;
  std::vector<int> positions;
  std::vector<int> labels;
};

using MlmBatch = std::vector<MlmExample>;

// Hidden states for one sequence: entry 0 is the embedding LayerNorm
// output, entry i + 1 the output LayerNorm of encoder layer i. Each is
// [tokens, m].
template <class T>
std::vector<Mat<T>> encoder_forward(const EncoderParams<T>& params, const std::vector<int>& token_ids);

// [positions, V] logits of the MLM head at the masked positions.
template <class T>
Mat<T> mlm_logits(const EncoderParams<T>& params, const MlmExample& example);

struct LossSum {
  double ce_sum = 0.0;
  std::int64_t count = 0;
  double mean() const { return count == 0 ? 0.0 : ce_sum / static_cast<double>(count); }
};

// Summed natural-log cross-entropy over the masked positions of one example.
template <class T>
LossSum mlm_loss_sum(const EncoderParams<T>& params, const MlmExample& example);

// Mean cross-entropy over every masked position in the batch.
template <class T>
double mlm_loss(const EncoderParams<T>& params, const MlmBatch& batch);

// Mean cross-entropy and its analytic gradient w.r.t. every parameter.
// `grads` is resized/zeroed by the call.
template <class T>
double mlm_loss_and_grad(const EncoderParams<T>& params, const MlmBatch& batch, EncoderParams<T>& grads);

// Element-level freezing: tensor name -> flat indices excluded from updates.
using FrozenSet = std::map<std::string, std::vector<std::size_t>>;

template <class T>
void zero_frozen(EncoderParams<T>& grads, const FrozenSet& frozen);

double gelu(double x);
double gelu_grad(double x);

}  // namespace lnscope
