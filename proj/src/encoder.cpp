#include "lnscope/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"
#include "lnscope/error.hpp"

namespace lnscope {

namespace {

using json = nlohmann::ordered_json;

template <class T>
struct LnCache {
  Mat<T> xhat;
  std::vector<double> rstd;
};

template <class T>
struct LayerCache {
  Mat<T> input;
  Mat<T> q, k, v;
  std::vector<Mat<T>> probs;  // per head, [tokens, tokens]
  Mat<T> context;
  LnCache<T> attn_ln;
  Mat<T> h1;
  Mat<T> ff_pre;  // before GELU
  Mat<T> ff_act;
  LnCache<T> out_ln;
};

template <class T>
struct SequenceCache {
  LnCache<T> emb_ln;
  std::vector<LayerCache<T>> layers;
};

template <class T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Vec<T>& b) {
  Mat<T> y = x * w.transpose();
  y.rowwise() += b.transpose();
  return y;
}

// Row-wise LayerNorm; statistics in double.
template <class T>
Mat<T> layer_norm_rows(const Mat<T>& x, const Vec<T>& gamma, const Vec<T>& beta, double eps, LnCache<T>* cache) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index m = x.cols();
  Mat<T> y(rows, m);
  if (cache) {
    cache->xhat.resize(rows, m);
    cache->rstd.resize(rows);
  }
  for (Eigen::Index r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) sum += x(r, j);
    const double mean = sum / static_cast<double>(m);
    double ss = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double c = x(r, j) - mean;
      ss += c * c;
    }
    const double rstd = 1.0 / std::sqrt(ss / static_cast<double>(m) + eps);
    for (Eigen::Index j = 0; j < m; ++j) {
      const T xhat = static_cast<T>((x(r, j) - mean) * rstd);
      y(r, j) = gamma[j] * xhat + beta[j];
      if (cache) cache->xhat(r, j) = xhat;
    }
    if (cache) cache->rstd[r] = rstd;
  }
  return y;
}

template <class T>
Mat<T> layer_norm_rows_backward(const Mat<T>& dy, const LnCache<T>& cache, const Vec<T>& gamma, Vec<T>& dgamma,
                                Vec<T>& dbeta) {
  const Eigen::Index rows = dy.rows();
  const Eigen::Index m = dy.cols();
  Mat<T> dx(rows, m);
  dgamma += (dy.cwiseProduct(cache.xhat)).colwise().sum().transpose();
  dbeta += dy.colwise().sum().transpose();
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = static_cast<double>(dy(r, j)) * gamma[j];
      mean_d += d;
      mean_dx += d * cache.xhat(r, j);
    }
    mean_d /= static_cast<double>(m);
    mean_dx /= static_cast<double>(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = static_cast<double>(dy(r, j)) * gamma[j];
      dx(r, j) = static_cast<T>(cache.rstd[r] * (d - mean_d - cache.xhat(r, j) * mean_dx));
    }
  }
  return dx;
}

template <class T>
void softmax_rows(Mat<T>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const T mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

void check_ids(const EncoderConfig& config, const std::vector<int>& ids) {
  if (ids.empty()) throw UsageError("empty token sequence");
  if (static_cast<int>(ids.size()) > config.max_seq_len) {
    throw UsageError("sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                     std::to_string(config.max_seq_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= config.vocab_size) throw UsageError("token id " + std::to_string(id) + " out of range");
  }
}

// Full forward for one sequence. Fills `cache` for backward when given and
// `hidden` with every layer's output when given. Returns the last layer.
template <class T>
Mat<T> run_forward(const EncoderParams<T>& p, const std::vector<int>& ids, SequenceCache<T>* cache,
                   std::vector<Mat<T>>* hidden) {
  const auto& cfg = p.config;
  check_ids(cfg, ids);
  const auto tokens = static_cast<Eigen::Index>(ids.size());
  const int m = cfg.hidden_dim;
  const int heads = cfg.num_heads;
  const int dh = m / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<T> emb(tokens, m);
  for (Eigen::Index t = 0; t < tokens; ++t) {
    emb.row(t) = p.token_embedding.row(ids[t]) + p.position_embedding.row(t) + p.token_type_embedding.row(0);
  }
  Mat<T> x = layer_norm_rows(emb, p.emb_ln_gamma, p.emb_ln_beta, cfg.ln_eps, cache ? &cache->emb_ln : nullptr);
  if (hidden) hidden->push_back(x);
  if (cache) cache->layers.resize(p.layers.size());

  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& L = p.layers[li];
    LayerCache<T>* c = cache ? &cache->layers[li] : nullptr;
    Mat<T> q = linear(x, L.query_w, L.query_b);
    Mat<T> k = linear(x, L.key_w, L.key_b);
    Mat<T> v = linear(x, L.value_w, L.value_b);
    Mat<T> context(tokens, m);
    if (c) c->probs.resize(heads);
    for (int h = 0; h < heads; ++h) {
      Mat<T> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
      softmax_rows(s);
      context.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
      if (c) c->probs[h] = std::move(s);
    }
    Mat<T> attn = linear(context, L.attn_out_w, L.attn_out_b);
    attn += x;
    Mat<T> h1 = layer_norm_rows(attn, L.attn_ln_gamma, L.attn_ln_beta, cfg.ln_eps, c ? &c->attn_ln : nullptr);
    Mat<T> pre = linear(h1, L.ff_in_w, L.ff_in_b);
    Mat<T> act = pre.unaryExpr([](T u) { return static_cast<T>(gelu(u)); });
    Mat<T> ff = linear(act, L.ff_out_w, L.ff_out_b);
    ff += h1;
    Mat<T> y = layer_norm_rows(ff, L.out_ln_gamma, L.out_ln_beta, cfg.ln_eps, c ? &c->out_ln : nullptr);
    if (c) {
      c->input = std::move(x);
      c->q = std::move(q);
      c->k = std::move(k);
      c->v = std::move(v);
      c->context = std::move(context);
      c->h1 = std::move(h1);
      c->ff_pre = std::move(pre);
      c->ff_act = std::move(act);
    }
    if (hidden) hidden->push_back(y);
    x = std::move(y);
  }
  return x;
}

template <class T>
void check_example(const EncoderConfig& cfg, const MlmExample& ex) {
  if (ex.positions.size() != ex.labels.size()) throw UsageError("masked positions and labels differ in length");
  for (std::size_t i = 0; i < ex.positions.size(); ++i) {
    if (ex.positions[i] < 0 || ex.positions[i] >= static_cast<int>(ex.input_ids.size())) {
      throw UsageError("masked position out of range");
    }
    if (ex.labels[i] < 0 || ex.labels[i] >= cfg.vocab_size) throw UsageError("label out of vocabulary range");
  }
}

template <class T>
Mat<T> head_logits(const EncoderParams<T>& p, const Mat<T>& last, const std::vector<int>& positions, Mat<T>* gathered) {
  Mat<T> rows(static_cast<Eigen::Index>(positions.size()), p.config.hidden_dim);
  for (std::size_t i = 0; i < positions.size(); ++i) rows.row(i) = last.row(positions[i]);
  Mat<T> logits = linear(rows, p.decoder, p.decoder_bias);
  if (gathered) *gathered = std::move(rows);
  return logits;
}

// Cross-entropy of one logits row against `label`, in double.
template <class T>
double row_cross_entropy(const Mat<T>& logits, Eigen::Index r, int label) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.cols(); ++j) mx = std::max(mx, static_cast<double>(logits(r, j)));
  double sum = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += std::exp(static_cast<double>(logits(r, j)) - mx);
  return mx + std::log(sum) - static_cast<double>(logits(r, label));
}

template <class T>
void backward_sequence(const EncoderParams<T>& p, const std::vector<int>& ids, const SequenceCache<T>& cache,
                       Mat<T> dx, EncoderParams<T>& g) {
  const auto& cfg = p.config;
  const int m = cfg.hidden_dim;
  const int heads = cfg.num_heads;
  const int dh = m / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& L = p.layers[li];
    auto& G = g.layers[li];
    const auto& c = cache.layers[li];

    // y = LN(h1 + ff)
    Mat<T> d_ff = layer_norm_rows_backward(dx, c.out_ln, L.out_ln_gamma, G.out_ln_gamma, G.out_ln_beta);
    Mat<T> d_h1 = d_ff;
    G.ff_out_w += d_ff.transpose() * c.ff_act;
    G.ff_out_b += d_ff.colwise().sum().transpose();
    Mat<T> d_act = d_ff * L.ff_out_w;
    Mat<T> d_pre = d_act.cwiseProduct(c.ff_pre.unaryExpr([](T u) { return static_cast<T>(gelu_grad(u)); }));
    G.ff_in_w += d_pre.transpose() * c.h1;
    G.ff_in_b += d_pre.colwise().sum().transpose();
    d_h1 += d_pre * L.ff_in_w;

    // h1 = LN(x + attn)
    Mat<T> d_attn = layer_norm_rows_backward(d_h1, c.attn_ln, L.attn_ln_gamma, G.attn_ln_gamma, G.attn_ln_beta);
    Mat<T> d_x = d_attn;
    G.attn_out_w += d_attn.transpose() * c.context;
    G.attn_out_b += d_attn.colwise().sum().transpose();
    Mat<T> d_context = d_attn * L.attn_out_w;

    Mat<T> dq(c.q.rows(), m), dk(c.k.rows(), m), dv(c.v.rows(), m);
    for (int h = 0; h < heads; ++h) {
      const auto& probs = c.probs[h];
      const auto d_out = d_context.middleCols(h * dh, dh);
      Mat<T> d_probs = d_out * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = probs.transpose() * d_out;
      // softmax backward: ds = p * (dp - sum(dp * p))
      Vec<T> dot = (d_probs.cwiseProduct(probs)).rowwise().sum();
      Mat<T> d_scores = probs.cwiseProduct(d_probs.colwise() - dot) * scale;
      dq.middleCols(h * dh, dh) = d_scores * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = d_scores.transpose() * c.q.middleCols(h * dh, dh);
    }
    G.query_w += dq.transpose() * c.input;
    G.query_b += dq.colwise().sum().transpose();
    G.key_w += dk.transpose() * c.input;
    G.key_b += dk.colwise().sum().transpose();
    G.value_w += dv.transpose() * c.input;
    G.value_b += dv.colwise().sum().transpose();
    d_x += dq * L.query_w + dk * L.key_w + dv * L.value_w;
    dx = std::move(d_x);
  }

  Mat<T> d_emb = layer_norm_rows_backward(dx, cache.emb_ln, p.emb_ln_gamma, g.emb_ln_gamma, g.emb_ln_beta);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    g.token_embedding.row(ids[t]) += d_emb.row(t);
    g.position_embedding.row(t) += d_emb.row(t);
    g.token_type_embedding.row(0) += d_emb.row(t);
  }
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * std::exp(-0.5 * x * x) * inv_sqrt_2pi;
}

void EncoderConfig::validate() const {
  if (num_layers <= 0 || hidden_dim <= 0 || num_heads <= 0 || ff_dim <= 0 || vocab_size <= 0 || max_seq_len <= 0 ||
      num_token_types <= 0) {
    throw UsageError("encoder config sizes must be positive");
  }
  if (hidden_dim % num_heads != 0) throw UsageError("hidden_dim must be divisible by num_heads");
  if (!(ln_eps > 0.0)) throw UsageError("ln_eps must be positive");
}

std::string EncoderConfig::to_json() const {
  json doc{{"num_layers", num_layers},   {"hidden_dim", hidden_dim},   {"num_heads", num_heads},
           {"ff_dim", ff_dim},           {"vocab_size", vocab_size},   {"max_seq_len", max_seq_len},
           {"num_token_types", num_token_types}, {"ln_eps", ln_eps}};
  return doc.dump();
}

EncoderConfig EncoderConfig::from_json(std::string_view text) {
  EncoderConfig c;
  try {
    const auto doc = json::parse(text);
    c.num_layers = doc.at("num_layers").get<int>();
    c.hidden_dim = doc.at("hidden_dim").get<int>();
    c.num_heads = doc.at("num_heads").get<int>();
    c.ff_dim = doc.at("ff_dim").get<int>();
    c.vocab_size = doc.at("vocab_size").get<int>();
    c.max_seq_len = doc.at("max_seq_len").get<int>();
    c.num_token_types = doc.value("num_token_types", 2);
    c.ln_eps = doc.at("ln_eps").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed encoder config: ") + e.what());
  }
  c.validate();
  return c;
}

template <class T>
EncoderParams<T> EncoderParams<T>::zeros(const EncoderConfig& config) {
  config.validate();
  const int m = config.hidden_dim;
  const int ff = config.ff_dim;
  EncoderParams p;
  p.config = config;
  p.token_embedding = Mat<T>::Zero(config.vocab_size, m);
  p.position_embedding = Mat<T>::Zero(config.max_seq_len, m);
  p.token_type_embedding = Mat<T>::Zero(config.num_token_types, m);
  p.emb_ln_gamma = Vec<T>::Zero(m);
  p.emb_ln_beta = Vec<T>::Zero(m);
  p.layers.resize(config.num_layers);
  for (auto& L : p.layers) {
    for (auto* w : {&L.query_w, &L.key_w, &L.value_w, &L.attn_out_w}) *w = Mat<T>::Zero(m, m);
    for (auto* b : {&L.query_b, &L.key_b, &L.value_b, &L.attn_out_b, &L.attn_ln_gamma, &L.attn_ln_beta, &L.ff_out_b,
                    &L.out_ln_gamma, &L.out_ln_beta}) {
      *b = Vec<T>::Zero(m);
    }
    L.ff_in_w = Mat<T>::Zero(ff, m);
    L.ff_in_b = Vec<T>::Zero(ff);
    L.ff_out_w = Mat<T>::Zero(m, ff);
  }
  p.decoder = Mat<T>::Zero(config.vocab_size, m);
  p.decoder_bias = Vec<T>::Zero(config.vocab_size);
  return p;
}

template <class T>
EncoderParams<T> EncoderParams<T>::initialize(const EncoderConfig& config, std::uint64_t seed) {
  auto p = zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& slot : param_slots(p)) {
    const bool is_ln = slot.name.find("LayerNorm") != std::string::npos;
    if (is_ln) {
      if (slot.name.ends_with(".weight")) std::fill_n(slot.data, slot.size, T(1));
      continue;
    }
    if (slot.shape.size() != 2) continue;
    for (std::size_t i = 0; i < slot.size; ++i) {
      double v = normal(rng);
      while (std::abs(v) > 0.04) v = normal(rng);
      slot.data[i] = static_cast<T>(v);
    }
  }
  return p;
}

template <class T>
template <class U>
EncoderParams<U> EncoderParams<T>::cast() const {
  auto out = EncoderParams<U>::zeros(config);
  auto src = param_slots(*this);
  auto dst = param_slots(out);
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t j = 0; j < src[i].size; ++j) dst[i].data[j] = static_cast<U>(src[i].data[j]);
  }
  return out;
}

template <class T>
std::size_t EncoderParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : param_slots(*this)) n += s.size;
  return n;
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template EncoderParams<double> EncoderParams<float>::cast<double>() const;
template EncoderParams<float> EncoderParams<double>::cast<float>() const;
template EncoderParams<float> EncoderParams<float>::cast<float>() const;
template EncoderParams<double> EncoderParams<double>::cast<double>() const;

ModelSchema mini_encoder_schema(const EncoderConfig& config) {
  ModelSchema schema;
  schema.name = "mini-encoder";
  schema.hidden_dim = config.hidden_dim;
  schema.num_layers = config.num_layers;
  schema.ln_position = LnPosition::post_ln;
  schema.ln_eps = config.ln_eps;
  const std::string p = "encoder.layer.{layer}.";
  schema.component_templates = {
      {Role::output_ln_gamma, p + "output.LayerNorm.weight"},
      {Role::output_ln_beta, p + "output.LayerNorm.bias"},
      {Role::attn_ln_gamma, p + "attention.output.LayerNorm.weight"},
      {Role::attn_ln_beta, p + "attention.output.LayerNorm.bias"},
      {Role::output_dense_weight, p + "output.dense.weight"},
      {Role::output_dense_bias, p + "output.dense.bias"},
      {Role::attn_output_dense_bias, p + "attention.output.dense.bias"},
      {Role::token_embedding, "embeddings.word_embeddings.weight"},
      {Role::position_embedding, "embeddings.position_embeddings.weight"},
      {Role::token_type_embedding, "embeddings.token_type_embeddings.weight"},
      {Role::embedding_ln_gamma, "embeddings.LayerNorm.weight"},
      {Role::embedding_ln_beta, "embeddings.LayerNorm.bias"},
  };
  schema.feature_axes = {
      {Role::output_dense_weight, 0},
      {Role::token_embedding, 1},
      {Role::position_embedding, 1},
      {Role::token_type_embedding, 1},
  };
  return schema;
}

Checkpoint params_to_checkpoint(const EncoderParams<float>& params) {
  Checkpoint checkpoint;
  for (const auto& slot : param_slots(params)) {
    checkpoint.put(TensorRecord::from_floats(slot.name, slot.shape, std::span<const float>(slot.data, slot.size)));
  }
  checkpoint.metadata()[kMetaFormat] = "mini-encoder";
  checkpoint.metadata()[kMetaConfig] = params.config.to_json();
  return checkpoint;
}

bool is_mini_encoder_checkpoint(const Checkpoint& checkpoint) {
  auto it = checkpoint.metadata().find(kMetaFormat);
  return it != checkpoint.metadata().end() && it->second == "mini-encoder" &&
         checkpoint.metadata().count(kMetaConfig) != 0;
}

EncoderConfig config_from_checkpoint(const Checkpoint& checkpoint) {
  if (!is_mini_encoder_checkpoint(checkpoint)) throw DataError("checkpoint carries no mini-encoder metadata");
  return EncoderConfig::from_json(checkpoint.metadata().find(kMetaConfig)->second);
}

EncoderParams<float> params_from_checkpoint(const Checkpoint& checkpoint) {
  auto params = EncoderParams<float>::zeros(config_from_checkpoint(checkpoint));
  for (auto& slot : param_slots(params)) {
    const auto& record = checkpoint.tensor(slot.name);
    if (record.shape() != slot.shape) throw DataError("tensor '" + slot.name + "' has an unexpected shape");
    const auto values = record.to_floats();
    std::copy(values.begin(), values.end(), slot.data);
  }
  return params;
}

template <class T>
std::vector<Mat<T>> encoder_forward(const EncoderParams<T>& params, const std::vector<int>& token_ids) {
  std::vector<Mat<T>> hidden;
  hidden.reserve(params.layers.size() + 1);
  run_forward<T>(params, token_ids, nullptr, &hidden);
  return hidden;
}

template <class T>
Mat<T> mlm_logits(const EncoderParams<T>& params, const MlmExample& example) {
  check_example<T>(params.config, example);
  const Mat<T> last = run_forward<T>(params, example.input_ids, nullptr, nullptr);
  return head_logits<T>(params, last, example.positions, nullptr);
}

template <class T>
LossSum mlm_loss_sum(const EncoderParams<T>& params, const MlmExample& example) {
  LossSum out;
  if (example.positions.empty()) return out;
  const Mat<T> logits = mlm_logits(params, example);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out.ce_sum += row_cross_entropy(logits, r, example.labels[r]);
  out.count = logits.rows();
  if (!std::isfinite(out.ce_sum)) throw NumericError("non-finite cross-entropy");
  return out;
}

template <class T>
double mlm_loss(const EncoderParams<T>& params, const MlmBatch& batch) {
  LossSum total;
  for (const auto& ex : batch) {
    const auto s = mlm_loss_sum(params, ex);
    total.ce_sum += s.ce_sum;
    total.count += s.count;
  }
  if (total.count == 0) throw UsageError("batch has no masked positions");
  return total.mean();
}

template <class T>
double mlm_loss_and_grad(const EncoderParams<T>& params, const MlmBatch& batch, EncoderParams<T>& grads) {
  std::int64_t total = 0;
  for (const auto& ex : batch) {
    check_example<T>(params.config, ex);
    total += static_cast<std::int64_t>(ex.positions.size());
  }
  if (total == 0) throw UsageError("batch has no masked positions");
  grads = EncoderParams<T>::zeros(params.config);
  const T inv_total = static_cast<T>(1.0 / static_cast<double>(total));

  double ce_sum = 0.0;
  for (const auto& ex : batch) {
    if (ex.positions.empty()) continue;
    SequenceCache<T> cache;
    const Mat<T> last = run_forward<T>(params, ex.input_ids, &cache, nullptr);
    Mat<T> rows;
    Mat<T> logits = head_logits(params, last, ex.positions, &rows);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) ce_sum += row_cross_entropy(logits, r, ex.labels[r]);

    Mat<T> d_logits = logits;
    softmax_rows(d_logits);
    for (Eigen::Index r = 0; r < d_logits.rows(); ++r) d_logits(r, ex.labels[r]) -= T(1);
    d_logits *= inv_total;
    grads.decoder += d_logits.transpose() * rows;
    grads.decoder_bias += d_logits.colwise().sum().transpose();
    const Mat<T> d_rows = d_logits * params.decoder;

    Mat<T> d_last = Mat<T>::Zero(last.rows(), last.cols());
    for (std::size_t i = 0; i < ex.positions.size(); ++i) d_last.row(ex.positions[i]) += d_rows.row(i);
    backward_sequence(params, ex.input_ids, cache, std::move(d_last), grads);
  }
  const double loss = ce_sum / static_cast<double>(total);
  if (!std::isfinite(loss)) throw NumericError("non-finite cross-entropy");
  return loss;
}

template <class T>
void zero_frozen(EncoderParams<T>& grads, const FrozenSet& frozen) {
  if (frozen.empty()) return;
  for (auto& slot : param_slots(grads)) {
    auto it = frozen.find(slot.name);
    if (it == frozen.end()) continue;
    for (auto i : it->second) {
      if (i < slot.size) slot.data[i] = T(0);
    }
  }
}

template std::vector<Mat<float>> encoder_forward(const EncoderParams<float>&, const std::vector<int>&);
template std::vector<Mat<double>> encoder_forward(const EncoderParams<double>&, const std::vector<int>&);
template Mat<float> mlm_logits(const EncoderParams<float>&, const MlmExample&);
template Mat<double> mlm_logits(const EncoderParams<double>&, const MlmExample&);
template LossSum mlm_loss_sum(const EncoderParams<float>&, const MlmExample&);
template LossSum mlm_loss_sum(const EncoderParams<double>&, const MlmExample&);
template double mlm_loss(const EncoderParams<float>&, const MlmBatch&);
template double mlm_loss(const EncoderParams<double>&, const MlmBatch&);
template double mlm_loss_and_grad(const EncoderParams<float>&, const MlmBatch&, EncoderParams<float>&);
template double mlm_loss_and_grad(const EncoderParams<double>&, const MlmBatch&, EncoderParams<double>&);
template void zero_frozen(EncoderParams<float>&, const FrozenSet&);
template void zero_frozen(EncoderParams<double>&, const FrozenSet&);

}  // namespace lnscope
