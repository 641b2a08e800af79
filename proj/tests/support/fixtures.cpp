#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <unistd.h>

namespace lnscope::testkit {

ModelSchema synthetic_schema(int num_layers, int hidden_dim) {
  auto schema = preset_schema("bert-base-style");
  schema.name = "synthetic";
  schema.num_layers = num_layers;
  schema.hidden_dim = hidden_dim;
  return schema;
}

std::vector<float> vector_with_stats(int m, double mean, double std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(m);
  for (auto& x : v) x = normal(rng);
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= m;
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  const double sd = std::sqrt(ss / m);
  std::vector<float> out(m);
  for (int i = 0; i < m; ++i) out[i] = static_cast<float>(mean + std * (v[i] - mu) / sd);
  return out;
}

std::vector<float> vector_with_z(int m, double mean, double std, const std::map<int, double>& pinned, double bound,
                                 std::uint64_t seed) {
  const int n = m - static_cast<int>(pinned.size());
  double t_sum = 0.0, t_sq = 0.0;
  for (const auto& [i, t] : pinned) {
    t_sum += t;
    t_sq += t * t;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  std::vector<double> e(n);
  double mu = 0.0;
  for (auto& x : e) mu += (x = uniform(rng));
  mu /= n;
  double energy = 0.0;
  for (auto& x : e) energy += (x -= mu) * x;
  // rest = c + s * e with sum(z) = 0 and sum(z^2) = m
  const double c = -t_sum / n;
  const double left = m - t_sq - n * c * c;
  if (left <= 0.0) throw std::invalid_argument("pinned z-scores exceed the available variance");
  const double s = std::sqrt(left / energy);
  std::vector<double> z(m);
  for (int i = 0, j = 0; i < m; ++i) {
    if (auto it = pinned.find(i); it != pinned.end()) {
      z[i] = it->second;
    } else {
      z[i] = c + s * e[j++];
      if (std::abs(z[i]) > bound) throw std::invalid_argument("background entry exceeds the z bound");
    }
  }
  std::vector<float> out(m);
  for (int i = 0; i < m; ++i) out[i] = static_cast<float>(mean + std * z[i]);
  return out;
}

Checkpoint synthetic_checkpoint(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int m = spec.hidden_dim;
  Checkpoint ckpt;
  auto put = [&](const std::string& name, std::vector<std::int64_t> shape, const std::vector<float>& values) {
    ckpt.put(TensorRecord::from_floats(name, std::move(shape), values));
  };
  auto noise = [&](std::size_t n, double mean, double std) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(mean + std * normal(rng));
    return v;
  };
  for (int layer = 0; layer < spec.num_layers; ++layer) {
    auto gamma = noise(m, spec.gamma_mean, spec.gamma_std);
    auto beta = noise(m, spec.beta_mean, spec.beta_std);
    for (const auto& p : spec.planted) {
      for (int l : p.layers) {
        if (l != layer) continue;
        gamma[p.dim] = static_cast<float>(spec.gamma_mean + p.sign * p.sigmas * spec.gamma_std);
        beta[p.dim] = static_cast<float>(spec.beta_mean + p.sign * p.sigmas * spec.beta_std);
      }
    }
    const std::string prefix = "bert.encoder.layer." + std::to_string(layer) + ".";
    put(prefix + "output.LayerNorm.weight", {m}, gamma);
    put(prefix + "output.LayerNorm.bias", {m}, beta);
    put(prefix + "attention.output.LayerNorm.weight", {m}, noise(m, spec.gamma_mean, spec.gamma_std));
    put(prefix + "attention.output.LayerNorm.bias", {m}, noise(m, spec.beta_mean, spec.beta_std));
    if (spec.with_dense) {
      put(prefix + "output.dense.weight", {m, spec.ff_dim}, noise(static_cast<std::size_t>(m) * spec.ff_dim, 0.0, 0.02));
      put(prefix + "output.dense.bias", {m}, noise(m, 0.0, 0.02));
      put(prefix + "attention.output.dense.bias", {m}, noise(m, 0.0, 0.02));
    }
  }
  put("bert.embeddings.word_embeddings.weight", {50, m}, noise(50 * static_cast<std::size_t>(m), 0.0, 0.02));
  ckpt.metadata()["format"] = "pt";
  return ckpt;
}

EncoderParams<float> random_encoder(const EncoderConfig& config, std::uint64_t seed, double ln_noise) {
  auto params = EncoderParams<float>::initialize(config, seed);
  std::mt19937_64 rng(seed ^ 0xabcdefull);
  std::normal_distribution<double> normal(0.0, ln_noise);
  for (auto& slot : param_slots(params)) {
    if (slot.shape.size() != 1) continue;
    for (std::size_t i = 0; i < slot.size; ++i) slot.data[i] += static_cast<float>(normal(rng));
  }
  return params;
}

std::vector<int> random_ids(int length, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  std::vector<int> ids(length);
  for (auto& id : ids) id = pick(rng);
  return ids;
}

std::string temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("lnscope_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace lnscope::testkit
