#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lnscope/checkpoint.hpp"
#include "lnscope/encoder.hpp"
#include "lnscope/schema.hpp"

namespace lnscope::testkit {

// A planted joint outlier: γ and β of `dim` pushed `sigmas` standard
// deviations from the layer mean in each listed layer.
struct Planted {
  int dim;
  std::vector<int> layers;
  double sigmas = 8.0;
  double sign = -1.0;
};

struct SyntheticSpec {
  int num_layers = 12;
  int hidden_dim = 64;
  int ff_dim = 128;
  double gamma_mean = 1.0;
  double gamma_std = 0.05;
  double beta_mean = 0.0;
  double beta_std = 0.05;
  std::uint64_t seed = 1;
  std::vector<Planted> planted;
  bool with_dense = true;
};

// bert-base-style names, shapes scaled to the spec.
ModelSchema synthetic_schema(int num_layers, int hidden_dim);
Checkpoint synthetic_checkpoint(const SyntheticSpec& spec);

// Random vector with exactly the given population mean and std.
std::vector<float> vector_with_stats(int m, double mean, double std, std::uint64_t seed);

// Vector with exact population mean and std whose `pinned` entries sit at
// the given z-scores. Every other entry stays within |z| <= `bound`.
std::vector<float> vector_with_z(int m, double mean, double std, const std::map<int, double>& pinned, double bound,
                                 std::uint64_t seed);

// A small random mini encoder with perturbed LayerNorm parameters so γ/β
// are not at their initial values.
EncoderParams<float> random_encoder(const EncoderConfig& config, std::uint64_t seed, double ln_noise = 0.2);

std::vector<int> random_ids(int length, int vocab, std::uint64_t seed);

// Fresh empty directory under the system temp dir.
std::string temp_dir(const std::string& tag);

}  // namespace lnscope::testkit
