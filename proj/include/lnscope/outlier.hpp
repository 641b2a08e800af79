#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "lnscope/checkpoint.hpp"
#include "lnscope/schema.hpp"

namespace lnscope {

// Population statistics of one parameter vector plus its signed z-scores
// and descending-magnitude ranks.
struct VectorStats {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> z;
  int count_gt_k = 0;
  std::vector<int> rank;
};

VectorStats vector_stats(std::span<const float> values, double k_sigma);

// Per-layer statistics of an LN (γ, β) pair.
struct LayerStats {
  int layer = 0;
  VectorStats gamma;
  VectorStats beta;
};

LayerStats layer_stats(std::span<const float> gamma, std::span<const float> beta, double k_sigma, int layer = 0);

// Rank of each entry when |values| is sorted descending (0 = largest);
// ties go to the lower index.
std::vector<int> rank_by_magnitude(std::span<const float> values);

struct DetectionConfig {
  double k_sigma = 3.0;
  double layer_fraction = 0.5;
  bool require_both = true;
  std::vector<Role> roles = {Role::output_ln_gamma, Role::output_ln_beta};

  // Layers a dimension must be flagged in.
  int required_layers(int num_layers) const;
  void validate() const;
};

// Schema presets carry relaxed defaults for some models.
DetectionConfig detection_defaults(const ModelSchema& schema);

struct OutlierReport {
  std::vector<int> outlier_dims;
  // Every dimension flagged in at least one layer -> per-layer flags.
  std::map<int, std::vector<bool>> per_dim_layer_flags;
  // stats[role_index][layer]; roles follow config.roles.
  std::vector<std::vector<VectorStats>> role_stats;
  DetectionConfig config;
  std::string checkpoint_digest;
  int hidden_dim = 0;
  int num_layers = 0;

  // (γ, β) view of one layer. Needs at least one role; with a single role
  // both slots carry that role's statistics.
  LayerStats layer_stats(int layer) const;
  int flag_count(int dim) const;
};

OutlierReport detect_outliers(const Checkpoint& checkpoint, const ModelSchema& schema, const DetectionConfig& config);

struct MatrixOutlierReport {
  ComponentRef component;
  std::vector<double> row_l1_norms;
  std::vector<int> outlier_rows;
  double mean = 0.0;
  double std = 0.0;
};

// L1 norm of each output-feature row of a matrix component and the rows
// whose norm sits more than k_sigma population stds from the mean.
MatrixOutlierReport detect_matrix_outliers(const Checkpoint& checkpoint, const ModelSchema& schema,
                                           const ComponentRef& ref, double k_sigma);

// Same over a raw row-major matrix with the feature axis given explicitly.
MatrixOutlierReport matrix_outliers(std::span<const float> values, std::int64_t rows, std::int64_t cols,
                                    int feature_axis, double k_sigma);

// Canonical JSON (stable key order, dims and layers ascending).
std::string report_to_json(const OutlierReport& report);
OutlierReport report_from_json(std::string_view text);

// SHA-256 over outlier dims, per-layer flag matrix and config.
std::string fingerprint(const OutlierReport& report);

// Per-layer table with the appendix column layout: layer, mean/std and
// count beyond k sigma for γ and β, then value/rank for each tracked dim.
std::string stats_csv(const OutlierReport& report, std::span<const int> tracked_dims,
                      const Checkpoint& checkpoint, const ModelSchema& schema);

}  // namespace lnscope
