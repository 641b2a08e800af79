#include "lnscope/outlier.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "lnscope/digest.hpp"
#include "lnscope/error.hpp"

namespace lnscope {

namespace {

using json = nlohmann::ordered_json;

// Population mean and std accumulated in double.
std::pair<double, double> population_moments(std::span<const double> values) {
  const auto n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

std::vector<double> zscores(std::span<const double> values, double mean, double std) {
  std::vector<double> z(values.size(), 0.0);
  if (std > 0.0) {
    for (std::size_t i = 0; i < values.size(); ++i) z[i] = (values[i] - mean) / std;
  }
  return z;
}

std::vector<int> flagged(std::span<const double> z, double k) {
  std::vector<int> out;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (std::abs(z[i]) > k) out.push_back(static_cast<int>(i));
  }
  return out;
}

json config_json(const DetectionConfig& config) {
  json roles = json::array();
  for (auto role : config.roles) roles.push_back(role_name(role));
  return {{"k_sigma", config.k_sigma},
          {"layer_fraction", config.layer_fraction},
          {"require_both", config.require_both},
          {"roles", std::move(roles)}};
}

json stats_json(const VectorStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"count_gt_k", s.count_gt_k}, {"z", s.z}, {"rank", s.rank}};
}

VectorStats stats_from_json(const json& j) {
  VectorStats s;
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.count_gt_k = j.at("count_gt_k").get<int>();
  s.z = j.at("z").get<std::vector<double>>();
  s.rank = j.at("rank").get<std::vector<int>>();
  return s;
}

std::string flag_string(const std::vector<bool>& flags) {
  std::string out;
  out.reserve(flags.size());
  for (bool f : flags) out.push_back(f ? '1' : '0');
  return out;
}

}  // namespace

std::vector<int> rank_by_magnitude(std::span<const float> values) {
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return std::abs(values[a]) > std::abs(values[b]); });
  std::vector<int> rank(values.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = static_cast<int>(pos);
  return rank;
}

VectorStats vector_stats(std::span<const float> values, double k_sigma) {
  if (values.size() < 2) throw UsageError("statistics need at least 2 entries");
  std::vector<double> wide(values.begin(), values.end());
  for (double v : wide) {
    if (!std::isfinite(v)) throw NumericError("non-finite parameter value");
  }
  VectorStats s;
  std::tie(s.mean, s.std) = population_moments(wide);
  s.z = zscores(wide, s.mean, s.std);
  s.count_gt_k = static_cast<int>(flagged(s.z, k_sigma).size());
  s.rank = rank_by_magnitude(values);
  return s;
}

LayerStats layer_stats(std::span<const float> gamma, std::span<const float> beta, double k_sigma, int layer) {
  if (gamma.size() != beta.size()) throw UsageError("gamma and beta lengths differ");
  return {layer, vector_stats(gamma, k_sigma), vector_stats(beta, k_sigma)};
}

int DetectionConfig::required_layers(int num_layers) const {
  // The epsilon keeps 1/3 * 24 at 8 despite binary rounding.
  return static_cast<int>(std::ceil(layer_fraction * num_layers - 1e-9));
}

void DetectionConfig::validate() const {
  if (!(k_sigma > 0.0)) throw UsageError("k_sigma must be positive");
  if (!(layer_fraction > 0.0 && layer_fraction <= 1.0)) throw UsageError("layer_fraction must lie in (0, 1]");
  if (roles.empty()) throw UsageError("detection needs at least one role");
  for (auto role : roles) {
    if (is_matrix_role(role)) {
      throw UsageError("role " + std::string(role_name(role)) + " is a matrix; use matrix outlier detection");
    }
  }
}

DetectionConfig detection_defaults(const ModelSchema& schema) {
  DetectionConfig config;
  config.k_sigma = schema.default_k_sigma;
  config.layer_fraction = schema.default_layer_fraction;
  return config;
}

LayerStats OutlierReport::layer_stats(int layer) const {
  const auto& first = role_stats.at(0).at(layer);
  const auto& second = role_stats.size() > 1 ? role_stats[1].at(layer) : first;
  return {layer, first, second};
}

int OutlierReport::flag_count(int dim) const {
  auto it = per_dim_layer_flags.find(dim);
  if (it == per_dim_layer_flags.end()) return 0;
  return static_cast<int>(std::count(it->second.begin(), it->second.end(), true));
}

OutlierReport detect_outliers(const Checkpoint& checkpoint, const ModelSchema& schema, const DetectionConfig& config) {
  config.validate();
  schema.validate();
  const int layers = schema.num_layers;
  const int m = schema.hidden_dim;

  OutlierReport report;
  report.config = config;
  report.hidden_dim = m;
  report.num_layers = layers;
  report.checkpoint_digest = checkpoint_digest(checkpoint);
  report.role_stats.resize(config.roles.size());

  for (int layer = 0; layer < layers; ++layer) {
    std::vector<int> hits(m, 0);
    for (std::size_t r = 0; r < config.roles.size(); ++r) {
      const auto& record = resolve(checkpoint, schema, {config.roles[r], layer});
      const auto values = record.to_floats();
      auto stats = vector_stats(values, config.k_sigma);
      for (int d : flagged(stats.z, config.k_sigma)) ++hits[d];
      report.role_stats[r].push_back(std::move(stats));
    }
    const int needed = config.require_both ? static_cast<int>(config.roles.size()) : 1;
    for (int d = 0; d < m; ++d) {
      if (hits[d] >= needed) {
        auto& flags = report.per_dim_layer_flags[d];
        flags.resize(layers, false);
        flags[layer] = true;
      }
    }
  }

  const int required = config.required_layers(layers);
  for (const auto& [dim, flags] : report.per_dim_layer_flags) {
    if (std::count(flags.begin(), flags.end(), true) >= required) report.outlier_dims.push_back(dim);
  }
  return report;
}

MatrixOutlierReport matrix_outliers(std::span<const float> values, std::int64_t rows, std::int64_t cols,
                                    int feature_axis, double k_sigma) {
  if (static_cast<std::int64_t>(values.size()) != rows * cols) throw UsageError("matrix size mismatch");
  const std::int64_t features = feature_axis == 0 ? rows : cols;
  MatrixOutlierReport report;
  report.row_l1_norms.assign(features, 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      const double v = std::abs(static_cast<double>(values[r * cols + c]));
      report.row_l1_norms[feature_axis == 0 ? r : c] += v;
    }
  }
  if (features < 2) return report;
  std::tie(report.mean, report.std) = population_moments(report.row_l1_norms);
  report.outlier_rows = flagged(zscores(report.row_l1_norms, report.mean, report.std), k_sigma);
  return report;
}

MatrixOutlierReport detect_matrix_outliers(const Checkpoint& checkpoint, const ModelSchema& schema,
                                           const ComponentRef& ref, double k_sigma) {
  const auto& record = resolve(checkpoint, schema, ref);
  if (record.rank() != 2) {
    throw DataError("'" + record.name() + "' has rank " + std::to_string(record.rank()) + ", expected a matrix");
  }
  auto axis = schema.feature_axes.find(ref.role);
  if (axis == schema.feature_axes.end()) {
    throw SchemaError("schema has no feature-axis annotation for " + std::string(role_name(ref.role)));
  }
  auto report = matrix_outliers(record.to_floats(), record.shape()[0], record.shape()[1], axis->second, k_sigma);
  report.component = ref;
  return report;
}

std::string report_to_json(const OutlierReport& report) {
  json doc;
  doc["outlier_dims"] = report.outlier_dims;
  json flags = json::object();
  for (const auto& [dim, f] : report.per_dim_layer_flags) flags[std::to_string(dim)] = flag_string(f);
  doc["per_dim_layer_flags"] = std::move(flags);
  doc["config"] = config_json(report.config);
  doc["hidden_dim"] = report.hidden_dim;
  doc["num_layers"] = report.num_layers;
  doc["checkpoint_digest"] = report.checkpoint_digest;
  json stats = json::array();
  for (std::size_t r = 0; r < report.role_stats.size(); ++r) {
    json layers = json::array();
    for (const auto& s : report.role_stats[r]) layers.push_back(stats_json(s));
    stats.push_back({{"role", role_name(report.config.roles[r])}, {"layers", std::move(layers)}});
  }
  doc["per_layer_stats"] = std::move(stats);
  doc["fingerprint"] = fingerprint(report);
  return doc.dump(2);
}

OutlierReport report_from_json(std::string_view text) {
  OutlierReport report;
  try {
    const auto doc = json::parse(text);
    report.outlier_dims = doc.at("outlier_dims").get<std::vector<int>>();
    report.hidden_dim = doc.at("hidden_dim").get<int>();
    report.num_layers = doc.at("num_layers").get<int>();
    report.checkpoint_digest = doc.at("checkpoint_digest").get<std::string>();
    const auto& config = doc.at("config");
    report.config.k_sigma = config.at("k_sigma").get<double>();
    report.config.layer_fraction = config.at("layer_fraction").get<double>();
    report.config.require_both = config.at("require_both").get<bool>();
    report.config.roles.clear();
    for (const auto& r : config.at("roles")) report.config.roles.push_back(role_from_name(r.get<std::string>()));
    for (const auto& [key, value] : doc.at("per_dim_layer_flags").items()) {
      const auto bits = value.get<std::string>();
      std::vector<bool> flags;
      for (char c : bits) flags.push_back(c == '1');
      report.per_dim_layer_flags[std::stoi(key)] = std::move(flags);
    }
    for (const auto& entry : doc.at("per_layer_stats")) {
      std::vector<VectorStats> layers;
      for (const auto& s : entry.at("layers")) layers.push_back(stats_from_json(s));
      report.role_stats.push_back(std::move(layers));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed outlier report: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("malformed outlier report: ") + e.what());
  }
  return report;
}

std::string fingerprint(const OutlierReport& report) {
  Sha256 sha;
  sha.update_field("lnscope.outlier-report.v1");
  sha.update_u64(report.outlier_dims.size());
  for (int d : report.outlier_dims) sha.update_u64(static_cast<std::uint64_t>(d));
  sha.update_u64(report.per_dim_layer_flags.size());
  for (const auto& [dim, flags] : report.per_dim_layer_flags) {
    sha.update_u64(static_cast<std::uint64_t>(dim));
    sha.update_field(flag_string(flags));
  }
  sha.update_field(config_json(report.config).dump());
  return sha.hex_digest();
}

std::string stats_csv(const OutlierReport& report, std::span<const int> tracked_dims, const Checkpoint& checkpoint,
                      const ModelSchema& schema) {
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed;
  const auto k = report.config.k_sigma;
  const std::string kname = (k == std::floor(k) ? std::to_string(static_cast<int>(k)) : std::to_string(k));
  out << "layer,gamma_mean,gamma_std,gamma_gt_" << kname << "sigma,beta_mean,beta_std,beta_gt_" << kname << "sigma";
  for (int d : tracked_dims) {
    out << ",gamma_" << d << "_value,gamma_" << d << "_rank,beta_" << d << "_value,beta_" << d << "_rank";
  }
  out << '\n';
  const Role gamma_role = report.config.roles.at(0);
  const Role beta_role = report.config.roles.size() > 1 ? report.config.roles[1] : gamma_role;
  for (int layer = 0; layer < report.num_layers; ++layer) {
    const auto stats = report.layer_stats(layer);
    out << layer << ',' << stats.gamma.mean << ',' << stats.gamma.std << ',' << stats.gamma.count_gt_k << ','
        << stats.beta.mean << ',' << stats.beta.std << ',' << stats.beta.count_gt_k;
    if (!tracked_dims.empty()) {
      const auto gamma = resolve(checkpoint, schema, {gamma_role, layer}).to_floats();
      const auto beta = resolve(checkpoint, schema, {beta_role, layer}).to_floats();
      for (int d : tracked_dims) {
        if (d < 0 || d >= report.hidden_dim) throw UsageError("tracked dim " + std::to_string(d) + " out of range");
        out << ',' << gamma[d] << ',' << stats.gamma.rank[d] << ',' << beta[d] << ',' << stats.beta.rank[d];
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace lnscope
