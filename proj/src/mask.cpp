#include "lnscope/mask.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "lnscope/digest.hpp"
#include "lnscope/error.hpp"

namespace lnscope {

namespace {

using json = nlohmann::ordered_json;

void sort_unique(std::vector<int>& values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
}

std::vector<int> all_layers(const ModelSchema& schema) {
  std::vector<int> layers(schema.num_layers);
  std::iota(layers.begin(), layers.end(), 0);
  return layers;
}

std::vector<Role> touched_roles(const MaskEntry& entry) {
  std::vector<Role> roles{entry.role};
  if (entry.mode != MaskMode::vector_dims) {
    if (auto pair = paired_role(entry.role)) roles.push_back(*pair);
  }
  return roles;
}

bool intersects(const std::vector<int>& a, const std::vector<int>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i; else ++j;
  }
  return false;
}

// Element indices of feature `dim` in a matrix whose feature axis is `axis`.
void feature_positions(const TensorRecord& record, int axis, int dim, std::vector<std::size_t>& out) {
  const auto rows = static_cast<std::size_t>(record.shape()[0]);
  const auto cols = static_cast<std::size_t>(record.shape()[1]);
  if (axis == 0) {
    for (std::size_t c = 0; c < cols; ++c) out.push_back(static_cast<std::size_t>(dim) * cols + c);
  } else {
    for (std::size_t r = 0; r < rows; ++r) out.push_back(r * cols + static_cast<std::size_t>(dim));
  }
}

int feature_axis(const ModelSchema& schema, Role role) {
  auto it = schema.feature_axes.find(role);
  if (it == schema.feature_axes.end()) {
    throw SchemaError("schema has no feature-axis annotation for " + std::string(role_name(role)));
  }
  return it->second;
}

void add_vector_or_matrix(const Checkpoint& checkpoint, const ModelSchema& schema, Role role, int layer, int dim,
                          std::map<std::string, std::vector<std::size_t>>& out) {
  const auto& record = resolve(checkpoint, schema, {role, layer});
  auto& positions = out[record.name()];
  if (record.rank() == 1) {
    positions.push_back(static_cast<std::size_t>(dim));
  } else {
    feature_positions(record, feature_axis(schema, role), dim, positions);
  }
}

}  // namespace

std::string_view mask_mode_name(MaskMode mode) {
  switch (mode) {
    case MaskMode::ln_pair: return "ln_pair";
    case MaskMode::dense_row: return "dense_row";
    case MaskMode::vector_dims: return "vector_dims";
  }
  return "ln_pair";
}

MaskMode mask_mode_from_name(std::string_view name) {
  if (name == "ln_pair" || name == "ln-pair") return MaskMode::ln_pair;
  if (name == "dense_row" || name == "dense-row") return MaskMode::dense_row;
  if (name == "vector_dims" || name == "vector-dims") return MaskMode::vector_dims;
  throw UsageError("unknown mask mode '" + std::string(name) + "'");
}

std::string_view provenance_name(Provenance provenance) {
  switch (provenance) {
    case Provenance::outliers: return "outliers";
    case Provenance::random: return "random";
    case Provenance::lsf: return "lsf";
    case Provenance::lb: return "lb";
    case Provenance::manual: return "manual";
  }
  return "manual";
}

Provenance provenance_from_name(std::string_view name) {
  for (auto p : {Provenance::outliers, Provenance::random, Provenance::lsf, Provenance::lb, Provenance::manual}) {
    if (provenance_name(p) == name) return p;
  }
  throw UsageError("unknown plan provenance '" + std::string(name) + "'");
}

std::string_view baseline_kind_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::random_dims: return "random";
    case BaselineKind::random_slots: return "random-slots";
    case BaselineKind::largest_scaling_factor: return "lsf";
    case BaselineKind::largest_bias: return "lb";
  }
  return "random";
}

BaselineKind baseline_kind_from_name(std::string_view name) {
  for (auto k : {BaselineKind::random_dims, BaselineKind::random_slots, BaselineKind::largest_scaling_factor,
                 BaselineKind::largest_bias}) {
    if (baseline_kind_name(k) == name) return k;
  }
  throw UsageError("unknown baseline '" + std::string(name) + "' (expected random, random-slots, lsf or lb)");
}

bool MaskPlan::empty() const { return slot_count() == 0; }

std::size_t MaskPlan::slot_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.slot_count();
  return n;
}

void MaskPlan::normalize() {
  for (auto& e : entries) {
    sort_unique(e.layers);
    sort_unique(e.dims);
    if (!e.dims.empty() && e.dims.front() < 0) throw UsageError("negative dimension in mask plan");
    if (!e.layers.empty() && e.layers.front() < 0) throw UsageError("negative layer in mask plan");
    if (e.mode == MaskMode::ln_pair && !(paired_role(e.role) && !is_matrix_role(e.role))) {
      throw UsageError("ln_pair entries need a LayerNorm gamma role, got " + std::string(role_name(e.role)));
    }
    if (e.mode == MaskMode::dense_row && e.role != Role::output_dense_weight) {
      throw UsageError("dense_row entries target output_dense_weight");
    }
  }
  std::erase_if(entries, [](const MaskEntry& e) { return e.slot_count() == 0; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      const auto ri = touched_roles(entries[i]);
      const auto rj = touched_roles(entries[j]);
      const bool shared_role = std::any_of(ri.begin(), ri.end(), [&](Role r) {
        return std::find(rj.begin(), rj.end(), r) != rj.end();
      });
      if (shared_role && intersects(entries[i].layers, entries[j].layers) &&
          intersects(entries[i].dims, entries[j].dims)) {
        throw UsageError("mask plan entries overlap");
      }
    }
  }
}

MaskPlan plan_ln_pairs(const std::vector<int>& dims, const std::vector<int>& layers, Role gamma_role,
                       Provenance provenance) {
  MaskPlan plan;
  plan.provenance = provenance;
  plan.entries.push_back({gamma_role, layers, dims, MaskMode::ln_pair});
  plan.normalize();
  return plan;
}

MaskPlan plan_from_slots(const std::vector<Slot>& slots, Provenance provenance, Role gamma_role) {
  std::map<int, std::vector<int>> by_layer;
  for (const auto& s : slots) by_layer[s.layer].push_back(s.dim);
  MaskPlan plan;
  plan.provenance = provenance;
  for (auto& [layer, dims] : by_layer) plan.entries.push_back({gamma_role, {layer}, dims, MaskMode::ln_pair});
  plan.normalize();
  return plan;
}

MaskPlan plan_outlier_mask(const OutlierReport& report, const std::vector<int>& layers,
                           const std::optional<std::vector<int>>& dims) {
  std::vector<int> chosen = dims.value_or(report.outlier_dims);
  for (int d : chosen) {
    if (!std::binary_search(report.outlier_dims.begin(), report.outlier_dims.end(), d)) {
      throw UsageError("dimension " + std::to_string(d) + " is not an outlier in the report");
    }
  }
  for (int l : layers) {
    if (l < 0 || l >= report.num_layers) throw UsageError("layer " + std::to_string(l) + " out of range");
  }
  const Role gamma_role = report.config.roles.empty() ? Role::output_ln_gamma : report.config.roles.front();
  if (!paired_role(gamma_role)) throw UsageError("outlier report roles do not form an LN pair");
  return plan_ln_pairs(chosen, layers, gamma_role, Provenance::outliers);
}

MaskPlan plan_dense_row_mask(const std::vector<int>& dims, const std::vector<int>& layers) {
  MaskPlan plan;
  plan.provenance = Provenance::manual;
  plan.entries.push_back({Role::output_dense_weight, layers, dims, MaskMode::dense_row});
  plan.normalize();
  return plan;
}

MaskPlan plan_baseline(const Checkpoint& checkpoint, const ModelSchema& schema, const BaselineSpec& spec) {
  schema.validate();
  const int m = schema.hidden_dim;
  const int layers = schema.num_layers;
  if (spec.n < 0) throw UsageError("baseline size must be non-negative");
  std::vector<bool> excluded(m, false);
  for (int d : spec.exclude) {
    if (d < 0 || d >= m) throw UsageError("excluded dimension " + std::to_string(d) + " out of range");
    excluded[d] = true;
  }

  std::mt19937_64 rng(spec.seed);
  // Partial Fisher-Yates: the first n items of `pool` become the sample.
  auto sample = [&](auto pool) {
    if (static_cast<std::size_t>(spec.n) > pool.size()) {
      throw UsageError("baseline asks for " + std::to_string(spec.n) + " items, only " + std::to_string(pool.size()) +
                       " eligible");
    }
    for (int i = 0; i < spec.n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(spec.n);
    return pool;
  };

  switch (spec.kind) {
    case BaselineKind::random_dims: {
      std::vector<int> pool;
      for (int d = 0; d < m; ++d) {
        if (!excluded[d]) pool.push_back(d);
      }
      auto plan = plan_ln_pairs(sample(std::move(pool)), all_layers(schema), spec.gamma_role, Provenance::random);
      plan.seed = spec.seed;
      return plan;
    }
    case BaselineKind::random_slots: {
      std::vector<Slot> pool;
      for (int l = 0; l < layers; ++l) {
        for (int d = 0; d < m; ++d) {
          if (!excluded[d]) pool.push_back({l, d});
        }
      }
      auto plan = plan_from_slots(sample(std::move(pool)), Provenance::random, spec.gamma_role);
      plan.seed = spec.seed;
      return plan;
    }
    case BaselineKind::largest_scaling_factor:
    case BaselineKind::largest_bias: {
      const auto pair = paired_role(spec.gamma_role);
      if (!pair) throw UsageError("magnitude baselines need an LN gamma role");
      const Role ranked_role = spec.kind == BaselineKind::largest_scaling_factor ? spec.gamma_role : *pair;
      struct Candidate {
        float magnitude;
        Slot slot;
      };
      std::vector<Candidate> all;
      for (int l = 0; l < layers; ++l) {
        const auto values = resolve(checkpoint, schema, {ranked_role, l}).to_floats();
        for (int d = 0; d < m; ++d) {
          if (!excluded[d]) all.push_back({std::abs(values[d]), {l, d}});
        }
      }
      if (static_cast<std::size_t>(spec.n) > all.size()) {
        throw UsageError("baseline asks for " + std::to_string(spec.n) + " slots, only " + std::to_string(all.size()) +
                         " eligible");
      }
      // Global magnitude order; ties by (layer, dim) ascending, which is the
      // insertion order kept by the stable sort.
      std::stable_sort(all.begin(), all.end(),
                       [](const Candidate& a, const Candidate& b) { return a.magnitude > b.magnitude; });
      std::vector<Slot> slots;
      for (int i = 0; i < spec.n; ++i) slots.push_back(all[i].slot);
      return plan_from_slots(slots,
                             spec.kind == BaselineKind::largest_scaling_factor ? Provenance::lsf : Provenance::lb,
                             spec.gamma_role);
    }
  }
  throw UsageError("unknown baseline kind");
}

std::map<std::string, std::vector<std::size_t>> mask_positions(const Checkpoint& checkpoint,
                                                               const ModelSchema& schema, const MaskPlan& plan) {
  const int m = schema.hidden_dim;
  std::map<std::string, std::vector<std::size_t>> out;
  for (const auto& entry : plan.entries) {
    for (int d : entry.dims) {
      if (d < 0 || d >= m) {
        throw UsageError("mask dimension " + std::to_string(d) + " out of range [0, " + std::to_string(m) + ")");
      }
    }
    for (int layer : entry.layers) {
      for (int d : entry.dims) {
        switch (entry.mode) {
          case MaskMode::ln_pair:
            out[resolve(checkpoint, schema, {entry.role, layer}).name()].push_back(d);
            out[resolve(checkpoint, schema, {*paired_role(entry.role), layer}).name()].push_back(d);
            break;
          case MaskMode::dense_row: {
            const auto& weight = resolve(checkpoint, schema, {entry.role, layer});
            feature_positions(weight, feature_axis(schema, entry.role), d, out[weight.name()]);
            out[resolve(checkpoint, schema, {*paired_role(entry.role), layer}).name()].push_back(d);
            break;
          }
          case MaskMode::vector_dims:
            add_vector_or_matrix(checkpoint, schema, entry.role, layer, d, out);
            break;
        }
      }
    }
  }
  for (auto& [name, positions] : out) {
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  }
  return out;
}

Checkpoint apply_mask(const Checkpoint& checkpoint, const ModelSchema& schema, const MaskPlan& plan) {
  const auto positions = mask_positions(checkpoint, schema, plan);
  Checkpoint out = checkpoint;
  for (const auto& [name, indices] : positions) {
    const auto& record = checkpoint.tensor(name);
    const auto width = byte_width(record.dtype());
    const auto src = record.bytes();
    Bytes data(src.begin(), src.end());
    for (auto i : indices) std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(i * width), width, std::uint8_t{0});
    out.put(record.with_bytes(std::move(data)));
  }
  return out;
}

std::int64_t count_modified_weights(const MaskPlan& plan, const ModelSchema& schema) {
  std::int64_t total = 0;
  for (const auto& entry : plan.entries) {
    for (int d : entry.dims) {
      if (d >= schema.hidden_dim) throw UsageError("mask dimension " + std::to_string(d) + " out of range");
    }
    for (int l : entry.layers) {
      if (l >= schema.num_layers) throw UsageError("mask layer " + std::to_string(l) + " out of range");
    }
    const auto slots = static_cast<std::int64_t>(entry.slot_count());
    if (entry.mode == MaskMode::ln_pair) {
      total += 2 * slots;
    } else if (entry.mode == MaskMode::vector_dims && !is_matrix_role(entry.role)) {
      total += slots;
    } else {
      throw UsageError("counting " + std::string(mask_mode_name(entry.mode)) + " entries on " +
                       std::string(role_name(entry.role)) + " needs tensor shapes");
    }
  }
  return total;
}

std::int64_t count_modified_weights(const MaskPlan& plan, const ModelSchema& schema, const Checkpoint& checkpoint) {
  std::int64_t total = 0;
  for (const auto& [name, indices] : mask_positions(checkpoint, schema, plan)) {
    total += static_cast<std::int64_t>(indices.size());
  }
  return total;
}

std::string plan_to_json(const MaskPlan& plan) {
  json doc;
  doc["provenance"] = provenance_name(plan.provenance);
  doc["seed"] = plan.seed ? json(*plan.seed) : json(nullptr);
  json entries = json::array();
  for (const auto& e : plan.entries) {
    entries.push_back({{"role", role_name(e.role)},
                       {"mode", mask_mode_name(e.mode)},
                       {"layers", e.layers},
                       {"dims", e.dims}});
  }
  doc["entries"] = std::move(entries);
  return doc.dump(2);
}

MaskPlan plan_from_json(std::string_view text) {
  MaskPlan plan;
  try {
    const auto doc = json::parse(text);
    plan.provenance = provenance_from_name(doc.value("provenance", std::string("manual")));
    if (doc.contains("seed") && !doc.at("seed").is_null()) plan.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& e : doc.at("entries")) {
      MaskEntry entry;
      entry.role = role_from_name(e.at("role").get<std::string>());
      entry.mode = mask_mode_from_name(e.at("mode").get<std::string>());
      entry.layers = e.at("layers").get<std::vector<int>>();
      entry.dims = e.at("dims").get<std::vector<int>>();
      plan.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed mask plan: ") + e.what());
  }
  plan.normalize();
  return plan;
}

std::string plan_digest(const MaskPlan& plan) {
  auto canonical = plan;
  canonical.normalize();
  return sha256_hex(plan_to_json(canonical));
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) {
  // splitmix64 finalizer over a counter-offset state.
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (counter + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace lnscope
