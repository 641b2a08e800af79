#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lnscope/checkpoint.hpp"
#include "lnscope/outlier.hpp"
#include "lnscope/schema.hpp"

namespace lnscope {

enum class MaskMode {
  ln_pair,      // γ[d] and its β[d]: 2 weights per (layer, dim)
  dense_row,    // output-feature row of a dense weight plus its bias entry
  vector_dims,  // entry d of a vector, or feature d of every row of a matrix
};

enum class Provenance { outliers, random, lsf, lb, manual };

std::string_view mask_mode_name(MaskMode mode);
MaskMode mask_mode_from_name(std::string_view name);
std::string_view provenance_name(Provenance provenance);
Provenance provenance_from_name(std::string_view name);

struct MaskEntry {
  // For ln_pair the γ role (its β partner is implied); for dense_row the
  // dense weight role.
  Role role = Role::output_ln_gamma;
  std::vector<int> layers;  // sorted, unique
  std::vector<int> dims;    // sorted, unique
  MaskMode mode = MaskMode::ln_pair;

  std::size_t slot_count() const { return layers.size() * dims.size(); }
};

struct MaskPlan {
  std::vector<MaskEntry> entries;
  Provenance provenance = Provenance::manual;
  std::optional<std::uint64_t> seed;

  bool empty() const;
  std::size_t slot_count() const;
  // Sorts/dedups layer and dim lists and checks that no two entries touch
  // the same scalar.
  void normalize();
};

// Every (layer, dim) slot of a plan, flattened.
struct Slot {
  int layer;
  int dim;
  auto operator<=>(const Slot&) const = default;
};

MaskPlan plan_outlier_mask(const OutlierReport& report, const std::vector<int>& layers,
                           const std::optional<std::vector<int>>& dims = std::nullopt);

// ln_pair plan over the given dims and layers (manual provenance).
MaskPlan plan_ln_pairs(const std::vector<int>& dims, const std::vector<int>& layers, Role gamma_role = Role::output_ln_gamma,
                       Provenance provenance = Provenance::manual);

// ln_pair plan over explicit (layer, dim) slots.
MaskPlan plan_from_slots(const std::vector<Slot>& slots, Provenance provenance, Role gamma_role = Role::output_ln_gamma);

enum class BaselineKind { random_dims, random_slots, largest_scaling_factor, largest_bias };

std::string_view baseline_kind_name(BaselineKind kind);
BaselineKind baseline_kind_from_name(std::string_view name);

struct BaselineSpec {
  BaselineKind kind = BaselineKind::random_dims;
  // Dims for random_dims, (layer, dim) slots otherwise.
  int n = 1;
  std::vector<int> exclude;
  std::uint64_t seed = 0;
  Role gamma_role = Role::output_ln_gamma;
};

MaskPlan plan_baseline(const Checkpoint& checkpoint, const ModelSchema& schema, const BaselineSpec& spec);

MaskPlan plan_dense_row_mask(const std::vector<int>& dims, const std::vector<int>& layers);

// Returns a copy of `checkpoint` with every targeted scalar set to +0.0.
// Untouched tensors share their payload with the input.
Checkpoint apply_mask(const Checkpoint& checkpoint, const ModelSchema& schema, const MaskPlan& plan);

// Exact number of scalars a plan zeroes. The schema-only overload handles
// ln_pair plans; dense_row and matrix vector_dims need tensor shapes.
std::int64_t count_modified_weights(const MaskPlan& plan, const ModelSchema& schema);
std::int64_t count_modified_weights(const MaskPlan& plan, const ModelSchema& schema, const Checkpoint& checkpoint);

// Flat element indices a plan zeroes, per tensor name.
std::map<std::string, std::vector<std::size_t>> mask_positions(const Checkpoint& checkpoint,
                                                               const ModelSchema& schema, const MaskPlan& plan);

std::string plan_to_json(const MaskPlan& plan);
MaskPlan plan_from_json(std::string_view text);
std::string plan_digest(const MaskPlan& plan);

// 64-bit mix of (master seed, counter), used to derive independent
// per-run seeds.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter);

}  // namespace lnscope
