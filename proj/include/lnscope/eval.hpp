#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lnscope/encoder.hpp"
#include "lnscope/mask.hpp"
#include "lnscope/outlier.hpp"
#include "lnscope/text.hpp"

namespace lnscope {

struct EvalConfig {
  int max_seq_len = 256;
  double mask_prob = 0.15;
  std::uint64_t seed = 0;
  int num_random_runs = 1000;
  int threads = 1;

  void validate() const;
  std::string to_json() const;
};

struct EvalResult {
  std::string label;
  double cross_entropy = 0.0;
  std::int64_t masked_token_count = 0;
  std::string plan_digest;
  std::int64_t modified_weight_count = 0;
};

// Masked examples for a corpus: sequence i uses RNG seed
// derive_seed(config.seed, i), so every evaluation with the same seed sees
// the same positions.
std::vector<MlmExample> eval_examples(const std::vector<Sequence>& corpus, const EvalConfig& config);

// Global mean CE over every masked position, reduced in sequence order.
LossSum evaluate_examples(const EncoderParams<float>& params, const std::vector<MlmExample>& examples, int threads = 1);

// The model with `plan` applied (via its checkpoint form).
EncoderParams<float> masked_params(const EncoderParams<float>& params, const ModelSchema& schema, const MaskPlan& plan);

EvalResult evaluate(const EncoderParams<float>& params, const std::vector<Sequence>& corpus, const EvalConfig& config);
EvalResult evaluate(const EncoderParams<float>& params, const ModelSchema& schema, const std::vector<Sequence>& corpus,
                    const MaskPlan& plan, const EvalConfig& config);

struct SweepResult {
  EvalResult baseline;
  std::vector<EvalResult> entries;  // per dim, or per layer range
  std::vector<int> dims;            // dim of each entry (sweep_dims only)
};

// ln_pair mask on one dim across every layer, for each dim in [0, m).
SweepResult sweep_dims(const EncoderParams<float>& params, const ModelSchema& schema,
                       const std::vector<Sequence>& corpus, const EvalConfig& config);

// A plan to compare. With `random` set, the row averages num_random_runs
// plans drawn from that spec with seeds derived from the config seed.
struct PlanCandidate {
  std::string label;
  MaskPlan plan;
  std::optional<BaselineSpec> random;
};

struct ComparisonRow {
  EvalResult result;  // CE is the mean over runs for random rows
  int runs = 1;
  double ce_std = 0.0;  // population std over runs
  std::vector<double> run_ces;
};

std::vector<ComparisonRow> compare_plans(const EncoderParams<float>& params, const ModelSchema& schema,
                                         const std::vector<Sequence>& corpus, const std::vector<PlanCandidate>& plans,
                                         const EvalConfig& config);

struct LayerRange {
  int first = 0;
  int last = -1;  // inclusive; last < first is the empty range
  std::vector<int> layers() const;
  std::string label() const;
};

SweepResult sweep_layer_ranges(const EncoderParams<float>& params, const ModelSchema& schema,
                               const std::vector<Sequence>& corpus, const OutlierReport& report,
                               const std::vector<LayerRange>& ranges, const EvalConfig& config);

struct Heatmap {
  std::vector<std::string> tokens;
  std::vector<Mat<float>> layers;  // L matrices [tokens, m], encoder layer outputs
  std::vector<int> marked_dims;
};

Heatmap embedding_heatmap(const EncoderParams<float>& params, const Tokenizer& tokenizer, std::string_view text,
                          const std::vector<int>& dims_to_mark);

// layer, token, dim, value (layer 0 is the first encoder layer)
std::string heatmap_tsv(const Heatmap& heatmap);

struct AnisotropyReport {
  std::vector<int> dims;
  std::vector<double> fraction_abnormal;
  double threshold = 3.0;
  std::int64_t token_count = 0;
  std::string rule;
};

// Per-vector rule: dim d is abnormal when |y[d] - mean(y)| > threshold *
// std(y) (population statistics of y itself; never when std is 0).
AnisotropyReport abnormal_fraction(const std::vector<std::vector<float>>& vectors, const std::vector<int>& dims,
                                   double threshold = 3.0);
AnisotropyReport anisotropy_check(const EncoderParams<float>& params, const std::vector<Sequence>& corpus,
                                  const std::vector<int>& dims, double threshold = 3.0);

// label,weights,ce[,runs,ce_std]
std::string comparison_csv(const std::vector<ComparisonRow>& rows);
// label,weights,ce
std::string sweep_csv(const SweepResult& sweep);
// dim, ce
std::string sweep_tsv(const SweepResult& sweep);

}  // namespace lnscope
