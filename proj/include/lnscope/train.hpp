#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lnscope/encoder.hpp"
#include "lnscope/outlier.hpp"
#include "lnscope/text.hpp"

namespace lnscope {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 8;
  int total_steps = 1000;
  double mask_prob = 0.15;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-6;
  double weight_decay = 0.01;
  // Linear warmup over this fraction of the steps, then linear decay to 0.
  double warmup_fraction = 0.1;
  std::uint64_t seed = 0;
  int snapshot_every = 2000;
  // Also write the step-0 (initialization) snapshot.
  bool snapshot_initial = false;
  // Training sequences are cropped to a random window of this many ids
  // (0 keeps them whole).
  int train_seq_len = 0;
  // Batch items split across threads; 1 is the bitwise-deterministic mode.
  int threads = 1;

  void validate() const;
  std::string to_json() const;
};

struct LossRecord {
  int step = 0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<std::filesystem::path> snapshots;
  std::vector<LossRecord> loss_log;
  EncoderParams<float> params;
};

using TrainProgress = std::function<void(int step, double loss)>;

// Learning rate at 1-based `step`.
double scheduled_lr(const TrainConfig& config, int step);

// Trains from `initial` (or a fresh seeded initialization). Snapshots go to
// snapshot_dir/step_NNNNNN.safetensors every snapshot_every steps and at the
// final step; an empty snapshot_dir disables them. Elements in `frozen`
// never change.
TrainResult train(const std::vector<Sequence>& corpus, const Tokenizer& tokenizer, const EncoderConfig& encoder_config,
                  const TrainConfig& config, const std::filesystem::path& snapshot_dir,
                  const FrozenSet& frozen = {}, const EncoderParams<float>* initial = nullptr,
                  const TrainProgress& progress = {});

std::string loss_log_csv(const std::vector<LossRecord>& log);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// One snapshot's output-LN statistics and raw vectors.
struct TrajectoryPoint {
  std::int64_t step = 0;
  std::filesystem::path path;
  std::vector<LayerStats> layers;
  std::vector<std::vector<float>> gamma;  // [layer][dim]
  std::vector<std::vector<float>> beta;
};

// Sorted by step (from snapshot metadata; file order when absent). Every
// snapshot must resolve against `schema` with the same shape.
std::vector<TrajectoryPoint> track_ln_trajectories(const std::vector<std::filesystem::path>& snapshot_paths,
                                                   const ModelSchema& schema, double k_sigma = 3.0);
std::vector<TrajectoryPoint> track_ln_trajectories(const std::vector<std::pair<std::int64_t, Checkpoint>>& snapshots,
                                                   const ModelSchema& schema, double k_sigma = 3.0);

// step, layer, dim, gamma, beta
std::string trajectory_tsv(const std::vector<TrajectoryPoint>& series);
struct TrajectoryRow {
  std::int64_t step;
  int layer;
  int dim;
  float gamma;
  float beta;
  bool operator==(const TrajectoryRow&) const = default;
};
std::vector<TrajectoryRow> parse_trajectory_tsv(std::string_view text);
std::vector<TrajectoryRow> trajectory_rows(const std::vector<TrajectoryPoint>& series);

// step, layer, gamma_mean, gamma_std, gamma_gt_k, beta_mean, beta_std, beta_gt_k
std::string trajectory_stats_csv(const std::vector<TrajectoryPoint>& series);
struct TrajectoryStatsRow {
  std::int64_t step;
  int layer;
  double gamma_mean, gamma_std;
  int gamma_gt;
  double beta_mean, beta_std;
  int beta_gt;
};
std::vector<TrajectoryStatsRow> parse_trajectory_stats_csv(std::string_view text);

}  // namespace lnscope
