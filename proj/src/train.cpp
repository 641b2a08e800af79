#include "lnscope/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "lnscope/error.hpp"
#include "lnscope/mask.hpp"

namespace lnscope {

namespace {

Sequence crop(const Sequence& seq, int window, std::mt19937_64& rng) {
  if (window <= 0 || static_cast<int>(seq.size()) <= window) return seq;
  // seq is [CLS] content [SEP]; crop the content and re-wrap it.
  const std::size_t content = seq.size() - 2;
  const std::size_t keep = static_cast<std::size_t>(window - 2);
  std::uniform_int_distribution<std::size_t> pick(0, content - keep);
  const std::size_t start = 1 + pick(rng);
  Sequence out;
  out.reserve(keep + 2);
  out.push_back(Tokenizer::kCls);
  out.insert(out.end(), seq.begin() + static_cast<std::ptrdiff_t>(start),
             seq.begin() + static_cast<std::ptrdiff_t>(start + keep));
  out.push_back(Tokenizer::kSep);
  return out;
}

double batch_loss_and_grad(const EncoderParams<float>& params, const MlmBatch& batch, int threads,
                           EncoderParams<float>& grads) {
  if (threads <= 1 || batch.size() < 2) return mlm_loss_and_grad(params, batch, grads);
  const std::size_t parts = std::min<std::size_t>(static_cast<std::size_t>(threads), batch.size());
  std::vector<MlmBatch> chunks(parts);
  for (std::size_t i = 0; i < batch.size(); ++i) chunks[i * parts / batch.size()].push_back(batch[i]);
  std::vector<EncoderParams<float>> part_grads(parts);
  std::vector<double> losses(parts, 0.0);
  std::vector<std::int64_t> counts(parts, 0);
  std::vector<std::exception_ptr> errors(parts);
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < parts; ++t) {
    for (const auto& ex : chunks[t]) counts[t] += static_cast<std::int64_t>(ex.positions.size());
    workers.emplace_back([&, t] {
      try {
        if (counts[t] > 0) losses[t] = mlm_loss_and_grad(params, chunks[t], part_grads[t]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw UsageError("batch has no masked positions");
  grads = EncoderParams<float>::zeros(params.config);
  auto dst = param_slots(grads);
  double loss = 0.0;
  for (std::size_t t = 0; t < parts; ++t) {
    if (counts[t] == 0) continue;
    const double w = static_cast<double>(counts[t]) / static_cast<double>(total);
    loss += w * losses[t];
    auto src = param_slots(std::as_const(part_grads[t]));
    for (std::size_t s = 0; s < dst.size(); ++s) {
      for (std::size_t i = 0; i < dst[s].size; ++i) dst[s].data[i] += static_cast<float>(w * src[s].data[i]);
    }
  }
  return loss;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

std::vector<std::vector<std::string>> split_table(std::string_view text, char sep, std::size_t columns) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, sep)) fields.push_back(field);
    if (fields.size() != columns) throw DataError("malformed table row '" + line + "'");
    rows.push_back(std::move(fields));
  }
  return rows;
}

template <class T>
T parse_number(const std::string& s) {
  T value{};
  if constexpr (std::is_floating_point_v<T>) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw DataError("bad number '" + s + "'");
    value = static_cast<T>(v);
  } else {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad integer '" + s + "'");
  }
  return value;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (batch_size < 1) throw UsageError("batch_size must be at least 1");
  if (total_steps < 1) throw UsageError("total_steps must be at least 1");
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw UsageError("mask_prob must lie in (0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw UsageError("adam_eps must be positive");
  if (weight_decay < 0.0) throw UsageError("weight_decay must be non-negative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw UsageError("warmup_fraction must lie in [0, 1)");
  if (snapshot_every < 1) throw UsageError("snapshot_every must be at least 1");
  if (train_seq_len != 0 && train_seq_len < 3) throw UsageError("train_seq_len must be 0 or at least 3");
  if (threads < 1) throw UsageError("threads must be at least 1");
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json doc{{"learning_rate", learning_rate},   {"batch_size", batch_size},
                             {"total_steps", total_steps},       {"mask_prob", mask_prob},
                             {"beta1", beta1},                   {"beta2", beta2},
                             {"adam_eps", adam_eps},             {"weight_decay", weight_decay},
                             {"warmup_fraction", warmup_fraction}, {"seed", seed},
                             {"snapshot_every", snapshot_every}, {"snapshot_initial", snapshot_initial},
                             {"train_seq_len", train_seq_len},   {"threads", threads}};
  return doc.dump();
}

double scheduled_lr(const TrainConfig& config, int step) {
  const double total = config.total_steps;
  const double warmup = std::floor(config.warmup_fraction * total);
  if (warmup > 0 && step <= warmup) return config.learning_rate * step / warmup;
  const double remaining = total - warmup;
  return config.learning_rate * std::max(0.0, (total - step + 1) / remaining);
}

TrainResult train(const std::vector<Sequence>& corpus, const Tokenizer& tokenizer, const EncoderConfig& encoder_config,
                  const TrainConfig& config, const std::filesystem::path& snapshot_dir, const FrozenSet& frozen,
                  const EncoderParams<float>* initial, const TrainProgress& progress) {
  config.validate();
  encoder_config.validate();
  if (corpus.empty()) throw DataError("training corpus is empty");
  if (tokenizer.size() > encoder_config.vocab_size) throw UsageError("tokenizer is larger than vocab_size");
  for (const auto& seq : corpus) {
    if (static_cast<int>(seq.size()) > encoder_config.max_seq_len) {
      throw UsageError("corpus sequence longer than max_seq_len");
    }
  }

  TrainResult result;
  result.params = initial ? *initial : EncoderParams<float>::initialize(encoder_config, derive_seed(config.seed, 0));
  if (initial && initial->config.to_json() != encoder_config.to_json()) {
    throw UsageError("initial parameters do not match the encoder config");
  }
  auto slots = param_slots(result.params);

  std::vector<std::vector<float>> m1(slots.size()), m2(slots.size());
  std::vector<std::vector<char>> frozen_mask(slots.size());
  std::vector<bool> decays(slots.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    m1[s].assign(slots[s].size, 0.0f);
    m2[s].assign(slots[s].size, 0.0f);
    decays[s] = slots[s].shape.size() == 2 && slots[s].name.find("LayerNorm") == std::string::npos;
    if (auto it = frozen.find(slots[s].name); it != frozen.end()) {
      frozen_mask[s].assign(slots[s].size, 0);
      for (auto i : it->second) {
        if (i >= slots[s].size) throw UsageError("frozen index out of range for '" + slots[s].name + "'");
        frozen_mask[s][i] = 1;
      }
    }
  }
  for (const auto& [name, idx] : frozen) {
    if (std::none_of(slots.begin(), slots.end(), [&](const auto& s) { return s.name == name; })) {
      throw UsageError("frozen tensor '" + name + "' is not a model parameter");
    }
  }

  std::set<int> snapshot_steps;
  if (!snapshot_dir.empty()) {
    std::filesystem::create_directories(snapshot_dir);
    if (config.snapshot_initial) snapshot_steps.insert(0);
    for (int s = config.snapshot_every; s <= config.total_steps; s += config.snapshot_every) snapshot_steps.insert(s);
    snapshot_steps.insert(config.total_steps);
  }
  auto snapshot = [&](int step) {
    if (!snapshot_steps.count(step)) return;
    auto ckpt = params_to_checkpoint(result.params);
    attach_tokenizer(ckpt, tokenizer);
    ckpt.metadata()[kMetaStep] = std::to_string(step);
    char name[40];
    std::snprintf(name, sizeof name, "step_%06d.safetensors", step);
    const auto path = snapshot_dir / name;
    write_checkpoint(ckpt, path);
    result.snapshots.push_back(path);
  };

  snapshot(0);
  std::mt19937_64 rng(derive_seed(config.seed, 1));
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  EncoderParams<float> grads;
  for (int step = 1; step <= config.total_steps; ++step) {
    MlmBatch batch;
    batch.reserve(config.batch_size);
    for (int b = 0; b < config.batch_size; ++b) {
      batch.push_back(mask_sequence(crop(corpus[pick(rng)], config.train_seq_len, rng), config.mask_prob, rng));
    }
    const double loss = batch_loss_and_grad(result.params, batch, config.threads, grads);
    if (!std::isfinite(loss)) throw NumericError("training diverged at step " + std::to_string(step));

    const double lr = scheduled_lr(config, step);
    const double bc1 = 1.0 - std::pow(config.beta1, step);
    const double bc2 = 1.0 - std::pow(config.beta2, step);
    auto gslots = param_slots(grads);
    for (std::size_t s = 0; s < slots.size(); ++s) {
      float* w = slots[s].data;
      const float* g = gslots[s].data;
      const bool has_frozen = !frozen_mask[s].empty();
      for (std::size_t i = 0; i < slots[s].size; ++i) {
        if (has_frozen && frozen_mask[s][i]) continue;
        const double gi = g[i];
        m1[s][i] = static_cast<float>(config.beta1 * m1[s][i] + (1.0 - config.beta1) * gi);
        m2[s][i] = static_cast<float>(config.beta2 * m2[s][i] + (1.0 - config.beta2) * gi * gi);
        const double update = (m1[s][i] / bc1) / (std::sqrt(m2[s][i] / bc2) + config.adam_eps);
        double wi = w[i];
        if (decays[s]) wi -= lr * config.weight_decay * wi;
        wi -= lr * update;
        w[i] = static_cast<float>(wi);
      }
    }
    result.loss_log.push_back({step, loss});
    if (progress) progress(step, loss);
    snapshot(step);
  }
  return result;
}

std::string loss_log_csv(const std::vector<LossRecord>& log) {
  std::string out = "step,loss\n";
  for (const auto& r : log) out += std::to_string(r.step) + "," + format_double(r.loss) + "\n";
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<TrajectoryPoint> track_ln_trajectories(const std::vector<std::pair<std::int64_t, Checkpoint>>& snapshots,
                                                   const ModelSchema& schema, double k_sigma) {
  std::vector<TrajectoryPoint> series;
  for (const auto& [step, ckpt] : snapshots) {
    TrajectoryPoint point;
    point.step = step;
    for (int layer = 0; layer < schema.num_layers; ++layer) {
      const auto g = resolve(ckpt, schema, {Role::output_ln_gamma, layer}).to_floats();
      const auto b = resolve(ckpt, schema, {Role::output_ln_beta, layer}).to_floats();
      point.layers.push_back(layer_stats(g, b, k_sigma, layer));
      point.gamma.push_back(g);
      point.beta.push_back(b);
    }
    series.push_back(std::move(point));
  }
  std::stable_sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  return series;
}

std::vector<TrajectoryPoint> track_ln_trajectories(const std::vector<std::filesystem::path>& snapshot_paths,
                                                   const ModelSchema& schema, double k_sigma) {
  std::vector<std::pair<std::int64_t, Checkpoint>> loaded;
  for (std::size_t i = 0; i < snapshot_paths.size(); ++i) {
    auto ckpt = read_checkpoint(snapshot_paths[i]);
    std::int64_t step = static_cast<std::int64_t>(i);
    if (auto it = ckpt.metadata().find(kMetaStep); it != ckpt.metadata().end()) {
      step = parse_number<std::int64_t>(it->second);
    }
    loaded.emplace_back(step, std::move(ckpt));
  }
  // same stable order as the series sort
  std::vector<std::size_t> order(loaded.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return loaded[a].first < loaded[b].first; });
  auto series = track_ln_trajectories(loaded, schema, k_sigma);
  for (std::size_t i = 0; i < series.size(); ++i) series[i].path = snapshot_paths[order[i]];
  return series;
}

std::vector<TrajectoryRow> trajectory_rows(const std::vector<TrajectoryPoint>& series) {
  std::vector<TrajectoryRow> rows;
  for (const auto& p : series) {
    for (std::size_t l = 0; l < p.gamma.size(); ++l) {
      for (std::size_t d = 0; d < p.gamma[l].size(); ++d) {
        rows.push_back({p.step, static_cast<int>(l), static_cast<int>(d), p.gamma[l][d], p.beta[l][d]});
      }
    }
  }
  return rows;
}

std::string trajectory_tsv(const std::vector<TrajectoryPoint>& series) {
  std::string out = "step\tlayer\tdim\tgamma\tbeta\n";
  for (const auto& r : trajectory_rows(series)) {
    out += std::to_string(r.step) + "\t" + std::to_string(r.layer) + "\t" + std::to_string(r.dim) + "\t" +
           format_float(r.gamma) + "\t" + format_float(r.beta) + "\n";
  }
  return out;
}

std::vector<TrajectoryRow> parse_trajectory_tsv(std::string_view text) {
  std::vector<TrajectoryRow> rows;
  for (const auto& f : split_table(text, '\t', 5)) {
    rows.push_back({parse_number<std::int64_t>(f[0]), parse_number<int>(f[1]), parse_number<int>(f[2]),
                    parse_number<float>(f[3]), parse_number<float>(f[4])});
  }
  return rows;
}

std::string trajectory_stats_csv(const std::vector<TrajectoryPoint>& series) {
  std::string out = "step,layer,gamma_mean,gamma_std,gamma_gt_k,beta_mean,beta_std,beta_gt_k\n";
  for (const auto& p : series) {
    for (const auto& s : p.layers) {
      out += std::to_string(p.step) + "," + std::to_string(s.layer) + "," + format_double(s.gamma.mean) + "," +
             format_double(s.gamma.std) + "," + std::to_string(s.gamma.count_gt_k) + "," + format_double(s.beta.mean) +
             "," + format_double(s.beta.std) + "," + std::to_string(s.beta.count_gt_k) + "\n";
    }
  }
  return out;
}

std::vector<TrajectoryStatsRow> parse_trajectory_stats_csv(std::string_view text) {
  std::vector<TrajectoryStatsRow> rows;
  for (const auto& f : split_table(text, ',', 8)) {
    rows.push_back({parse_number<std::int64_t>(f[0]), parse_number<int>(f[1]), parse_number<double>(f[2]),
                    parse_number<double>(f[3]), parse_number<int>(f[4]), parse_number<double>(f[5]),
                    parse_number<double>(f[6]), parse_number<int>(f[7])});
  }
  return rows;
}

}  // namespace lnscope
