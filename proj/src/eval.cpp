#include "lnscope/eval.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "lnscope/error.hpp"

namespace lnscope {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void check_corpus(const EncoderParams<float>& params, const std::vector<Sequence>& corpus) {
  if (corpus.empty()) throw DataError("evaluation corpus is empty");
  for (const auto& seq : corpus) {
    if (static_cast<int>(seq.size()) > params.config.max_seq_len) {
      throw DataError("corpus sequence longer than the model's max_seq_len");
    }
    for (int id : seq) {
      if (id < 0 || id >= params.config.vocab_size) throw DataError("vocabulary mismatch: token id " + std::to_string(id));
    }
  }
}

EvalResult finish(std::string label, const LossSum& sum) {
  EvalResult r;
  r.label = std::move(label);
  r.cross_entropy = sum.mean();
  r.masked_token_count = sum.count;
  return r;
}

EvalResult evaluate_plan(const EncoderParams<float>& params, const Checkpoint& base, const ModelSchema& schema,
                         const std::vector<MlmExample>& examples, const MaskPlan& plan, const EvalConfig& config,
                         std::string label) {
  auto masked = plan.empty() ? params : params_from_checkpoint(apply_mask(base, schema, plan));
  auto r = finish(std::move(label), evaluate_examples(masked, examples, config.threads));
  r.plan_digest = plan_digest(plan);
  r.modified_weight_count = count_modified_weights(plan, schema, base);
  return r;
}

}  // namespace

void EvalConfig::validate() const {
  if (max_seq_len < 3) throw UsageError("max_seq_len must be at least 3");
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw UsageError("mask_prob must lie in (0, 1)");
  if (num_random_runs < 1) throw UsageError("num_random_runs must be at least 1");
  if (threads < 1) throw UsageError("threads must be at least 1");
}

std::string EvalConfig::to_json() const {
  nlohmann::ordered_json doc{{"max_seq_len", max_seq_len},
                             {"mask_prob", mask_prob},
                             {"seed", seed},
                             {"num_random_runs", num_random_runs},
                             {"threads", threads},
                             {"ce_reduction", "mean over all masked tokens"}};
  return doc.dump();
}

std::vector<MlmExample> eval_examples(const std::vector<Sequence>& corpus, const EvalConfig& config) {
  config.validate();
  std::vector<MlmExample> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::mt19937_64 rng(derive_seed(config.seed, i));
    out.push_back(mask_sequence(corpus[i], config.mask_prob, rng));
  }
  return out;
}

LossSum evaluate_examples(const EncoderParams<float>& params, const std::vector<MlmExample>& examples, int threads) {
  std::vector<LossSum> sums(examples.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) sums[i] = mlm_loss_sum(params, examples[i]);
  };
  const std::size_t parts = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, examples.size());
  if (parts <= 1) {
    work(0, examples.size());
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(parts);
    for (std::size_t t = 0; t < parts; ++t) {
      workers.emplace_back([&, t] {
        try {
          work(t * examples.size() / parts, (t + 1) * examples.size() / parts);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  LossSum total;
  for (const auto& s : sums) {
    total.ce_sum += s.ce_sum;
    total.count += s.count;
  }
  if (total.count == 0) throw DataError("evaluation produced no masked positions");
  return total;
}

EncoderParams<float> masked_params(const EncoderParams<float>& params, const ModelSchema& schema, const MaskPlan& plan) {
  return params_from_checkpoint(apply_mask(params_to_checkpoint(params), schema, plan));
}

EvalResult evaluate(const EncoderParams<float>& params, const std::vector<Sequence>& corpus, const EvalConfig& config) {
  check_corpus(params, corpus);
  auto r = finish("baseline", evaluate_examples(params, eval_examples(corpus, config), config.threads));
  r.plan_digest = plan_digest(MaskPlan{});
  return r;
}

EvalResult evaluate(const EncoderParams<float>& params, const ModelSchema& schema, const std::vector<Sequence>& corpus,
                    const MaskPlan& plan, const EvalConfig& config) {
  check_corpus(params, corpus);
  const auto base = params_to_checkpoint(params);
  return evaluate_plan(params, base, schema, eval_examples(corpus, config), plan, config,
                       plan.empty() ? "baseline" : "plan");
}

SweepResult sweep_dims(const EncoderParams<float>& params, const ModelSchema& schema,
                       const std::vector<Sequence>& corpus, const EvalConfig& config) {
  check_corpus(params, corpus);
  const auto base = params_to_checkpoint(params);
  const auto examples = eval_examples(corpus, config);
  std::vector<int> all_layers(schema.num_layers);
  std::iota(all_layers.begin(), all_layers.end(), 0);
  SweepResult out;
  out.baseline = evaluate_plan(params, base, schema, examples, MaskPlan{}, config, "baseline");
  for (int d = 0; d < schema.hidden_dim; ++d) {
    const auto plan = plan_ln_pairs({d}, all_layers);
    out.entries.push_back(evaluate_plan(params, base, schema, examples, plan, config, "dim " + std::to_string(d)));
    out.dims.push_back(d);
  }
  return out;
}

std::vector<ComparisonRow> compare_plans(const EncoderParams<float>& params, const ModelSchema& schema,
                                         const std::vector<Sequence>& corpus, const std::vector<PlanCandidate>& plans,
                                         const EvalConfig& config) {
  check_corpus(params, corpus);
  const auto base = params_to_checkpoint(params);
  const auto examples = eval_examples(corpus, config);
  std::vector<ComparisonRow> rows;
  for (std::size_t p = 0; p < plans.size(); ++p) {
    const auto& candidate = plans[p];
    ComparisonRow row;
    if (!candidate.random) {
      row.result = evaluate_plan(params, base, schema, examples, candidate.plan, config, candidate.label);
      row.run_ces.push_back(row.result.cross_entropy);
      rows.push_back(std::move(row));
      continue;
    }
    row.runs = config.num_random_runs;
    double sum = 0.0;
    for (int run = 0; run < config.num_random_runs; ++run) {
      auto spec = *candidate.random;
      spec.seed = derive_seed(derive_seed(config.seed, p), static_cast<std::uint64_t>(run));
      const auto plan = plan_baseline(base, schema, spec);
      auto r = evaluate_plan(params, base, schema, examples, plan, config, candidate.label);
      if (run == 0) row.result = r;
      row.run_ces.push_back(r.cross_entropy);
      sum += r.cross_entropy;
    }
    const double mean = sum / row.runs;
    double ss = 0.0;
    for (double ce : row.run_ces) ss += (ce - mean) * (ce - mean);
    row.result.cross_entropy = mean;
    row.ce_std = std::sqrt(ss / row.runs);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<int> LayerRange::layers() const {
  std::vector<int> out;
  for (int l = first; l <= last; ++l) out.push_back(l);
  return out;
}

std::string LayerRange::label() const {
  if (last < first) return "none";
  return "layers " + std::to_string(first) + "-" + std::to_string(last);
}

SweepResult sweep_layer_ranges(const EncoderParams<float>& params, const ModelSchema& schema,
                               const std::vector<Sequence>& corpus, const OutlierReport& report,
                               const std::vector<LayerRange>& ranges, const EvalConfig& config) {
  check_corpus(params, corpus);
  for (const auto& r : ranges) {
    if (r.last >= r.first && (r.first < 0 || r.last >= schema.num_layers)) {
      throw UsageError("layer range " + r.label() + " outside [0, " + std::to_string(schema.num_layers) + ")");
    }
  }
  const auto base = params_to_checkpoint(params);
  const auto examples = eval_examples(corpus, config);
  SweepResult out;
  out.baseline = evaluate_plan(params, base, schema, examples, MaskPlan{}, config, "baseline");
  for (const auto& r : ranges) {
    const auto layers = r.layers();
    const auto plan = layers.empty() ? MaskPlan{} : plan_outlier_mask(report, layers);
    out.entries.push_back(evaluate_plan(params, base, schema, examples, plan, config, r.label()));
  }
  return out;
}

Heatmap embedding_heatmap(const EncoderParams<float>& params, const Tokenizer& tokenizer, std::string_view text,
                          const std::vector<int>& dims_to_mark) {
  const auto ids = tokenizer.encode(text);
  if (ids.empty()) throw UsageError("heatmap text has no tokens");
  for (int d : dims_to_mark) {
    if (d < 0 || d >= params.config.hidden_dim) throw UsageError("marked dim " + std::to_string(d) + " out of range");
  }
  auto hidden = encoder_forward(params, ids);
  Heatmap out;
  for (int id : ids) out.tokens.push_back(tokenizer.token(id));
  out.layers.assign(std::make_move_iterator(hidden.begin() + 1), std::make_move_iterator(hidden.end()));
  out.marked_dims = dims_to_mark;
  return out;
}

std::string heatmap_tsv(const Heatmap& heatmap) {
  std::string out = "layer\ttoken\tdim\tvalue\n";
  for (std::size_t l = 0; l < heatmap.layers.size(); ++l) {
    const auto& mat = heatmap.layers[l];
    for (Eigen::Index t = 0; t < mat.rows(); ++t) {
      for (Eigen::Index d = 0; d < mat.cols(); ++d) {
        out += std::to_string(l) + "\t" + std::to_string(t) + "\t" + std::to_string(d) + "\t" +
               format_double(mat(t, d)) + "\n";
      }
    }
  }
  return out;
}

AnisotropyReport abnormal_fraction(const std::vector<std::vector<float>>& vectors, const std::vector<int>& dims,
                                   double threshold) {
  AnisotropyReport report;
  report.dims = dims;
  report.threshold = threshold;
  report.rule = "|y[d] - mean(y)| > " + format_double(threshold) + " * std(y), per token";
  report.token_count = static_cast<std::int64_t>(vectors.size());
  std::vector<std::int64_t> hits(dims.size(), 0);
  for (const auto& y : vectors) {
    for (int d : dims) {
      if (d < 0 || d >= static_cast<int>(y.size())) throw UsageError("dim " + std::to_string(d) + " out of range");
    }
    double sum = 0.0;
    for (float v : y) sum += v;
    const double mean = sum / static_cast<double>(y.size());
    double ss = 0.0;
    for (float v : y) ss += (v - mean) * (v - mean);
    const double std = std::sqrt(ss / static_cast<double>(y.size()));
    if (std == 0.0) continue;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (std::abs(y[dims[i]] - mean) > threshold * std) ++hits[i];
    }
  }
  for (auto h : hits) {
    report.fraction_abnormal.push_back(vectors.empty() ? 0.0 : static_cast<double>(h) / static_cast<double>(vectors.size()));
  }
  return report;
}

AnisotropyReport anisotropy_check(const EncoderParams<float>& params, const std::vector<Sequence>& corpus,
                                  const std::vector<int>& dims, double threshold) {
  check_corpus(params, corpus);
  std::vector<std::vector<float>> vectors;
  for (const auto& seq : corpus) {
    const auto hidden = encoder_forward(params, seq);
    const auto& last = hidden.back();
    for (Eigen::Index t = 0; t < last.rows(); ++t) vectors.emplace_back(last.row(t).begin(), last.row(t).end());
  }
  return abnormal_fraction(vectors, dims, threshold);
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "label,weights,ce,runs,ce_std\n";
  for (const auto& r : rows) {
    out += r.result.label + "," + std::to_string(r.result.modified_weight_count) + "," +
           format_double(r.result.cross_entropy) + "," + std::to_string(r.runs) + "," + format_double(r.ce_std) + "\n";
  }
  return out;
}

std::string sweep_csv(const SweepResult& sweep) {
  std::string out = "label,weights,ce\n";
  auto row = [&](const EvalResult& r) {
    out += r.label + "," + std::to_string(r.modified_weight_count) + "," + format_double(r.cross_entropy) + "\n";
  };
  row(sweep.baseline);
  for (const auto& e : sweep.entries) row(e);
  return out;
}

std::string sweep_tsv(const SweepResult& sweep) {
  std::string out = "dim\tce\n";
  for (std::size_t i = 0; i < sweep.entries.size(); ++i) {
    const int dim = i < sweep.dims.size() ? sweep.dims[i] : static_cast<int>(i);
    out += std::to_string(dim) + "\t" + format_double(sweep.entries[i].cross_entropy) + "\n";
  }
  return out;
}

}  // namespace lnscope
