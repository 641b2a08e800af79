#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lnscope/digest.hpp"
#include "lnscope/encoder.hpp"
#include "lnscope/error.hpp"
#include "lnscope/eval.hpp"
#include "lnscope/mask.hpp"
#include "lnscope/outlier.hpp"
#include "lnscope/schema.hpp"
#include "lnscope/text.hpp"
#include "lnscope/train.hpp"

namespace lnscope::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";
constexpr std::uint64_t kDefaultSeed = 0;
constexpr const char* kMetaManifest = "lnscope.manifest";
constexpr const char* kMetaPlan = "lnscope.plan";

// "1,3,5-7" -> {1, 3, 5, 6, 7}
std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      const auto dash = item.find('-', 1);
      if (dash == std::string::npos) {
        out.push_back(std::stoi(item));
      } else {
        const int a = std::stoi(item.substr(0, dash));
        const int b = std::stoi(item.substr(dash + 1));
        if (b < a) throw UsageError("descending range '" + item + "'");
        for (int v = a; v <= b; ++v) out.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw UsageError("bad integer list '" + text + "'");
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> all_layers(const ModelSchema& schema) {
  std::vector<int> layers(schema.num_layers);
  std::iota(layers.begin(), layers.end(), 0);
  return layers;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  Sha256 sha;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    sha.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return sha.hex_digest();
}

// State shared by every subcommand.
struct Context {
  std::vector<std::string> args;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
  CLI::App* command = nullptr;

  std::string preset;
  std::string schema_path;
  bool deterministic = false;
  int threads = 1;
  std::string report_path;

  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256

  void input(const fs::path& path) { inputs[path.string()] = file_digest(path); }
  void output(const fs::path& path) { outputs[path.string()] = file_digest(path); }

  json config() const {
    json cfg = json::object();
    for (const auto* opt : command->get_options()) {
      const auto name = opt->get_name(false, true);
      if (name.empty() || name == "--help" || name == "-h" || name == "--help,-h") continue;
      std::string key = opt->get_single_name();
      if (opt->count() > 0) {
        const auto& results = opt->results();
        if (opt->get_type_size_max() == 0) {
          cfg[key] = true;
        } else if (results.size() == 1 && opt->get_expected_max() <= 1) {
          cfg[key] = results.front();
        } else {
          cfg[key] = results;
        }
      } else {
        const auto def = opt->get_default_str();
        if (opt->get_type_size_max() == 0) {
          cfg[key] = false;
        } else if (!def.empty()) {
          cfg[key] = def;
        } else {
          cfg[key] = nullptr;
        }
      }
    }
    return cfg;
  }

  json manifest() const {
    json m;
    m["tool"] = "lnscope";
    m["version"] = kVersion;
    m["command"] = command->get_name();
    m["argv"] = args;
    m["config"] = config();
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    if (!deterministic) m["timestamp"] = utc_timestamp();
    return m;
  }

  // Writes `body` plus the manifest to --report, or prints it.
  void emit(json body) const {
    body["manifest"] = manifest();
    const auto text = body.dump(2) + "\n";
    if (report_path.empty()) {
      *out << text;
    } else {
      write_text_file(report_path, text);
    }
  }

  // Data output: a file when `path` is set, stdout otherwise.
  void write_data(const std::string& path, const std::string& text) {
    if (path.empty()) {
      *out << text;
      return;
    }
    write_text_file(path, text);
    output(path);
  }
};

void add_common(CLI::App* sub, Context& ctx, bool with_schema = true) {
  if (with_schema) {
    sub->add_option("--preset", ctx.preset, "Schema preset name")->check(CLI::IsMember(preset_names()));
    sub->add_option("--schema", ctx.schema_path, "Schema JSON file")->check(CLI::ExistingFile);
  }
  sub->add_flag("--deterministic", ctx.deterministic, "Omit the timestamp so reports are byte-reproducible");
  sub->add_option("--threads", ctx.threads, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--report", ctx.report_path, "Write the JSON report here instead of stdout");
}

Checkpoint load_checkpoint(Context& ctx, const std::string& path) {
  auto ckpt = read_checkpoint(path);
  ctx.input(path);
  return ckpt;
}

ModelSchema resolve_schema(Context& ctx, const Checkpoint& ckpt) {
  if (!ctx.schema_path.empty() && !ctx.preset.empty()) throw UsageError("--preset and --schema are exclusive");
  if (!ctx.schema_path.empty()) {
    ctx.input(ctx.schema_path);
    return load_schema(ctx.schema_path);
  }
  if (!ctx.preset.empty()) return preset_schema(ctx.preset);
  if (is_mini_encoder_checkpoint(ckpt)) return mini_encoder_schema(config_from_checkpoint(ckpt));
  throw UsageError("unknown checkpoint layout: pass --preset or --schema");
}

struct Model {
  Checkpoint checkpoint;
  ModelSchema schema;
  EncoderParams<float> params;
  Tokenizer tokenizer = Tokenizer::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"});
};

Model load_model(Context& ctx, const std::string& path) {
  Model m;
  m.checkpoint = load_checkpoint(ctx, path);
  if (!is_mini_encoder_checkpoint(m.checkpoint)) {
    throw DataError("'" + path + "' is not a mini-encoder checkpoint; evaluation needs a runnable model");
  }
  m.schema = resolve_schema(ctx, m.checkpoint);
  m.params = params_from_checkpoint(m.checkpoint);
  m.tokenizer = tokenizer_from_checkpoint(m.checkpoint);
  return m;
}

std::vector<Sequence> load_eval_corpus(Context& ctx, const std::string& path, const Tokenizer& tokenizer,
                                       const EvalConfig& config) {
  auto corpus = load_corpus(path, tokenizer, config.max_seq_len);
  ctx.input(path);
  return corpus;
}

struct DetectOptions {
  std::optional<double> k_sigma;
  std::optional<double> layer_fraction;
  std::optional<bool> require_both;
  std::string roles;
};

void add_detect_options(CLI::App* sub, DetectOptions& o) {
  sub->add_option("--k-sigma", o.k_sigma, "Flag |z| > k (schema default when omitted)");
  sub->add_option("--layer-fraction", o.layer_fraction, "Fraction of layers a dim must be flagged in");
  sub->add_option("--require-both", o.require_both, "Require every role to flag a dim in a layer (true/false)");
  sub->add_option("--roles", o.roles, "Comma-separated vector roles (default output_ln_gamma,output_ln_beta)");
}

DetectionConfig detection_config(const DetectOptions& o, const ModelSchema& schema) {
  auto cfg = detection_defaults(schema);
  if (o.k_sigma) cfg.k_sigma = *o.k_sigma;
  if (o.layer_fraction) cfg.layer_fraction = *o.layer_fraction;
  if (o.require_both) cfg.require_both = *o.require_both;
  if (!o.roles.empty()) {
    cfg.roles.clear();
    std::stringstream ss(o.roles);
    std::string item;
    while (std::getline(ss, item, ',')) cfg.roles.push_back(role_from_name(item));
  }
  cfg.validate();
  return cfg;
}

// Outlier report from a saved detect report, or detected on the spot.
OutlierReport outlier_source(Context& ctx, const std::string& report_file, const DetectOptions& detect,
                             const Checkpoint& ckpt, const ModelSchema& schema) {
  if (!report_file.empty()) {
    ctx.input(report_file);
    auto report = report_from_json(read_text_file(report_file));
    if (report.checkpoint_digest != checkpoint_digest(ckpt)) {
      *ctx.err << "warning: outlier report was computed on a different checkpoint\n";
    }
    return report;
  }
  return detect_outliers(ckpt, schema, detection_config(detect, schema));
}

struct EvalOptions {
  std::string corpus;
  EvalConfig config;
};

void add_eval_options(CLI::App* sub, EvalOptions& o, bool random_runs = false) {
  o.config.seed = kDefaultSeed;
  sub->add_option("--corpus", o.corpus, "Plain-text evaluation corpus")->required()->check(CLI::ExistingFile);
  sub->add_option("--max-seq-len", o.config.max_seq_len, "Chunk length including [CLS]/[SEP]");
  sub->add_option("--mask-prob", o.config.mask_prob, "Fraction of content tokens masked");
  sub->add_option("--seed", o.config.seed, "Seed for masked positions and random plans");
  if (random_runs) sub->add_option("--runs", o.config.num_random_runs, "Random-baseline runs averaged per row");
}

json eval_json(const EvalResult& r) {
  return json{{"label", r.label},
              {"cross_entropy", r.cross_entropy},
              {"masked_token_count", r.masked_token_count},
              {"plan_digest", r.plan_digest},
              {"modified_weight_count", r.modified_weight_count}};
}

json rows_json(const std::vector<ComparisonRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    auto j = eval_json(r.result);
    j["runs"] = r.runs;
    j["ce_std"] = r.ce_std;
    out.push_back(std::move(j));
  }
  return out;
}

// ---- commands ----

int cmd_stats(Context& ctx, const std::string& ckpt_path, const std::string& out_path, const std::string& dims,
              const DetectOptions& detect) {
  const auto ckpt = load_checkpoint(ctx, ckpt_path);
  const auto schema = resolve_schema(ctx, ckpt);
  const auto report = detect_outliers(ckpt, schema, detection_config(detect, schema));
  const auto tracked = dims.empty() ? report.outlier_dims : parse_int_list(dims);
  const auto csv = stats_csv(report, tracked, ckpt, schema);
  ctx.write_data(out_path, csv);
  if (!ctx.report_path.empty()) {
    ctx.emit(json{{"schema", schema.name}, {"tracked_dims", tracked}, {"outlier_dims", report.outlier_dims}});
  }
  return kOk;
}

int cmd_detect(Context& ctx, const std::string& ckpt_path, const std::string& out_path, const DetectOptions& detect) {
  const auto ckpt = load_checkpoint(ctx, ckpt_path);
  const auto schema = resolve_schema(ctx, ckpt);
  const auto report = detect_outliers(ckpt, schema, detection_config(detect, schema));
  auto body = json::parse(report_to_json(report));
  body["schema"] = schema.name;
  if (!out_path.empty()) ctx.report_path = out_path;
  ctx.emit(std::move(body));
  return kOk;
}

struct MaskOptions {
  std::string checkpoint;
  std::string out;
  std::string plan_file;
  std::string dims;
  std::string layers;
  std::string from_report;
  bool outliers = false;
  std::string baseline;
  int n = 1;
  std::uint64_t seed = kDefaultSeed;
  std::string exclude;
  bool exclude_outliers = false;
  std::string mode = "ln-pair";
  std::string role = "output_ln_gamma";
  std::string save_plan;
  DetectOptions detect;
};

MaskPlan build_plan(Context& ctx, const MaskOptions& o, const Checkpoint& ckpt, const ModelSchema& schema) {
  const int sources = !o.plan_file.empty() + !o.dims.empty() + !o.baseline.empty() + (o.outliers || !o.from_report.empty());
  if (sources != 1) throw UsageError("give exactly one of --plan, --dims, --baseline, --outliers/--from-report");
  if (!o.plan_file.empty()) {
    ctx.input(o.plan_file);
    return plan_from_json(read_text_file(o.plan_file));
  }
  const auto layers = o.layers.empty() ? all_layers(schema) : parse_int_list(o.layers);
  const auto mode = mask_mode_from_name(o.mode);
  const auto role = role_from_name(o.role);
  if (!o.baseline.empty()) {
    if (mode != MaskMode::ln_pair) throw UsageError("baselines produce ln-pair plans");
    BaselineSpec spec;
    spec.kind = baseline_kind_from_name(o.baseline);
    spec.n = o.n;
    spec.seed = o.seed;
    spec.gamma_role = role;
    spec.exclude = parse_int_list(o.exclude);
    if (o.exclude_outliers) {
      const auto report = detect_outliers(ckpt, schema, detection_config(o.detect, schema));
      spec.exclude.insert(spec.exclude.end(), report.outlier_dims.begin(), report.outlier_dims.end());
    }
    auto plan = plan_baseline(ckpt, schema, spec);
    return plan;
  }
  std::vector<int> dims;
  Provenance provenance = Provenance::manual;
  if (!o.dims.empty()) {
    dims = parse_int_list(o.dims);
  } else {
    dims = outlier_source(ctx, o.from_report, o.detect, ckpt, schema).outlier_dims;
    provenance = Provenance::outliers;
    if (dims.empty()) throw DataError("no outlier dims to mask");
  }
  if (mode == MaskMode::dense_row) {
    auto plan = plan_dense_row_mask(dims, layers);
    plan.provenance = provenance;
    return plan;
  }
  if (mode == MaskMode::vector_dims) {
    MaskPlan plan;
    plan.provenance = provenance;
    plan.entries.push_back({role, layers, dims, MaskMode::vector_dims});
    plan.normalize();
    return plan;
  }
  return plan_ln_pairs(dims, layers, role, provenance);
}

int cmd_mask(Context& ctx, const MaskOptions& o) {
  if (fs::exists(o.out) && fs::equivalent(o.out, o.checkpoint)) throw UsageError("--out must differ from the input");
  const auto ckpt = load_checkpoint(ctx, o.checkpoint);
  const auto schema = resolve_schema(ctx, ckpt);
  const auto plan = build_plan(ctx, o, ckpt, schema);
  auto masked = apply_mask(ckpt, schema, plan);
  masked.metadata()[kMetaPlan] = plan_to_json(plan);
  masked.metadata()[kMetaManifest] = ctx.manifest().dump();
  write_checkpoint(masked, o.out);
  ctx.output(o.out);
  if (!o.save_plan.empty()) {
    write_text_file(o.save_plan, plan_to_json(plan) + "\n");
    ctx.output(o.save_plan);
  }
  ctx.emit(json{{"plan", json::parse(plan_to_json(plan))},
                {"plan_digest", plan_digest(plan)},
                {"modified_weight_count", count_modified_weights(plan, schema, ckpt)},
                {"checkpoint_digest", checkpoint_digest(masked)}});
  return kOk;
}

int cmd_eval(Context& ctx, const std::string& ckpt_path, EvalOptions& o, const std::string& plan_file) {
  auto model = load_model(ctx, ckpt_path);
  o.config.threads = ctx.threads;
  const auto corpus = load_eval_corpus(ctx, o.corpus, model.tokenizer, o.config);
  MaskPlan plan;
  if (!plan_file.empty()) {
    ctx.input(plan_file);
    plan = plan_from_json(read_text_file(plan_file));
  }
  const auto result = evaluate(model.params, model.schema, corpus, plan, o.config);
  ctx.emit(json{{"result", eval_json(result)}, {"eval_config", json::parse(o.config.to_json())}});
  return kOk;
}

int cmd_sweep(Context& ctx, const std::string& ckpt_path, EvalOptions& o, const std::string& out_path) {
  auto model = load_model(ctx, ckpt_path);
  o.config.threads = ctx.threads;
  const auto corpus = load_eval_corpus(ctx, o.corpus, model.tokenizer, o.config);
  const auto sweep = sweep_dims(model.params, model.schema, corpus, o.config);
  ctx.write_data(out_path, sweep_tsv(sweep));
  std::vector<int> order(sweep.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return sweep.entries[a].cross_entropy > sweep.entries[b].cross_entropy;
  });
  json top = json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(5, order.size()); ++i) {
    top.push_back({{"dim", sweep.dims[order[i]]}, {"cross_entropy", sweep.entries[order[i]].cross_entropy}});
  }
  if (!out_path.empty() || !ctx.report_path.empty()) {
    ctx.emit(json{{"baseline", eval_json(sweep.baseline)}, {"top_dims", top}});
  }
  return kOk;
}

std::vector<LayerRange> parse_ranges(const std::string& text, int num_layers) {
  std::vector<LayerRange> ranges;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all") {
      ranges.push_back({0, num_layers - 1});
    } else if (item == "none") {
      ranges.push_back({0, -1});
    } else {
      const auto ints = parse_int_list(item);
      if (ints.empty()) throw UsageError("bad layer range '" + item + "'");
      ranges.push_back({ints.front(), ints.back()});
    }
  }
  return ranges;
}

int cmd_layers(Context& ctx, const std::string& ckpt_path, EvalOptions& o, const std::string& ranges_text,
               const std::string& report_file, const DetectOptions& detect, const std::string& out_path) {
  auto model = load_model(ctx, ckpt_path);
  o.config.threads = ctx.threads;
  const auto corpus = load_eval_corpus(ctx, o.corpus, model.tokenizer, o.config);
  const auto report = outlier_source(ctx, report_file, detect, model.checkpoint, model.schema);
  const auto sweep = sweep_layer_ranges(model.params, model.schema, corpus, report,
                                        parse_ranges(ranges_text, model.schema.num_layers), o.config);
  ctx.write_data(out_path, sweep_csv(sweep));
  json rows = json::array();
  for (const auto& e : sweep.entries) rows.push_back(eval_json(e));
  if (!out_path.empty() || !ctx.report_path.empty()) {
    ctx.emit(json{{"outlier_dims", report.outlier_dims}, {"baseline", eval_json(sweep.baseline)}, {"rows", rows}});
  }
  return kOk;
}

// Table-4 style comparison: baseline, random, LSF, LB and outlier rows with
// the same number of (layer, dim) slots.
int cmd_ablate(Context& ctx, const std::string& ckpt_path, EvalOptions& o, const std::string& report_file,
               const DetectOptions& detect, const std::string& layers_text, const std::string& out_path) {
  auto model = load_model(ctx, ckpt_path);
  o.config.threads = ctx.threads;
  const auto corpus = load_eval_corpus(ctx, o.corpus, model.tokenizer, o.config);
  const auto report = outlier_source(ctx, report_file, detect, model.checkpoint, model.schema);
  if (report.outlier_dims.empty()) throw DataError("no outlier dims detected; nothing to ablate");
  const auto layers = layers_text.empty() ? all_layers(model.schema) : parse_int_list(layers_text);
  const auto outlier_plan = plan_outlier_mask(report, layers);
  const int slots = static_cast<int>(outlier_plan.slot_count());

  std::vector<PlanCandidate> plans;
  plans.push_back({"baseline", MaskPlan{}, std::nullopt});
  if (static_cast<int>(layers.size()) == model.schema.num_layers) {
    BaselineSpec random{BaselineKind::random_dims, static_cast<int>(report.outlier_dims.size()), report.outlier_dims};
    plans.push_back({"random", MaskPlan{}, random});
  } else {
    BaselineSpec random{BaselineKind::random_slots, slots, report.outlier_dims};
    plans.push_back({"random", MaskPlan{}, random});
  }
  const auto ckpt = params_to_checkpoint(model.params);
  plans.push_back({"LSF", plan_baseline(ckpt, model.schema, {.kind = BaselineKind::largest_scaling_factor, .n = slots, .exclude = {}}), std::nullopt});
  plans.push_back({"LB", plan_baseline(ckpt, model.schema, {.kind = BaselineKind::largest_bias, .n = slots, .exclude = {}}), std::nullopt});
  plans.push_back({"outliers", outlier_plan, std::nullopt});
  const auto rows = compare_plans(model.params, model.schema, corpus, plans, o.config);
  ctx.write_data(out_path, comparison_csv(rows));
  if (!out_path.empty() || !ctx.report_path.empty()) {
    ctx.emit(json{{"outlier_dims", report.outlier_dims}, {"rows", rows_json(rows)}});
  }
  return kOk;
}

int cmd_compare(Context& ctx, const std::string& ckpt_path, EvalOptions& o, const std::vector<std::string>& plan_files,
                int random_dims, const std::string& exclude, const std::string& out_path) {
  auto model = load_model(ctx, ckpt_path);
  o.config.threads = ctx.threads;
  const auto corpus = load_eval_corpus(ctx, o.corpus, model.tokenizer, o.config);
  std::vector<PlanCandidate> plans;
  plans.push_back({"baseline", MaskPlan{}, std::nullopt});
  for (const auto& f : plan_files) {
    ctx.input(f);
    plans.push_back({fs::path(f).stem().string(), plan_from_json(read_text_file(f)), std::nullopt});
  }
  if (random_dims > 0) {
    plans.push_back({"random", MaskPlan{}, BaselineSpec{BaselineKind::random_dims, random_dims, parse_int_list(exclude)}});
  }
  const auto rows = compare_plans(model.params, model.schema, corpus, plans, o.config);
  ctx.write_data(out_path, comparison_csv(rows));
  if (!out_path.empty() || !ctx.report_path.empty()) ctx.emit(json{{"rows", rows_json(rows)}});
  return kOk;
}

int cmd_heatmap(Context& ctx, const std::string& ckpt_path, std::string text, const std::string& text_file,
                const std::string& dims, const std::string& out_path) {
  auto model = load_model(ctx, ckpt_path);
  if (!text_file.empty()) {
    text = read_text_file(text_file);
    ctx.input(text_file);
  }
  if (text.empty()) throw UsageError("give --text or --text-file");
  const auto heat = embedding_heatmap(model.params, model.tokenizer, text, parse_int_list(dims));
  ctx.write_data(out_path, heatmap_tsv(heat));
  if (!out_path.empty() || !ctx.report_path.empty()) {
    ctx.emit(json{{"tokens", heat.tokens}, {"layers", heat.layers.size()}, {"marked_dims", heat.marked_dims}});
  }
  return kOk;
}

int cmd_anisotropy(Context& ctx, const std::string& ckpt_path, EvalOptions& o, const std::string& dims,
                   double threshold) {
  auto model = load_model(ctx, ckpt_path);
  const auto corpus = load_eval_corpus(ctx, o.corpus, model.tokenizer, o.config);
  const auto rep = anisotropy_check(model.params, corpus, parse_int_list(dims), threshold);
  ctx.emit(json{{"dims", rep.dims},
                {"fraction_abnormal", rep.fraction_abnormal},
                {"token_count", rep.token_count},
                {"rule", rep.rule}});
  return kOk;
}

struct TrainOptions {
  std::string corpus;
  std::string out_dir;
  EncoderConfig encoder;
  TrainConfig train;
  int vocab_cap = 2048;
  bool quiet = false;
};

int cmd_train(Context& ctx, TrainOptions& o) {
  const auto text = read_text_file(o.corpus);
  ctx.input(o.corpus);
  const auto tokenizer = Tokenizer::build(text, o.vocab_cap);
  o.encoder.vocab_size = tokenizer.size();
  o.train.threads = ctx.threads;
  const auto corpus = tokenize_corpus(text, tokenizer, o.encoder.max_seq_len);
  const fs::path dir = o.out_dir;
  auto result = train(corpus, tokenizer, o.encoder, o.train, dir / "snapshots", {}, nullptr, [&](int step, double loss) {
    if (!o.quiet && (step % 100 == 0 || step == o.train.total_steps)) {
      *ctx.err << "step " << step << " loss " << loss << "\n";
    }
  });
  write_text_file(dir / "loss.csv", loss_log_csv(result.loss_log));
  ctx.output(dir / "loss.csv");
  json snaps = json::array();
  for (const auto& p : result.snapshots) {
    ctx.output(p);
    snaps.push_back(p.string());
  }
  if (ctx.report_path.empty()) ctx.report_path = (dir / "train.report.json").string();
  ctx.emit(json{{"encoder_config", json::parse(o.encoder.to_json())},
                {"train_config", json::parse(o.train.to_json())},
                {"snapshots", snaps},
                {"final_loss", result.loss_log.back().loss},
                {"parameter_count", result.params.parameter_count()}});
  return kOk;
}

int cmd_track(Context& ctx, const std::vector<std::string>& inputs, double k_sigma, const std::string& out_path,
              const std::string& stats_path) {
  std::vector<fs::path> paths;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.path().extension() == ".safetensors") found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      paths.insert(paths.end(), found.begin(), found.end());
    } else {
      paths.emplace_back(in);
    }
  }
  if (paths.empty()) throw UsageError("no snapshots given");
  const auto first = read_checkpoint(paths.front());
  const auto schema = resolve_schema(ctx, first);
  for (const auto& p : paths) ctx.input(p);
  const auto series = track_ln_trajectories(paths, schema, k_sigma);
  ctx.write_data(out_path, trajectory_tsv(series));
  if (!stats_path.empty()) {
    write_text_file(stats_path, trajectory_stats_csv(series));
    ctx.output(stats_path);
  }
  json steps = json::array();
  for (const auto& p : series) steps.push_back(p.step);
  if (!out_path.empty() || !ctx.report_path.empty()) ctx.emit(json{{"steps", steps}, {"schema", schema.name}});
  return kOk;
}

int cmd_fingerprint(Context& ctx, const std::string& ckpt_path, const DetectOptions& detect) {
  const auto ckpt = read_checkpoint(ckpt_path);
  const auto schema = resolve_schema(ctx, ckpt);
  const auto report = detect_outliers(ckpt, schema, detection_config(detect, schema));
  std::string dims;
  for (std::size_t i = 0; i < report.outlier_dims.size(); ++i) {
    dims += (i ? "," : "") + std::to_string(report.outlier_dims[i]);
  }
  *ctx.out << "checkpoint " << report.checkpoint_digest << "\n"
           << "outliers " << (dims.empty() ? "-" : dims) << "\n"
           << "fingerprint " << fingerprint(report) << "\n";
  return kOk;
}

int cmd_replay(Context& ctx, const std::string& report_file) {
  json doc;
  try {
    doc = json::parse(read_text_file(report_file));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  const json* manifest = nullptr;
  if (doc.contains("manifest")) manifest = &doc["manifest"];
  if (!manifest || !manifest->contains("argv")) throw DataError("report has no manifest argv");
  const auto args = manifest->at("argv").get<std::vector<std::string>>();
  if (!args.empty() && args.front() == "replay") throw UsageError("refusing to replay a replay");
  return run(args, *ctx.out, *ctx.err);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Inspect, mask and evaluate LayerNorm outlier dimensions in transformer checkpoints", "lnscope"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Context ctx;
  ctx.args = args;
  ctx.out = &out;
  ctx.err = &err;

  std::string ckpt, out_path, dims, report_file, plan_file, text, text_file, ranges, layers, exclude, stats_out;
  std::vector<std::string> plan_files, inputs;
  DetectOptions detect;
  EvalOptions eval;
  MaskOptions mask;
  TrainOptions tr;
  int random_dims = 0;
  double threshold = 3.0;
  double track_k = 3.0;

  auto* stats = app.add_subcommand("stats", "Per-layer output LayerNorm statistics as CSV");
  stats->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  stats->add_option("--out", out_path, "CSV path (stdout when omitted)");
  stats->add_option("--track-dims", dims, "Dims whose value/rank get columns (default: detected outliers)");
  add_detect_options(stats, detect);
  add_common(stats, ctx);

  auto* det = app.add_subcommand("detect", "Outlier dimension report");
  det->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  det->add_option("--out", out_path, "Report path (stdout when omitted)");
  add_detect_options(det, detect);
  add_common(det, ctx);

  auto* msk = app.add_subcommand("mask", "Write a checkpoint with the planned weights zeroed");
  msk->add_option("checkpoint", mask.checkpoint)->required()->check(CLI::ExistingFile);
  msk->add_option("--out", mask.out, "Masked checkpoint path")->required();
  msk->add_option("--plan", mask.plan_file, "Mask plan JSON")->check(CLI::ExistingFile);
  msk->add_option("--dims", mask.dims, "Dims to mask, e.g. 308,381");
  msk->add_flag("--outliers", mask.outliers, "Mask the detected outlier dims");
  msk->add_option("--from-report", mask.from_report, "Mask the dims of a saved detect report")->check(CLI::ExistingFile);
  msk->add_option("--layers", mask.layers, "Layers (0-based, e.g. 8-11); default all");
  msk->add_option("--baseline", mask.baseline, "random, random-slots, lsf or lb")
      ->check(CLI::IsMember({"random", "random-slots", "lsf", "lb"}));
  msk->add_option("--n", mask.n, "Dims (random) or slots (random-slots, lsf, lb) for baselines");
  msk->add_option("--seed", mask.seed, "Seed for random baselines");
  msk->add_option("--exclude", mask.exclude, "Dims baselines must avoid");
  msk->add_flag("--exclude-outliers", mask.exclude_outliers, "Baselines avoid detected outlier dims");
  msk->add_option("--mode", mask.mode, "ln-pair, dense-row or vector-dims")
      ->check(CLI::IsMember({"ln-pair", "dense-row", "vector-dims"}));
  msk->add_option("--role", mask.role, "Role for ln-pair (γ role) or vector-dims masks");
  msk->add_option("--save-plan", mask.save_plan, "Also write the plan JSON here");
  add_detect_options(msk, mask.detect);
  add_common(msk, ctx);

  auto* ev = app.add_subcommand("eval", "MLM cross-entropy, optionally under a mask plan");
  ev->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--plan", plan_file, "Mask plan JSON")->check(CLI::ExistingFile);
  add_eval_options(ev, eval);
  add_common(ev, ctx);

  auto* sw = app.add_subcommand("sweep", "Mask each dim across all layers in turn (TSV dim, ce)");
  sw->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  sw->add_option("--out", out_path, "TSV path (stdout when omitted)");
  add_eval_options(sw, eval);
  add_common(sw, ctx);

  auto* ly = app.add_subcommand("layers", "Mask outlier dims within layer ranges (CSV label, weights, ce)");
  ly->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  ly->add_option("--ranges", ranges, "Comma-separated 0-based ranges, e.g. 10-11,8-11,all")->required();
  ly->add_option("--outliers", report_file, "Saved detect report")->check(CLI::ExistingFile);
  ly->add_option("--out", out_path, "CSV path (stdout when omitted)");
  add_detect_options(ly, detect);
  add_eval_options(ly, eval);
  add_common(ly, ctx);

  auto* ab = app.add_subcommand("ablate", "Baseline, random, LSF, LB and outlier rows with matched slot counts");
  ab->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  ab->add_option("--outliers", report_file, "Saved detect report")->check(CLI::ExistingFile);
  ab->add_option("--layers", layers, "Layers to mask (default all)");
  ab->add_option("--out", out_path, "CSV path (stdout when omitted)");
  add_detect_options(ab, detect);
  add_eval_options(ab, eval, true);
  add_common(ab, ctx);

  auto* cmp = app.add_subcommand("compare", "Evaluate several plans plus an optional random row");
  cmp->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  cmp->add_option("--plan", plan_files, "Mask plan JSON (repeatable)")->check(CLI::ExistingFile);
  cmp->add_option("--random-dims", random_dims, "Add a random row masking this many dims");
  cmp->add_option("--exclude", exclude, "Dims the random row avoids");
  cmp->add_option("--out", out_path, "CSV path (stdout when omitted)");
  add_eval_options(cmp, eval, true);
  add_common(cmp, ctx);

  auto* hm = app.add_subcommand("heatmap", "Per-layer hidden states for one text (TSV layer, token, dim, value)");
  hm->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  hm->add_option("--text", text, "Input text");
  hm->add_option("--text-file", text_file, "Read the input text from a file")->check(CLI::ExistingFile);
  hm->add_option("--dims", dims, "Dims to mark");
  hm->add_option("--out", out_path, "TSV path (stdout when omitted)");
  add_common(hm, ctx);

  auto* an = app.add_subcommand("anisotropy", "Fraction of tokens with abnormal final-layer values per dim");
  an->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  an->add_option("--dims", dims, "Dims to inspect")->required();
  an->add_option("--threshold", threshold, "Abnormal when |y[d] - mean(y)| > threshold * std(y)");
  add_eval_options(an, eval);
  add_common(an, ctx);

  auto* trn = app.add_subcommand("train", "Train a mini encoder with periodic snapshots");
  tr.train.seed = kDefaultSeed;
  trn->add_option("--corpus", tr.corpus, "Plain-text training corpus")->required()->check(CLI::ExistingFile);
  trn->add_option("--out-dir", tr.out_dir, "Output directory")->required();
  trn->add_option("--num-layers", tr.encoder.num_layers);
  trn->add_option("--hidden-dim", tr.encoder.hidden_dim);
  trn->add_option("--num-heads", tr.encoder.num_heads);
  trn->add_option("--ff-dim", tr.encoder.ff_dim);
  trn->add_option("--max-seq-len", tr.encoder.max_seq_len, "Corpus chunk length");
  trn->add_option("--vocab-size", tr.vocab_cap, "Vocabulary cap including specials");
  trn->add_option("--steps", tr.train.total_steps);
  trn->add_option("--batch-size", tr.train.batch_size);
  trn->add_option("--lr", tr.train.learning_rate);
  trn->add_option("--warmup-fraction", tr.train.warmup_fraction);
  trn->add_option("--weight-decay", tr.train.weight_decay);
  trn->add_option("--mask-prob", tr.train.mask_prob);
  trn->add_option("--seed", tr.train.seed);
  trn->add_option("--snapshot-every", tr.train.snapshot_every);
  trn->add_flag("--snapshot-initial", tr.train.snapshot_initial, "Also snapshot the initialization");
  trn->add_option("--train-seq-len", tr.train.train_seq_len, "Random crop length for training (0 = whole chunks)");
  trn->add_flag("--quiet", tr.quiet, "No progress lines");
  add_common(trn, ctx, false);

  auto* trk = app.add_subcommand("track", "LayerNorm trajectories across snapshots");
  trk->add_option("snapshots", inputs, "Snapshot files or directories")->required();
  trk->add_option("--k-sigma", track_k);
  trk->add_option("--out", out_path, "TSV (step, layer, dim, gamma, beta); stdout when omitted");
  trk->add_option("--stats-out", stats_out, "Per-step, per-layer statistics CSV");
  add_common(trk, ctx);

  auto* fp = app.add_subcommand("fingerprint", "Checkpoint digest and outlier fingerprint");
  fp->add_option("checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  add_detect_options(fp, detect);
  add_common(fp, ctx);

  auto* rp = app.add_subcommand("replay", "Re-run the command recorded in a report's manifest");
  rp->add_option("report", report_file)->required()->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kUsage;
  }

  for (auto* sub : app.get_subcommands()) ctx.command = sub;
  const auto name = ctx.command->get_name();
  if (name == "stats") return cmd_stats(ctx, ckpt, out_path, dims, detect);
  if (name == "detect") return cmd_detect(ctx, ckpt, out_path, detect);
  if (name == "mask") return cmd_mask(ctx, mask);
  if (name == "eval") return cmd_eval(ctx, ckpt, eval, plan_file);
  if (name == "sweep") return cmd_sweep(ctx, ckpt, eval, out_path);
  if (name == "layers") return cmd_layers(ctx, ckpt, eval, ranges, report_file, detect, out_path);
  if (name == "ablate") return cmd_ablate(ctx, ckpt, eval, report_file, detect, layers, out_path);
  if (name == "compare") return cmd_compare(ctx, ckpt, eval, plan_files, random_dims, exclude, out_path);
  if (name == "heatmap") return cmd_heatmap(ctx, ckpt, text, text_file, dims, out_path);
  if (name == "anisotropy") return cmd_anisotropy(ctx, ckpt, eval, dims, threshold);
  if (name == "train") return cmd_train(ctx, tr);
  if (name == "track") return cmd_track(ctx, inputs, track_k, out_path, stats_out);
  if (name == "fingerprint") return cmd_fingerprint(ctx, ckpt, detect);
  if (name == "replay") return cmd_replay(ctx, report_file);
  throw UsageError("unknown command '" + name + "'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace lnscope::cli
