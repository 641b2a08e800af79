#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "fixtures.hpp"
#include "lnscope/error.hpp"
#include "lnscope/train.hpp"
#include "toy_corpus.hpp"

using namespace lnscope;

namespace {

struct Setup {
  Tokenizer tokenizer = Tokenizer::build("", 5);
  std::vector<Sequence> corpus;
  EncoderConfig encoder;
};

Setup small_setup() {
  testkit::ToyCorpusConfig tc;
  tc.documents = 60;
  const auto text = testkit::generate_toy_corpus(tc);
  Setup s;
  s.tokenizer = Tokenizer::build(text, 300);
  s.corpus = tokenize_corpus(text, s.tokenizer, 32);
  s.encoder.num_layers = 2;
  s.encoder.hidden_dim = 16;
  s.encoder.num_heads = 2;
  s.encoder.ff_dim = 32;
  s.encoder.vocab_size = s.tokenizer.size();
  s.encoder.max_seq_len = 32;
  return s;
}

TrainConfig quick(int steps) {
  TrainConfig c;
  c.total_steps = steps;
  c.batch_size = 4;
  c.learning_rate = 1e-3;
  c.seed = 3;
  c.snapshot_every = steps;
  return c;
}

}  // namespace

TEST(Schedule, WarmupThenLinearDecay) {
  TrainConfig c;
  c.learning_rate = 1.0;
  c.total_steps = 100;
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 5), 0.5);
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 10), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 11), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 100), 1.0 / 90.0);
  for (int s = 11; s < 100; ++s) EXPECT_GT(scheduled_lr(c, s), scheduled_lr(c, s + 1));
}

TEST(Train, SnapshotCadence) {
  const auto s = small_setup();
  auto c = quick(10);
  c.snapshot_every = 5;
  const auto dir = testkit::temp_dir("train_snap");
  const auto result = train(s.corpus, s.tokenizer, s.encoder, c, dir);
  ASSERT_EQ(result.snapshots.size(), 2u);
  EXPECT_EQ(result.snapshots[0].filename(), "step_000005.safetensors");
  EXPECT_EQ(result.snapshots[1].filename(), "step_000010.safetensors");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 2u);
  const auto last = read_checkpoint(result.snapshots[1]);
  EXPECT_EQ(last.metadata().at(kMetaStep), "10");
  EXPECT_EQ(tokenizer_from_checkpoint(last).tokens(), s.tokenizer.tokens());
  EXPECT_EQ(serialize_checkpoint(params_to_checkpoint(params_from_checkpoint(last))),
            serialize_checkpoint(params_to_checkpoint(result.params)));
  EXPECT_EQ(result.loss_log.size(), 10u);
}

TEST(Train, SameSeedIsBitIdentical) {
  const auto s = small_setup();
  for (int threads : {1, 3}) {
    auto c = quick(15);
    c.threads = threads;
    const auto a = train(s.corpus, s.tokenizer, s.encoder, c, "");
    const auto b = train(s.corpus, s.tokenizer, s.encoder, c, "");
    EXPECT_EQ(serialize_checkpoint(params_to_checkpoint(a.params)), serialize_checkpoint(params_to_checkpoint(b.params)));
    EXPECT_EQ(loss_log_csv(a.loss_log), loss_log_csv(b.loss_log));
  }
  auto c = quick(15);
  const auto a = train(s.corpus, s.tokenizer, s.encoder, c, "");
  c.seed = 4;
  const auto b = train(s.corpus, s.tokenizer, s.encoder, c, "");
  EXPECT_NE(serialize_checkpoint(params_to_checkpoint(a.params)), serialize_checkpoint(params_to_checkpoint(b.params)));
}

TEST(Train, LossDecreases) {
  const auto s = small_setup();
  auto c = quick(400);
  c.batch_size = 8;
  const auto result = train(s.corpus, s.tokenizer, s.encoder, c, "");
  auto mean = [&](std::size_t from, std::size_t to) {
    double sum = 0;
    for (std::size_t i = from; i < to; ++i) sum += result.loss_log[i].loss;
    return sum / static_cast<double>(to - from);
  };
  EXPECT_LT(mean(350, 400), mean(0, 50) - 0.5);
}

TEST(Train, FrozenElementsStayPut) {
  const auto s = small_setup();
  const auto init = testkit::random_encoder(s.encoder, 21);
  const FrozenSet frozen{{"encoder.layer.1.output.LayerNorm.weight", {2, 5}},
                         {"encoder.layer.1.output.LayerNorm.bias", {2, 5}},
                         {"embeddings.word_embeddings.weight", {0, 1, 2}}};
  const auto result = train(s.corpus, s.tokenizer, s.encoder, quick(20), "", frozen, &init);
  for (int d : {2, 5}) {
    EXPECT_EQ(result.params.layers[1].out_ln_gamma[d], init.layers[1].out_ln_gamma[d]);
    EXPECT_EQ(result.params.layers[1].out_ln_beta[d], init.layers[1].out_ln_beta[d]);
  }
  for (int i = 0; i < 3; ++i) EXPECT_EQ(result.params.token_embedding.data()[i], init.token_embedding.data()[i]);
  EXPECT_NE(result.params.layers[1].out_ln_gamma[0], init.layers[1].out_ln_gamma[0]);
  EXPECT_THROW(train(s.corpus, s.tokenizer, s.encoder, quick(2), "", FrozenSet{{"nope", {0}}}), UsageError);
  EXPECT_THROW(train(s.corpus, s.tokenizer, s.encoder, quick(2), "",
                     FrozenSet{{"cls.predictions.bias", {static_cast<std::size_t>(s.encoder.vocab_size)}}}),
               UsageError);
}

TEST(Train, ZeroedFrozenPairStaysZero) {
  const auto s = small_setup();
  auto init = EncoderParams<float>::initialize(s.encoder, 5);
  FrozenSet frozen;
  for (int l = 0; l < s.encoder.num_layers; ++l) {
    init.layers[l].out_ln_gamma[3] = 0.0f;
    init.layers[l].out_ln_beta[3] = 0.0f;
    const std::string p = "encoder.layer." + std::to_string(l) + ".output.LayerNorm.";
    frozen[p + "weight"] = {3};
    frozen[p + "bias"] = {3};
  }
  const auto result = train(s.corpus, s.tokenizer, s.encoder, quick(20), "", frozen, &init);
  const auto hidden = encoder_forward(result.params, s.corpus[0]);
  for (int t = 0; t < hidden.back().rows(); ++t) EXPECT_EQ(hidden.back()(t, 3), 0.0f);
}

TEST(Train, Validation) {
  const auto s = small_setup();
  auto c = quick(10);
  c.batch_size = 0;
  EXPECT_THROW(train(s.corpus, s.tokenizer, s.encoder, c, ""), UsageError);
  auto small = s.encoder;
  small.vocab_size = 10;
  EXPECT_THROW(train(s.corpus, s.tokenizer, small, quick(10), ""), UsageError);
  EXPECT_THROW(train({}, s.tokenizer, s.encoder, quick(10), ""), DataError);
}

TEST(Trajectory, InitialSnapshotAndDrift) {
  const auto s = small_setup();
  auto c = quick(30);
  c.snapshot_every = 10;
  c.snapshot_initial = true;
  const auto dir = testkit::temp_dir("traj");
  const auto result = train(s.corpus, s.tokenizer, s.encoder, c, dir);
  ASSERT_EQ(result.snapshots.size(), 4u);
  // hand the paths over in reverse; the tracker orders by step
  std::vector<std::filesystem::path> paths(result.snapshots.rbegin(), result.snapshots.rend());
  const auto schema = mini_encoder_schema(s.encoder);
  const auto series = track_ln_trajectories(paths, schema);
  ASSERT_EQ(series.size(), 4u);
  EXPECT_EQ(series[0].step, 0);
  EXPECT_EQ(series[3].step, 30);
  for (const auto& layer : series[0].layers) {
    EXPECT_EQ(layer.gamma.std, 0.0);
    EXPECT_EQ(layer.gamma.mean, 1.0);
    EXPECT_EQ(layer.gamma.count_gt_k, 0);
  }
  EXPECT_GT(series[3].layers[0].gamma.std, 0.0);

  const auto tsv = trajectory_tsv(series);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "step\tlayer\tdim\tgamma\tbeta");
  const auto rows = parse_trajectory_tsv(tsv);
  EXPECT_EQ(rows, trajectory_rows(series));
  EXPECT_EQ(rows.size(), 4u * s.encoder.num_layers * s.encoder.hidden_dim);
  const auto stats = parse_trajectory_stats_csv(trajectory_stats_csv(series));
  ASSERT_EQ(stats.size(), 4u * s.encoder.num_layers);
  EXPECT_DOUBLE_EQ(stats.back().gamma_std, series.back().layers.back().gamma.std);
}

TEST(Trajectory, DriftFixture) {
  // snapshots where dim 9 walks away from the rest of the layer
  const auto schema = testkit::synthetic_schema(4, 32);
  std::vector<std::pair<std::int64_t, Checkpoint>> snaps;
  for (int i = 0; i <= 5; ++i) {
    testkit::SyntheticSpec spec;
    spec.num_layers = 4;
    spec.hidden_dim = 32;
    spec.with_dense = false;
    if (i > 0) spec.planted = {{9, {0, 1, 2, 3}, 1.5 * i}};
    snaps.emplace_back(i * 100, testkit::synthetic_checkpoint(spec));
  }
  const auto series = track_ln_trajectories(snaps, schema);
  for (std::size_t i = 1; i < series.size(); ++i) {
    EXPECT_LT(series[i].gamma[2][9], series[i - 1].gamma[2][9]);
    EXPECT_GT(std::abs(series[i].layers[2].gamma.z[9]), std::abs(series[i - 1].layers[2].gamma.z[9]));
  }
  EXPECT_GT(series.back().layers[2].gamma.count_gt_k, 0);
}
