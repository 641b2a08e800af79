#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "fixtures.hpp"
#include "json.hpp"
#include "lnscope/checkpoint.hpp"
#include "lnscope/error.hpp"
#include "lnscope/mask.hpp"

using namespace lnscope;

namespace {

Bytes raw_file(const std::string& header, const Bytes& payload) {
  Bytes out(8);
  std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(n >> (8 * i));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Bytes float_bytes(std::initializer_list<float> values) {
  Bytes out(values.size() * 4);
  std::memcpy(out.data(), std::data(values), out.size());
  return out;
}

}  // namespace

TEST(Checkpoint, ParsesMinimalFile) {
  const auto file = raw_file(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})", float_bytes({1.0f, 2.0f}));
  const auto ckpt = parse_checkpoint(file);
  ASSERT_TRUE(ckpt.contains("a"));
  EXPECT_EQ(ckpt.tensor("a").shape(), (std::vector<std::int64_t>{2}));
  EXPECT_EQ(ckpt.tensor("a").to_floats(), (std::vector<float>{1.0f, 2.0f}));
}

TEST(Checkpoint, ReadsMetadata) {
  const auto file = raw_file(
      R"({"__metadata__":{"format":"pt"},"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})", float_bytes({3.0f}));
  const auto ckpt = parse_checkpoint(file);
  EXPECT_EQ(ckpt.metadata().at("format"), "pt");
}

TEST(Checkpoint, TruncatedPayloadIsRejected) {
  const auto file = raw_file(R"({"a":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}})", float_bytes({1.0f, 2.0f}));
  try {
    parse_checkpoint(file);
    FAIL() << "expected a truncated-payload error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Checkpoint, RejectsMalformedHeaders) {
  EXPECT_THROW(parse_checkpoint(Bytes{1, 2, 3}), FormatError);
  EXPECT_THROW(parse_checkpoint(raw_file("{not json", {})), FormatError);
  EXPECT_THROW(parse_checkpoint(raw_file(R"({"a":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}})", Bytes{0})),
               FormatError);
  EXPECT_THROW(parse_checkpoint(raw_file(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,4]}})", float_bytes({1, 2}))),
               FormatError);
  Bytes huge(8, 0xff);
  EXPECT_THROW(parse_checkpoint(huge), FormatError);
}

TEST(Checkpoint, RejectsOverlappingAndGappedOffsets) {
  const auto payload = float_bytes({1, 2, 3});
  EXPECT_THROW(parse_checkpoint(raw_file(
                   R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
                   payload)),
               FormatError);
  EXPECT_THROW(parse_checkpoint(raw_file(
                   R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"b":{"dtype":"F32","shape":[1],"data_offsets":[8,12]}})",
                   payload)),
               FormatError);
}

TEST(Checkpoint, EmptyCheckpointRoundTrips) {
  const Checkpoint empty;
  const auto bytes = serialize_checkpoint(empty);
  const auto back = parse_checkpoint(bytes);
  EXPECT_EQ(back.size(), 0u);
}

TEST(Checkpoint, WrittenOffsetsAreContiguousAndAscending) {
  Checkpoint ckpt;
  ckpt.put(TensorRecord::from_floats("b", {3}, std::vector<float>{1, 2, 3}));
  ckpt.put(TensorRecord::from_floats("a", {2, 2}, std::vector<float>{4, 5, 6, 7}, Dtype::f16));
  const auto bytes = serialize_checkpoint(ckpt);
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  EXPECT_EQ((8 + n) % 8, 0u);
  const auto header = nlohmann::json::parse(std::string(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(n)));
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") continue;
    spans.emplace_back(entry["data_offsets"][0], entry["data_offsets"][1]);
  }
  std::sort(spans.begin(), spans.end());
  std::uint64_t cursor = 0;
  for (auto [b, e] : spans) {
    EXPECT_EQ(b, cursor);
    cursor = e;
  }
  EXPECT_EQ(8 + n + cursor, bytes.size());
}

TEST(Checkpoint, SyntheticTwelveLayerRoundTripIsByteIdentical) {
  testkit::SyntheticSpec spec;
  const auto ckpt = testkit::synthetic_checkpoint(spec);
  const auto dir = testkit::temp_dir("ckpt");
  const auto path = std::filesystem::path(dir) / "model.safetensors";
  write_checkpoint(ckpt, path);
  const auto back = read_checkpoint(path);
  ASSERT_EQ(back.size(), ckpt.size());
  for (const auto& [name, record] : ckpt.tensors()) {
    const auto& other = back.tensor(name);
    EXPECT_EQ(other.shape(), record.shape());
    EXPECT_EQ(other.dtype(), record.dtype());
    ASSERT_EQ(other.bytes().size(), record.bytes().size());
    EXPECT_EQ(std::memcmp(other.bytes().data(), record.bytes().data(), record.bytes().size()), 0) << name;
  }
  EXPECT_EQ(back.metadata(), ckpt.metadata());
  // writing the read-back checkpoint reproduces the file exactly
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ckpt));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RoundTripProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Checkpoint ckpt;
    const int tensors = static_cast<int>(rng() % 6);
    for (int t = 0; t < tensors; ++t) {
      std::vector<std::int64_t> shape;
      const int rank = static_cast<int>(rng() % 3);
      std::size_t numel = 1;
      for (int r = 0; r < rank; ++r) {
        shape.push_back(static_cast<std::int64_t>(rng() % 5));
        numel *= static_cast<std::size_t>(shape.back());
      }
      std::vector<float> values(numel);
      std::normal_distribution<float> normal;
      for (auto& v : values) v = normal(rng);
      ckpt.put(TensorRecord::from_floats("t" + std::to_string(t), shape, values, rng() % 2 ? Dtype::f32 : Dtype::f16));
    }
    ckpt.metadata()["trial"] = std::to_string(trial);
    const auto back = parse_checkpoint(serialize_checkpoint(ckpt));
    ASSERT_EQ(back.size(), ckpt.size());
    for (const auto& [name, record] : ckpt.tensors()) {
      const auto& other = back.tensor(name);
      EXPECT_EQ(other.shape(), record.shape());
      EXPECT_EQ(other.dtype(), record.dtype());
      EXPECT_TRUE(std::equal(other.bytes().begin(), other.bytes().end(), record.bytes().begin(), record.bytes().end()));
    }
    EXPECT_EQ(checkpoint_digest(back), checkpoint_digest(ckpt));
  }
}

TEST(Checkpoint, MaskedZerosSurviveWriteAndRead) {
  testkit::SyntheticSpec spec;
  const auto ckpt = testkit::synthetic_checkpoint(spec);
  const auto schema = testkit::synthetic_schema(spec.num_layers, spec.hidden_dim);
  const auto masked = apply_mask(ckpt, schema, plan_ln_pairs({7, 42}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}));
  const auto back = parse_checkpoint(serialize_checkpoint(masked));
  for (int layer = 0; layer < spec.num_layers; ++layer) {
    for (Role role : {Role::output_ln_gamma, Role::output_ln_beta}) {
      const auto values = resolve(back, schema, {role, layer}).to_floats();
      EXPECT_EQ(values[7], 0.0f);
      EXPECT_EQ(values[42], 0.0f);
      EXPECT_FALSE(std::signbit(values[7]));
    }
  }
  EXPECT_EQ(checkpoint_digest(back), checkpoint_digest(masked));
}

TEST(Checkpoint, LittleEndianOnDisk) {
  Checkpoint ckpt;
  ckpt.put(TensorRecord::from_floats("x", {1}, std::vector<float>{1.0f}));
  const auto bytes = serialize_checkpoint(ckpt);
  // 1.0f = 0x3f800000, stored low byte first
  const Bytes tail(bytes.end() - 4, bytes.end());
  EXPECT_EQ(tail, (Bytes{0x00, 0x00, 0x80, 0x3f}));
}

TEST(Checkpoint, HalfConversions) {
  EXPECT_EQ(half_to_float(0x3c00), 1.0f);
  EXPECT_EQ(half_to_float(0xc000), -2.0f);
  EXPECT_EQ(half_to_float(0x7bff), 65504.0f);
  EXPECT_EQ(half_to_float(0x0001), std::ldexp(1.0f, -24));
  EXPECT_TRUE(std::isinf(half_to_float(0x7c00)));
  EXPECT_TRUE(std::isnan(half_to_float(0x7e00)));
  EXPECT_EQ(float_to_half(1.0f), 0x3c00);
  EXPECT_EQ(float_to_half(65504.0f), 0x7bff);
  EXPECT_EQ(float_to_half(1e6f), 0x7c00);
  EXPECT_EQ(float_to_half(std::ldexp(1.0f, -24)), 0x0001);
  // every finite half survives half -> float -> half
  for (std::uint32_t bits = 0; bits < 0x10000; ++bits) {
    const float f = half_to_float(static_cast<std::uint16_t>(bits));
    if (std::isnan(f)) continue;
    ASSERT_EQ(float_to_half(f), bits);
  }
  // ties round to even
  EXPECT_EQ(float_to_half(1.0f + std::ldexp(1.0f, -11)), 0x3c00);
  EXPECT_EQ(float_to_half(1.0f + 3 * std::ldexp(1.0f, -11)), 0x3c02);
}

TEST(Checkpoint, HalfTensorsPromoteToFloat) {
  const auto rec = TensorRecord::from_floats("h", {3}, std::vector<float>{0.5f, -1.25f, 3.0f}, Dtype::f16);
  EXPECT_EQ(rec.bytes().size(), 6u);
  EXPECT_EQ(rec.to_floats(), (std::vector<float>{0.5f, -1.25f, 3.0f}));
}

TEST(Checkpoint, RecordInvariants) {
  EXPECT_THROW(TensorRecord("x", {2, 2}, Dtype::f32, Bytes(12)), DataError);
  EXPECT_EQ(byte_width(Dtype::f32), 4u);
  EXPECT_EQ(byte_width(Dtype::f16), 2u);
  Checkpoint ckpt;
  EXPECT_THROW(ckpt.tensor("missing"), DataError);
}

TEST(Checkpoint, MissingFileIsAnIoError) {
  EXPECT_THROW(read_checkpoint("/nonexistent/lnscope/model.safetensors"), IoError);
}

TEST(Checkpoint, DigestIgnoresMetadataButNotValues) {
  Checkpoint a;
  a.put(TensorRecord::from_floats("x", {2}, std::vector<float>{1, 2}));
  Checkpoint b = a;
  b.metadata()["note"] = "hello";
  EXPECT_EQ(checkpoint_digest(a), checkpoint_digest(b));
  b.put(TensorRecord::from_floats("x", {2}, std::vector<float>{1, 3}));
  EXPECT_NE(checkpoint_digest(a), checkpoint_digest(b));
}
