#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lnscope {

enum class Dtype { f32, f16 };

constexpr std::size_t byte_width(Dtype dtype) { return dtype == Dtype::f32 ? 4 : 2; }

// Safetensors dtype tags ("F32", "F16").
std::string_view dtype_tag(Dtype dtype);
Dtype dtype_from_tag(std::string_view tag);

// IEEE 754 binary16 <-> binary32, round-to-nearest-even on narrowing.
float half_to_float(std::uint16_t bits);
std::uint16_t float_to_half(float value);

using Bytes = std::vector<std::uint8_t>;

// One named tensor. The payload is an immutable shared buffer so copying a
// checkpoint is cheap; writers replace the buffer instead of editing it.
class TensorRecord {
 public:
  TensorRecord() = default;
  TensorRecord(std::string name, std::vector<std::int64_t> shape, Dtype dtype, Bytes data);

  static TensorRecord from_floats(std::string name, std::vector<std::int64_t> shape,
                                  std::span<const float> values, Dtype dtype = Dtype::f32);

  const std::string& name() const { return name_; }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  Dtype dtype() const { return dtype_; }
  std::size_t numel() const;
  std::size_t rank() const { return shape_.size(); }
  std::span<const std::uint8_t> bytes() const;

  // Decodes the payload, promoting float16 to float32.
  std::vector<float> to_floats() const;
  float at(std::size_t flat_index) const;

  // Returns a record with the same name, shape and dtype and a new payload.
  TensorRecord with_bytes(Bytes data) const;

  bool shares_payload_with(const TensorRecord& other) const { return data_ == other.data_; }

 private:
  std::string name_;
  std::vector<std::int64_t> shape_;
  Dtype dtype_ = Dtype::f32;
  std::shared_ptr<const Bytes> data_;
};

class Checkpoint {
 public:
  using TensorMap = std::map<std::string, TensorRecord, std::less<>>;
  using Metadata = std::map<std::string, std::string, std::less<>>;

  bool contains(std::string_view name) const;
  const TensorRecord& tensor(std::string_view name) const;
  const TensorRecord* find(std::string_view name) const;
  // Inserts or replaces.
  void put(TensorRecord record);

  const TensorMap& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  Metadata& metadata() { return metadata_; }
  const Metadata& metadata() const { return metadata_; }

 private:
  TensorMap tensors_;
  Metadata metadata_;
};

// Safetensors container: u64-LE header length, JSON header, flat payload.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> file_bytes);
Bytes serialize_checkpoint(const Checkpoint& checkpoint);

Checkpoint read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

// SHA-256 over tensor names, dtypes, shapes and payloads (metadata excluded).
std::string checkpoint_digest(const Checkpoint& checkpoint);

}  // namespace lnscope
