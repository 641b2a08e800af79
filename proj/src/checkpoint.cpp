#include "lnscope/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "lnscope/digest.hpp"
#include "lnscope/error.hpp"

namespace lnscope {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kMaxHeaderBytes = 100ull << 20;
constexpr std::string_view kMetadataKey = "__metadata__";

std::uint64_t read_u64_le(std::span<const std::uint8_t> bytes) {
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < 8; ++i) value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return value;
}

void append_u64_le(Bytes& out, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

std::size_t checked_numel(const std::vector<std::int64_t>& shape, const std::string& name) {
  std::size_t n = 1;
  for (auto dim : shape) {
    if (dim < 0) throw FormatError("tensor '" + name + "': negative dimension");
    auto d = static_cast<std::size_t>(dim);
    if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) {
      throw FormatError("tensor '" + name + "': element count overflows");
    }
    n *= d;
  }
  return n;
}

}  // namespace

std::string_view dtype_tag(Dtype dtype) { return dtype == Dtype::f32 ? "F32" : "F16"; }

Dtype dtype_from_tag(std::string_view tag) {
  if (tag == "F32") return Dtype::f32;
  if (tag == "F16") return Dtype::f16;
  throw FormatError("unsupported dtype '" + std::string(tag) + "'");
}

float half_to_float(std::uint16_t bits) {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  std::uint32_t exponent = (bits >> 10) & 0x1Fu;
  std::uint32_t mantissa = bits & 0x3FFu;
  std::uint32_t out = 0;
  if (exponent == 0) {
    if (mantissa == 0) {
      out = sign;
    } else {
      // Subnormal: renormalize.
      int shift = 0;
      while ((mantissa & 0x400u) == 0) {
        mantissa <<= 1;
        ++shift;
      }
      mantissa &= 0x3FFu;
      out = sign | static_cast<std::uint32_t>(127 - 15 - shift + 1) << 23 | mantissa << 13;
    }
  } else if (exponent == 0x1F) {
    out = sign | 0x7F800000u | mantissa << 13;
  } else {
    out = sign | (exponent + 127 - 15) << 23 | mantissa << 13;
  }
  return std::bit_cast<float>(out);
}

std::uint16_t float_to_half(float value) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t abs = x & 0x7FFFFFFFu;
  if (abs >= 0x7F800000u) {
    // Inf or NaN (keep NaN quiet).
    return sign | 0x7C00u | (abs > 0x7F800000u ? 0x200u : 0u);
  }
  if (abs >= 0x477FF000u) return sign | 0x7C00u;  // rounds to >= 65520: overflow
  if (abs < 0x38800000u) {
    // Result is subnormal or zero.
    if (abs < 0x33000000u) return sign;
    const std::uint32_t exponent = abs >> 23;
    const std::uint32_t mantissa = (abs & 0x7FFFFFu) | 0x800000u;
    const std::uint32_t shift = 126 - exponent;  // in [14, 24]
    std::uint32_t half = mantissa >> shift;
    const std::uint32_t rem = mantissa & ((1u << shift) - 1);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return sign | static_cast<std::uint16_t>(half);
  }
  std::uint32_t half = ((abs - 0x38000000u) >> 13);
  const std::uint32_t rem = abs & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
  return sign | static_cast<std::uint16_t>(half);
}

TensorRecord::TensorRecord(std::string name, std::vector<std::int64_t> shape, Dtype dtype, Bytes data)
    : name_(std::move(name)), shape_(std::move(shape)), dtype_(dtype) {
  const std::size_t expected = checked_numel(shape_, name_) * byte_width(dtype_);
  if (data.size() != expected) {
    throw DataError("tensor '" + name_ + "': payload is " + std::to_string(data.size()) +
                    " bytes, shape requires " + std::to_string(expected));
  }
  data_ = std::make_shared<const Bytes>(std::move(data));
}

TensorRecord TensorRecord::from_floats(std::string name, std::vector<std::int64_t> shape,
                                       std::span<const float> values, Dtype dtype) {
  Bytes data(values.size() * byte_width(dtype));
  if (dtype == Dtype::f32) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) data[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = float_to_half(values[i]);
      data[2 * i] = static_cast<std::uint8_t>(bits);
      data[2 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
    }
  }
  return TensorRecord(std::move(name), std::move(shape), dtype, std::move(data));
}

std::size_t TensorRecord::numel() const {
  std::size_t n = 1;
  for (auto d : shape_) n *= static_cast<std::size_t>(d);
  return n;
}

std::span<const std::uint8_t> TensorRecord::bytes() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

float TensorRecord::at(std::size_t i) const {
  const auto* p = data_->data();
  if (dtype_ == Dtype::f32) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
    return std::bit_cast<float>(bits);
  }
  return half_to_float(static_cast<std::uint16_t>(p[2 * i] | p[2 * i + 1] << 8));
}

std::vector<float> TensorRecord::to_floats() const {
  const std::size_t n = numel();
  std::vector<float> out(n);
  if (dtype_ == Dtype::f32 && std::endian::native == std::endian::little) {
    if (n != 0) std::memcpy(out.data(), data_->data(), n * 4);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = at(i);
  return out;
}

TensorRecord TensorRecord::with_bytes(Bytes data) const { return TensorRecord(name_, shape_, dtype_, std::move(data)); }

bool Checkpoint::contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

const TensorRecord* Checkpoint::find(std::string_view name) const {
  auto it = tensors_.find(name);
  return it == tensors_.end() ? nullptr : &it->second;
}

const TensorRecord& Checkpoint::tensor(std::string_view name) const {
  const auto* record = find(name);
  if (record == nullptr) throw DataError("tensor '" + std::string(name) + "' not found in checkpoint");
  return *record;
}

void Checkpoint::put(TensorRecord record) {
  auto name = record.name();
  tensors_.insert_or_assign(std::move(name), std::move(record));
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> file) {
  if (file.size() < 8) throw FormatError("file too short for header length prefix");
  const std::uint64_t header_len = read_u64_le(file.first(8));
  if (header_len > kMaxHeaderBytes) throw FormatError("header length " + std::to_string(header_len) + " exceeds limit");
  if (header_len > file.size() - 8) throw FormatError("truncated header: declared " + std::to_string(header_len) + " bytes");

  const auto header_bytes = file.subspan(8, header_len);
  json header;
  try {
    header = json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("malformed header: not an object");

  struct Entry {
    std::string name;
    std::vector<std::int64_t> shape;
    Dtype dtype;
    std::uint64_t begin;
    std::uint64_t end;
  };
  std::vector<Entry> entries;
  Checkpoint checkpoint;

  try {
    for (const auto& [key, value] : header.items()) {
      if (key == kMetadataKey) {
        if (!value.is_object()) throw FormatError("malformed header: __metadata__ is not an object");
        for (const auto& [mk, mv] : value.items()) {
          if (!mv.is_string()) throw FormatError("malformed header: metadata value for '" + mk + "' is not a string");
          checkpoint.metadata().emplace(mk, mv.get<std::string>());
        }
        continue;
      }
      if (!value.is_object() || !value.contains("dtype") || !value.contains("shape") ||
          !value.contains("data_offsets")) {
        throw FormatError("malformed header entry for '" + key + "'");
      }
      const auto& shape = value.at("shape");
      const auto& offsets = value.at("data_offsets");
      if (!shape.is_array() || !offsets.is_array() || offsets.size() != 2 || !value.at("dtype").is_string()) {
        throw FormatError("malformed header entry for '" + key + "'");
      }
      Entry entry{key, {}, dtype_from_tag(value.at("dtype").get<std::string>()), 0, 0};
      for (const auto& d : shape) {
        if (!d.is_number_unsigned()) throw FormatError("tensor '" + key + "': shape entries must be non-negative integers");
        entry.shape.push_back(static_cast<std::int64_t>(d.get<std::uint64_t>()));
      }
      if (!offsets[0].is_number_unsigned() || !offsets[1].is_number_unsigned()) {
        throw FormatError("tensor '" + key + "': data_offsets must be non-negative integers");
      }
      entry.begin = offsets[0].get<std::uint64_t>();
      entry.end = offsets[1].get<std::uint64_t>();
      if (entry.end < entry.begin) throw FormatError("tensor '" + key + "': data_offsets are reversed");
      const std::uint64_t expected = checked_numel(entry.shape, key) * byte_width(entry.dtype);
      if (entry.end - entry.begin != expected) {
        throw FormatError("tensor '" + key + "': data_offsets span " + std::to_string(entry.end - entry.begin) +
                          " bytes, shape and dtype require " + std::to_string(expected));
      }
      entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
  });
  std::uint64_t cursor = 0;
  for (const auto& entry : entries) {
    if (entry.begin < cursor) throw FormatError("tensor '" + entry.name + "': overlapping data_offsets");
    if (entry.begin > cursor) throw FormatError("tensor '" + entry.name + "': non-contiguous data_offsets");
    cursor = entry.end;
  }
  const std::uint64_t payload_size = file.size() - 8 - header_len;
  if (cursor > payload_size) {
    throw FormatError("truncated payload: header declares " + std::to_string(cursor) + " bytes, file holds " +
                      std::to_string(payload_size));
  }
  if (cursor < payload_size) {
    throw FormatError("payload has " + std::to_string(payload_size - cursor) + " unreferenced trailing bytes");
  }

  const auto payload = file.subspan(8 + header_len);
  for (auto& entry : entries) {
    const auto slice = payload.subspan(entry.begin, entry.end - entry.begin);
    checkpoint.put(TensorRecord(entry.name, std::move(entry.shape), entry.dtype, Bytes(slice.begin(), slice.end())));
  }
  return checkpoint;
}

Bytes serialize_checkpoint(const Checkpoint& checkpoint) {
  json header = json::object();
  if (!checkpoint.metadata().empty()) {
    json meta = json::object();
    for (const auto& [k, v] : checkpoint.metadata()) meta[k] = v;
    header[std::string(kMetadataKey)] = std::move(meta);
  }
  std::uint64_t offset = 0;
  for (const auto& [name, record] : checkpoint.tensors()) {
    const std::uint64_t len = record.bytes().size();
    header[name] = {{"dtype", dtype_tag(record.dtype())},
                    {"shape", record.shape()},
                    {"data_offsets", {offset, offset + len}}};
    offset += len;
  }
  std::string text = header.dump();
  // Pad to an 8-byte boundary so the payload is aligned.
  text.append((8 - text.size() % 8) % 8, ' ');

  Bytes out;
  out.reserve(8 + text.size() + offset);
  append_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, record] : checkpoint.tensors()) {
    const auto bytes = record.bytes();
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  if (size < 0) throw IoError("cannot size checkpoint '" + path.string() + "'");
  in.seekg(0, std::ios::beg);
  Bytes buffer(static_cast<std::size_t>(size));
  if (size > 0 && !in.read(reinterpret_cast<char*>(buffer.data()), size)) {
    throw IoError("failed reading checkpoint '" + path.string() + "'");
  }
  return parse_checkpoint(buffer);
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const Bytes bytes = serialize_checkpoint(checkpoint);
  // Write to a sibling temp file first so readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

std::string checkpoint_digest(const Checkpoint& checkpoint) {
  Sha256 sha;
  sha.update_u64(checkpoint.size());
  for (const auto& [name, record] : checkpoint.tensors()) {
    sha.update_field(name);
    sha.update_field(dtype_tag(record.dtype()));
    sha.update_u64(record.shape().size());
    for (auto d : record.shape()) sha.update_u64(static_cast<std::uint64_t>(d));
    sha.update_u64(record.bytes().size());
    sha.update(record.bytes());
  }
  return sha.hex_digest();
}

}  // namespace lnscope
