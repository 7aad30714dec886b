#pragma once

// Binary checkpoint container.
//
//   "H2CK"                      4 bytes magic
//   version                     u32
//   config length, config text  u32 + canonical JSON (sorted keys, compact)
//   tensor count                u32
//   per tensor: name length u32, name bytes, rank u32, dims u32 x rank,
//               data f64 x numel
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hyperx/errors.hpp"
#include "hyperx/module.hpp"
#include "json.hpp"

namespace hyperx {

inline constexpr char kCheckpointMagic[4] = {'H', '2', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json config;
  std::vector<NamedTensor> tensors;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw FormatError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string text(std::size_t len, const char* what) {
    need(len, what);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t len, const char* what) const {
    if (bytes_.size() - pos_ < len)
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Canonical text of a JSON value: sorted keys, no whitespace.
inline std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

inline std::string encode_checkpoint(const nlohmann::json& config, const std::vector<NamedTensor>& tensors) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  const std::string text = canonical_json(config);
  detail::put_u32(out, detail::checked_u32(text.size(), "config length"));
  out += text;
  detail::put_u32(out, detail::checked_u32(tensors.size(), "tensor count"));
  for (const auto& t : tensors) {
    detail::put_u32(out, detail::checked_u32(t.name.size(), "name length"));
    out += t.name;
    detail::put_u32(out, detail::checked_u32(t.tensor.rank(), "rank"));
    for (std::size_t d : t.tensor.shape()) detail::put_u32(out, detail::checked_u32(d, "dimension"));
    for (double v : t.tensor.data()) detail::put_f64(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("not a checkpoint: bad magic");
  detail::ByteReader r(bytes);
  r.text(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const std::uint32_t len = r.u32("config length");
  try {
    ck.config = nlohmann::json::parse(r.text(len, "config"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.text(r.u32("name length"), "name");
    const std::uint32_t rank = r.u32("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dimension");
    if (shape_numel(shape) == 0) throw FormatError("tensor '" + t.name + "' has a zero dimension");
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.f64("tensor data");
    t.tensor = Tensor(std::move(shape), std::move(values));
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after last checkpoint tensor");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                            const std::vector<NamedTensor>& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(config, tensors);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace hyperx
