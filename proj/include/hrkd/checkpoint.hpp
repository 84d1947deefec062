#pragma once

// Binary checkpoint container. All integers and floats are little-endian.
//
//   magic        8 bytes   "HRKDCKPT"
//   version      u32       1
//   digest       u64       FNV-1a 64 of the metadata bytes
//   meta_len     u64
//   metadata     meta_len  UTF-8 JSON
//   entry_count  u32
//   entries      entry_count × { u32 name_len, name, u32 rank, rank × u64 dims, numel × f64 }
//   checksum     u64       FNV-1a 64 of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hrkd/errors.hpp"
#include "hrkd/grad_check.hpp"
#include "hrkd/tensor.hpp"

namespace hrkd {

inline constexpr char kCheckpointMagic[8] = {'H', 'R', 'K', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct CheckpointEntry {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<CheckpointEntry> entries;

  const Tensor* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e.value;
    return nullptr;
  }
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(source_ + ": " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) fail("truncated checkpoint");
  }

  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const nlohmann::json& meta, const std::vector<NamedParam>& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string m = meta.dump();
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, fnv1a64(m.data(), m.size()));
  detail::put_le<std::uint64_t>(out, m.size());
  out += m;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    const Tensor& t = p.var.value();
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  detail::put_le<std::uint64_t>(out, fnv1a64(out.data(), out.size()));
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source = "checkpoint") {
  detail::Reader r(bytes, source);
  if (r.get_bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    r.fail("bad magic");
  }
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) r.fail("unsupported version " + std::to_string(v));
  const auto digest = r.get<std::uint64_t>();
  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > r.remaining()) r.fail("metadata length exceeds file size");
  const std::string meta = r.get_bytes(meta_len);
  if (fnv1a64(meta.data(), meta.size()) != digest) r.fail("metadata digest mismatch");
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("metadata is not valid JSON (") + e.what() + ")");
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.get_bytes(name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("implausible rank " + std::to_string(rank) + " for " + name);
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto ext = r.get<std::uint64_t>();
      if (ext == 0 || ext > r.remaining()) r.fail("bad extent for " + name);
      shape.push_back(ext);
      numel *= ext;
    }
    if (numel > r.remaining() / 8) r.fail("tensor " + name + " exceeds file size");
    std::vector<double> data(numel);
    for (auto& v : data) v = std::bit_cast<double>(r.get<std::uint64_t>());
    ck.entries.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  const std::size_t body = r.pos();
  const auto checksum = r.get<std::uint64_t>();
  if (fnv1a64(bytes.data(), body) != checksum) r.fail("checksum mismatch");
  if (r.remaining() != 0) r.fail("trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const nlohmann::json& meta, const std::vector<NamedParam>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  const std::string bytes = serialize_checkpoint(meta, params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path);
}

/// Copies checkpoint values into `params` by name; every parameter must be present
/// with the same shape. Entries not named in `params` are ignored.
inline void restore_params(const Checkpoint& ck, const std::vector<NamedParam>& params) {
  for (const auto& p : params) {
    const Tensor* t = ck.find(p.name);
    if (!t) throw FormatError("checkpoint has no entry '" + p.name + "'");
    if (t->shape() != p.var.shape()) {
      throw FormatError("checkpoint entry '" + p.name + "' has shape " + shape_str(t->shape()) + ", expected " +
                        shape_str(p.var.shape()));
    }
    Var v = p.var;
    v.mutable_value() = *t;
  }
}

}  // namespace hrkd
