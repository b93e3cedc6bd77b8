#pragma once

// Model checkpoint container. Byte layout (all integers little-endian):
//
//   [8]  magic "ELGCNET1"
//   [8]  u64 config JSON byte length, then that many JSON bytes
//   [8]  u64 parameter record count
//   per record:
//     [8] u64 name length, then the name bytes
//     [4] u32 rank, then rank x i64 extents
//     [8] u64 value count, then count x f32 values
//   [4]  u32 CRC32 (zlib polynomial) of every preceding byte
//
// Round-trips are bit-exact for float models; double-precision models are
// stored at 32-bit and therefore round to float on save.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "elgcnet/layers.hpp"
#include "elgcnet/serialize.hpp"

namespace elgc {

namespace detail {

inline void put_bytes(std::string& buf, const void* p, std::size_t n) {
  buf.append(static_cast<const char*>(p), n);
}
template <class I>
void put_int(std::string& buf, I v) {
  static_assert(std::is_integral_v<I>);
  put_bytes(buf, &v, sizeof(v));  // x86-64: native order is little-endian
}

class ByteReader {
 public:
  ByteReader(const char* p, std::size_t n) : p_(p), n_(n) {}
  void read(void* out, std::size_t n) {
    if (pos_ + n > n_) throw CheckpointError("checkpoint truncated");
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  template <class I>
  I read_int() {
    I v;
    read(&v, sizeof(v));
    return v;
  }
  std::string read_string(std::size_t n) {
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'E', 'L', 'G', 'C',
                                             'N', 'E', 'T', '1'};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<CheckpointTensor> tensors;
};

template <class T>
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamRegistry<T>& reg) {
  std::string buf;
  detail::put_bytes(buf, kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string cfg_json = model_config_to_json(cfg).dump();
  detail::put_int<std::uint64_t>(buf, cfg_json.size());
  detail::put_bytes(buf, cfg_json.data(), cfg_json.size());
  detail::put_int<std::uint64_t>(buf, reg.items().size());
  for (const auto& [name, t] : reg.items()) {
    detail::put_int<std::uint64_t>(buf, name.size());
    detail::put_bytes(buf, name.data(), name.size());
    detail::put_int<std::uint32_t>(buf, std::uint32_t(t.rank()));
    for (int d = 0; d < t.rank(); ++d)
      detail::put_int<std::int64_t>(buf, t.dim(d));
    detail::put_int<std::uint64_t>(buf, std::uint64_t(t.size()));
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const float v = float(t[i]);
      detail::put_bytes(buf, &v, sizeof(v));
    }
  }
  const std::uint32_t crc = std::uint32_t(
      ::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), uInt(buf.size())));
  detail::put_int<std::uint32_t>(buf, crc);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  os.write(buf.data(), std::streamsize(buf.size()));
  if (!os) throw CheckpointError("short write to checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kCheckpointMagic) + sizeof(std::uint32_t))
    throw CheckpointError("checkpoint too small: " + path);

  const std::size_t body = buf.size() - sizeof(std::uint32_t);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + body, sizeof(stored_crc));
  const std::uint32_t crc = std::uint32_t(
      ::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), uInt(body)));
  if (crc != stored_crc)
    throw CheckpointError("checkpoint checksum mismatch: " + path);

  detail::ByteReader r(buf.data(), body);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);

  Checkpoint ck;
  const auto cfg_len = r.read_int<std::uint64_t>();
  const std::string cfg_json = r.read_string(std::size_t(cfg_len));
  try {
    ck.config = model_config_from_json(json::parse(cfg_json));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad config JSON in checkpoint: ") +
                          e.what());
  } catch (const UsageError& e) {
    throw CheckpointError(std::string("bad config in checkpoint: ") + e.what());
  }

  const auto n = r.read_int<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    CheckpointTensor t;
    t.name = r.read_string(std::size_t(r.read_int<std::uint64_t>()));
    const auto rank = r.read_int<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d)
      t.shape.push_back(int(r.read_int<std::int64_t>()));
    const auto count = r.read_int<std::uint64_t>();
    if (std::int64_t(count) != numel(t.shape))
      throw CheckpointError("tensor '" + t.name +
                            "' value count disagrees with its shape");
    t.values.resize(std::size_t(count));
    r.read(t.values.data(), std::size_t(count) * sizeof(float));
    ck.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0)
    throw CheckpointError("trailing bytes in checkpoint: " + path);
  return ck;
}

// Copies checkpoint values into a registry; names, order, and shapes must
// match the build exactly.
template <class T>
void apply_checkpoint(const Checkpoint& ck, ParamRegistry<T>& reg) {
  if (ck.tensors.size() != reg.items().size())
    throw CheckpointError("checkpoint holds " +
                          std::to_string(ck.tensors.size()) +
                          " tensors but the model has " +
                          std::to_string(reg.items().size()));
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    const auto& src = ck.tensors[i];
    auto& [name, dst] = reg.items()[i];
    if (src.name != name)
      throw CheckpointError("checkpoint tensor '" + src.name +
                            "' does not match model parameter '" + name + "'");
    if (src.shape != dst.shape())
      throw CheckpointError("shape mismatch for '" + name + "': checkpoint " +
                            shape_str(src.shape) + " vs model " +
                            shape_str(dst.shape()));
    for (std::int64_t k = 0; k < dst.size(); ++k) dst[k] = T(src.values[std::size_t(k)]);
  }
}

}  // namespace elgc
