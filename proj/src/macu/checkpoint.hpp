#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "macu/data.hpp"
#include "macu/network.hpp"

namespace macu {

struct CheckpointMagicError : FormatError {
  using FormatError::FormatError;
};
struct CheckpointVersionError : FormatError {
  using FormatError::FormatError;
};
struct CheckpointTruncatedError : FormatError {
  using FormatError::FormatError;
};
struct CheckpointConfigError : ConfigError {
  using ConfigError::ConfigError;
};

// Binary checkpoint:
//   "MACU" | u32 version | u8 variant | u8 fused | u8 levels | u8 reserved
//   u32 base_width | u32 classes | u32 in_channels | u32 cab_ratio
//   u32 tensor_count
//   per tensor, sorted by name:
//     u16 name_len | name bytes | u8 rank | u32 dims[rank] | f32 payload
//   u32 crc32 of everything above
// All integers and floats little-endian.

namespace detail {

constexpr uint32_t kCkptVersion = 1;

inline void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(uint8_t(v));
  b.push_back(uint8_t(v >> 8));
}
inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(uint8_t(v >> (8 * i)));
}
inline void put_f32(std::vector<uint8_t>& b, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(b, u);
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t at = 0;

  void need(size_t n) const {
    if (at + n > b.size())
      throw CheckpointTruncatedError("checkpoint truncated at byte " +
                                     std::to_string(at));
  }
  uint8_t u8() {
    need(1);
    return b[at++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(b[at]) | uint16_t(b[at + 1]) << 8;
    at += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[at + i]) << (8 * i);
    at += 4;
    return v;
  }
  float f32() {
    uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b.data() + at), n);
    at += n;
    return s;
  }
};

}  // namespace detail

inline std::vector<uint8_t> serialize_checkpoint(Network<float>& net,
                                                 ParamView view) {
  if (view == ParamView::fused && !net.fused_ready) net.fuse();
  auto entries = net.params(view);
  std::sort(entries.begin(), entries.end(),
            [](const ParamEntry<float>& a, const ParamEntry<float>& b) {
              return a.name < b.name;
            });

  std::vector<uint8_t> out;
  out.insert(out.end(), {'M', 'A', 'C', 'U'});
  detail::put_u32(out, detail::kCkptVersion);
  out.push_back(uint8_t(net.cfg.variant));
  out.push_back(view == ParamView::fused ? 1 : 0);
  out.push_back(uint8_t(net.cfg.levels));
  out.push_back(0);
  detail::put_u32(out, uint32_t(net.cfg.base_width));
  detail::put_u32(out, uint32_t(net.cfg.classes));
  detail::put_u32(out, uint32_t(net.cfg.in_channels));
  detail::put_u32(out, uint32_t(net.cfg.cab_ratio));
  detail::put_u32(out, uint32_t(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw ValueError("parameter name too long");
    detail::put_u16(out, uint16_t(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const Shape& s = e.var.shape();
    out.push_back(4);
    for (int64_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(out, uint32_t(d));
    for (float v : e.var.value().v) detail::put_f32(out, v);
  }
  const uint32_t crc =
      uint32_t(::crc32(0L, out.data(), uInt(out.size())));
  detail::put_u32(out, crc);
  return out;
}

inline void save_checkpoint(Network<float>& net, const std::string& path,
                            ParamView view) {
  write_file(path, serialize_checkpoint(net, view));
}

inline void save_checkpoint(Network<float>& net, const std::string& path) {
  save_checkpoint(net, path, net.default_view());
}

// Rebuilds the network from the embedded config and fills every parameter by
// name. `expect`, when given, must match the stored config exactly.
inline Network<float> deserialize_checkpoint(const std::vector<uint8_t>& bytes,
                                             const NetworkConfig* expect = nullptr) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "MACU", 4) != 0)
    throw CheckpointMagicError("not a checkpoint file (bad magic)");
  if (bytes.size() < 4 + 4)
    throw CheckpointTruncatedError("checkpoint header truncated");

  // integrity first: trailing crc32 over everything before it
  if (bytes.size() < 32) throw CheckpointTruncatedError("checkpoint too short");
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= uint32_t(bytes[bytes.size() - 4 + i]) << (8 * i);
  const uint32_t computed =
      uint32_t(::crc32(0L, bytes.data(), uInt(bytes.size() - 4)));
  if (stored != computed)
    throw ChecksumError("checkpoint checksum mismatch: stored " +
                        std::to_string(stored) + ", computed " +
                        std::to_string(computed));

  detail::Reader r{bytes};
  r.at = 4;
  const uint32_t version = r.u32();
  if (version != detail::kCkptVersion)
    throw CheckpointVersionError("unsupported checkpoint version " +
                                 std::to_string(version));
  NetworkConfig cfg;
  const uint8_t variant_idx = r.u8();
  if (variant_idx > uint8_t(Variant::mu))
    throw FormatError("checkpoint carries unknown variant index " +
                      std::to_string(variant_idx));
  cfg.variant = Variant(variant_idx);
  const bool fused = r.u8() != 0;
  cfg.levels = r.u8();
  r.u8();  // reserved
  cfg.base_width = int(r.u32());
  cfg.classes = int(r.u32());
  cfg.in_channels = int(r.u32());
  cfg.cab_ratio = int(r.u32());
  cfg.validate();

  if (expect) {
    auto mism = [&](const std::string& what) {
      throw CheckpointConfigError("checkpoint config mismatch: " + what);
    };
    if (expect->variant != cfg.variant)
      mism(std::string("variant ") + variant_name(cfg.variant) + " vs expected " +
           variant_name(expect->variant));
    if (expect->levels != cfg.levels) mism("levels");
    if (expect->base_width != cfg.base_width) mism("base_width");
    if (expect->classes != cfg.classes) mism("classes");
    if (expect->in_channels != cfg.in_channels) mism("in_channels");
    if (expect->cab_ratio != cfg.cab_ratio) mism("cab_ratio");
  }

  const uint32_t count = r.u32();
  std::map<std::string, Tensor<float>> stored_tensors;
  for (uint32_t k = 0; k < count; ++k) {
    const uint16_t nlen = r.u16();
    std::string name = r.str(nlen);
    const uint8_t rank = r.u8();
    if (rank != 4)
      throw FormatError("tensor '" + name + "' has unsupported rank " +
                        std::to_string(rank));
    int64_t dims[4];
    for (auto& d : dims) d = int64_t(r.u32());
    Tensor<float> t({dims[0], dims[1], dims[2], dims[3]});
    for (auto& v : t.v) v = r.f32();
    if (!stored_tensors.emplace(std::move(name), std::move(t)).second)
      throw FormatError("duplicate tensor name in checkpoint");
  }
  if (r.at != bytes.size() - 4)
    throw FormatError("checkpoint has trailing bytes before checksum");

  Network<float> net = build_network<float>(cfg, 0);
  if (fused) {
    net.fuse();  // allocate fused slots with the right shapes
    net.fused_only = true;
  }
  auto entries = net.params(fused ? ParamView::fused : ParamView::unfused);
  if (entries.size() != stored_tensors.size())
    throw CheckpointConfigError("checkpoint holds " +
                                std::to_string(stored_tensors.size()) +
                                " tensors, network expects " +
                                std::to_string(entries.size()));
  for (auto& e : entries) {
    auto it = stored_tensors.find(e.name);
    if (it == stored_tensors.end())
      throw CheckpointConfigError("checkpoint lacks tensor '" + e.name + "'");
    if (!(it->second.shape == e.var.shape()))
      throw CheckpointConfigError("tensor '" + e.name + "' has shape " +
                                  it->second.shape.str() + ", network expects " +
                                  e.var.shape().str());
    e.var.value() = std::move(it->second);
  }
  return net;
}

inline Network<float> load_checkpoint(const std::string& path,
                                      const NetworkConfig* expect = nullptr) {
  return deserialize_checkpoint(read_file(path), expect);
}

}  // namespace macu
