#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosograph/errors.hpp"
#include "prosograph/param_store.hpp"

namespace prosograph {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

namespace detail {

constexpr char kCheckpointMagic[8] = {'P', 'G', 'R', 'A', 'P', 'H', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

struct ByteWriter {
  std::vector<uint8_t> buf;
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) { raw(v.data(), v.size() * sizeof(double)); }
};

struct ByteReader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  void raw(void* p, size_t n) {
    if (pos + n > buf.size()) throw ValidationError("checkpoint: unexpected end of data");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const uint64_t n = u64();
    if (pos + n > buf.size()) throw ValidationError("checkpoint: unexpected end of data");
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace detail

struct Checkpoint {
  nlohmann::json meta;  // embedded config and companion metadata
  std::map<std::string, DiffTensor> tensors;
};

// Binary, little-endian, CRC32 trailer. The embedded meta JSON carries the
// full TrainConfig so evaluation never needs the original config file.
inline void save_checkpoint(const ParamStore& store, const nlohmann::json& meta,
                            const std::string& path) {
  for (const auto& [name, t] : store)
    if (!t.all_finite()) throw NumericError("save_checkpoint: parameter '" + name + "' is not finite");

  detail::ByteWriter w;
  w.raw(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  w.u32(detail::kCheckpointVersion);
  w.str(meta.dump());
  w.u32(static_cast<uint32_t>(store.size()));
  for (const auto& [name, t] : store) {
    w.str(name);
    w.u32(static_cast<uint32_t>(t.ndim()));
    for (int d : t.shape()) w.u32(static_cast<uint32_t>(d));
    w.doubles(t.values());
  }
  w.u32(crc32(w.buf.data(), w.buf.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(detail::kCheckpointMagic) + 8)
    throw ValidationError("checkpoint '" + path + "': file too short");

  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw ValidationError("checkpoint '" + path + "': checksum mismatch (truncated or corrupted)");

  detail::ByteReader r{buf};
  char magic[sizeof(detail::kCheckpointMagic)];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw ValidationError("checkpoint '" + path + "': bad magic");
  const uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion)
    throw ValidationError("checkpoint '" + path + "': unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  try {
    ckpt.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint '" + path + "': bad meta block: " + e.what());
  }
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const uint32_t ndim = r.u32();
    Shape shape(ndim);
    size_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int>(r.u32());
      numel *= static_cast<size_t>(shape[d]);
    }
    std::vector<double> values(numel);
    r.raw(values.data(), numel * sizeof(double));
    ckpt.tensors.emplace(name, DiffTensor::parameter(std::move(shape), std::move(values)));
  }
  return ckpt;
}

// Copies checkpoint tensors into an existing store (e.g. a freshly built model
// or a training resume). Any name or shape disagreement is reported in full.
inline void load_into_store(const Checkpoint& ckpt, ParamStore& store) {
  std::string missing, mismatched;
  for (auto& [name, p] : store) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      missing += missing.empty() ? name : ", " + name;
      continue;
    }
    if (it->second.shape() != p.shape()) {
      mismatched += (mismatched.empty() ? "" : ", ") + name + " expected " + shape_str(p.shape()) +
                    " got " + shape_str(it->second.shape());
      continue;
    }
    p.mutable_values() = it->second.values();
  }
  std::string extra;
  for (const auto& [name, t] : ckpt.tensors)
    if (!store.contains(name)) extra += extra.empty() ? name : ", " + name;
  if (!missing.empty() || !mismatched.empty() || !extra.empty()) {
    std::string msg = "checkpoint does not match model:";
    if (!mismatched.empty()) msg += " shape mismatch [" + mismatched + "]";
    if (!missing.empty()) msg += " missing [" + missing + "]";
    if (!extra.empty()) msg += " unexpected [" + extra + "]";
    throw ValidationError(msg);
  }
}

}  // namespace prosograph
