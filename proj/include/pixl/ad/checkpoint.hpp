#pragma once

// Binary checkpoint container, little-endian:
//   "PIXLCKPT" | u32 version | u64 config hash | u32 len + config text |
//   i64 step | u32 record count | records
// record: u32 len + name | u32 ndim | i32 dims[ndim] | f32 payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "pixl/ad/optim.hpp"

namespace pixl::ad {

inline constexpr char kCheckpointMagic[8] = {'P', 'I', 'X', 'L', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

// FNV-1a, used to fingerprint the serialized model configuration.
inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  uint64_t config_hash = 0;
  std::string config;  // serialized model configuration
  int64_t step = 0;
  std::vector<TensorRecord> records;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }
};

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& os) : os_(os) {}
  template <typename T>
  void put(T v) {
    using U = std::conditional_t<sizeof(T) == 8, uint64_t, uint32_t>;
    U u = std::bit_cast<U>(v);
    unsigned char b[sizeof(U)];
    for (size_t i = 0; i < sizeof(U); ++i) b[i] = (u >> (8 * i)) & 0xff;
    os_.write(reinterpret_cast<const char*>(b), sizeof(U));
  }
  void bytes(std::string_view s) {
    put(uint32_t(s.size()));
    os_.write(s.data(), std::streamsize(s.size()));
  }

 private:
  std::ostream& os_;
};

class LeReader {
 public:
  LeReader(const std::vector<char>& buf, std::string origin) : buf_(buf), origin_(std::move(origin)) {}
  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, uint64_t, uint32_t>;
    need(sizeof(U));
    U u = 0;
    for (size_t i = 0; i < sizeof(U); ++i) u |= U(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(u);
  }
  std::string bytes() {
    const uint32_t n = get<uint32_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void need(size_t n) const {
    if (pos_ + n > buf_.size()) throw Error(origin_ + ": truncated checkpoint");
  }
  size_t pos() const { return pos_; }
  void skip(size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::vector<char>& buf_;
  std::string origin_;
  size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require(bool(os), "cannot write checkpoint " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::LeWriter w(os);
  w.put(kCheckpointVersion);
  w.put(ck.config_hash);
  w.bytes(ck.config);
  w.put(ck.step);
  w.put(uint32_t(ck.records.size()));
  for (const auto& r : ck.records) {
    require(r.values.size() == numel(r.shape), "checkpoint record " + r.name + " does not match its shape");
    w.bytes(r.name);
    w.put(uint32_t(r.shape.size()));
    for (int d : r.shape) w.put(int32_t(d));
    for (float v : r.values) w.put(v);
  }
  require(bool(os), "failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), "cannot open checkpoint " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  detail::LeReader r(buf, path);
  r.need(sizeof(kCheckpointMagic));
  require(std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) == 0, path + ": not a checkpoint");
  r.skip(sizeof(kCheckpointMagic));
  const auto version = r.get<uint32_t>();
  require(version == kCheckpointVersion, path + ": checkpoint version " + std::to_string(version) +
                                             " (this build reads version " +
                                             std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.config_hash = r.get<uint64_t>();
  ck.config = r.bytes();
  ck.step = r.get<int64_t>();
  const auto count = r.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    rec.name = r.bytes();
    const auto nd = r.get<uint32_t>();
    require(nd <= 8, path + ": corrupt record header");
    for (uint32_t d = 0; d < nd; ++d) {
      const auto dim = r.get<int32_t>();
      require(dim > 0, path + ": corrupt record shape");
      rec.shape.push_back(dim);
    }
    const size_t n = numel(rec.shape);
    r.need(n * 4);
    rec.values.resize(n);
    for (size_t j = 0; j < n; ++j) rec.values[j] = r.get<float>();
    ck.records.push_back(std::move(rec));
  }
  require(r.pos() == buf.size(), path + ": trailing bytes after checkpoint records");
  return ck;
}

/// Parameters plus, when given, AdamW moments as "adam.m/<name>" and "adam.v/<name>".
inline void append_state(Checkpoint& ck, const ParamSet& ps, AdamW* opt) {
  auto f32 = [](const std::vector<real>& v) { return std::vector<float>(v.begin(), v.end()); };
  for (const auto& p : ps.params()) ck.records.push_back({p.name, p.tensor.shape(), f32(p.tensor.values())});
  if (!opt) return;
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps.params()[i];
    ck.records.push_back({"adam.m/" + p.name, p.tensor.shape(), f32(opt->first_moments()[i])});
    ck.records.push_back({"adam.v/" + p.name, p.tensor.shape(), f32(opt->second_moments()[i])});
  }
}

inline void restore_state(const Checkpoint& ck, ParamSet& ps, AdamW* opt) {
  auto fetch = [&](const std::string& name, const Shape& shape) -> const std::vector<float>& {
    const auto* rec = ck.find(name);
    require(rec != nullptr, "checkpoint has no record " + name);
    require(rec->shape == shape, "checkpoint record " + name + " has shape " + shape_str(rec->shape) +
                                     ", model expects " + shape_str(shape));
    return rec->values;
  };
  for (size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps.params()[i];
    const auto& v = fetch(p.name, p.tensor.shape());
    std::copy(v.begin(), v.end(), p.tensor.data().begin());
    if (opt) {
      const auto& m = fetch("adam.m/" + p.name, p.tensor.shape());
      const auto& v2 = fetch("adam.v/" + p.name, p.tensor.shape());
      opt->first_moments()[i].assign(m.begin(), m.end());
      opt->second_moments()[i].assign(v2.begin(), v2.end());
    }
  }
  if (opt) opt->set_step_count(long(ck.step));
}

}  // namespace pixl::ad
