#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <vector>

#include "sleepstack/model.hpp"

namespace sleepstack::net {

struct FingerprintMismatch : DataError {
  explicit FingerprintMismatch(const std::string& m) : DataError(m) {}
};
struct CorruptCheckpoint : DataError {
  explicit CorruptCheckpoint(const std::string& m) : DataError(m) {}
};

namespace detail {

inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

class ByteWriter {
public:
  std::vector<uint8_t> bytes;

  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));  // little-endian host
    raw(buf, sizeof(T));
  }
  void str(const std::string& s) {
    le<uint32_t>(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
};

class ByteReader {
public:
  ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}

  void raw(void* out, size_t n) {
    if (pos_ + n > n_) throw CorruptCheckpoint("checkpoint truncated");
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T le() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const uint32_t n = le<uint32_t>();
    if (n > n_ - pos_) throw CorruptCheckpoint("bad string length");
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }

private:
  const uint8_t* p_;
  size_t n_, pos_ = 0;
};

struct NamedTensor {
  std::string name;
  std::vector<long long> shape;
  std::vector<double> values;  // only set when owning, see save path
  const std::vector<double>* ref = nullptr;
};

// Tensors in declared (table) order. BatchNorm rows contribute a snapshot of
// their 4-per-channel stored statistics.
inline std::vector<NamedTensor> enumerate_tensors(Model& m) {
  std::vector<NamedTensor> out;
  for (size_t i = 0; i < m.spec.rows.size(); ++i) {
    const auto& r = m.spec.rows[i];
    switch (r.kind) {
      case LayerKind::Conv1D: {
        auto& p = m.conv.at(i);
        out.push_back({r.name + ".weights",
                       {p.kernel_size, p.in_channels, p.out_channels},
                       {},
                       &p.weights});
        if (p.has_bias())
          out.push_back({r.name + ".bias", {p.out_channels}, {}, &p.bias});
        break;
      }
      case LayerKind::BatchNorm: {
        NamedTensor t{r.name + ".stats", {4, r.channels}, m.norm.at(i).snapshot(), nullptr};
        out.push_back(std::move(t));
        break;
      }
      case LayerKind::Scale: {
        auto& p = m.scale.at(i);
        out.push_back({r.name + ".gamma", {r.channels}, {}, &p.gamma});
        out.push_back({r.name + ".beta", {r.channels}, {}, &p.beta});
        break;
      }
      case LayerKind::Dense:
        out.push_back({r.name + ".weights", {m.dense.in_dim, m.dense.out_dim}, {}, &m.dense.weights});
        out.push_back({r.name + ".bias", {m.dense.out_dim}, {}, &m.dense.bias});
        break;
      default:
        break;
    }
  }
  return out;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'S', 'L', 'P', 'C', 'K', 'P', 'T', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(Model& m, const std::string& path) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.le<uint32_t>(kCheckpointVersion);
  w.le<uint64_t>(m.fingerprint());
  w.le<uint32_t>(static_cast<uint32_t>(m.num_classes()));
  w.le<uint64_t>(m.meta.seed);
  w.le<int32_t>(m.meta.trained_epochs);
  w.le<double>(m.meta.last_lr);
  auto tensors = detail::enumerate_tensors(m);
  w.le<uint32_t>(static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.str(t.name);
    w.le<uint32_t>(static_cast<uint32_t>(t.shape.size()));
    for (long long d : t.shape) w.le<int64_t>(d);
    const auto& v = t.ref ? *t.ref : t.values;
    w.le<uint64_t>(v.size());
    w.raw(v.data(), v.size() * sizeof(double));
  }
  const uint32_t crc = detail::crc32(w.bytes.data(), w.bytes.size());
  w.le<uint32_t>(crc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(w.bytes.data()),
            static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw DataError("short write to " + path);
}

inline Model load_checkpoint(const std::string& path, int num_classes,
                             const std::string& csv_path = default_arch_csv_path()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw CorruptCheckpoint("file too small");
  const uint32_t stored_crc =
      static_cast<uint32_t>(bytes[bytes.size() - 4]) << 0 |
      static_cast<uint32_t>(bytes[bytes.size() - 3]) << 8 |
      static_cast<uint32_t>(bytes[bytes.size() - 2]) << 16 |
      static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24;
  if (detail::crc32(bytes.data(), bytes.size() - 4) != stored_crc)
    throw CorruptCheckpoint("CRC mismatch");

  detail::ByteReader r(bytes.data(), bytes.size() - 4);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CorruptCheckpoint("bad magic");
  if (r.le<uint32_t>() != kCheckpointVersion)
    throw CorruptCheckpoint("unsupported version");
  const uint64_t fp = r.le<uint64_t>();
  const uint32_t stored_classes = r.le<uint32_t>();

  Model m = Model::build(num_classes, 0, csv_path);
  if (fp != m.fingerprint())
    throw FingerprintMismatch(
        "checkpoint was built for a different architecture (stored " +
        std::to_string(stored_classes) + " classes, requested " +
        std::to_string(num_classes) + ")");
  m.meta.seed = r.le<uint64_t>();
  m.meta.trained_epochs = r.le<int32_t>();
  m.meta.last_lr = r.le<double>();

  auto tensors = detail::enumerate_tensors(m);
  const uint32_t count = r.le<uint32_t>();
  if (count != tensors.size()) throw CorruptCheckpoint("tensor count mismatch");
  for (size_t i = 0; i < tensors.size(); ++i) {
    const std::string name = r.str();
    if (name != tensors[i].name)
      throw CorruptCheckpoint("tensor order mismatch at " + name);
    const uint32_t rank = r.le<uint32_t>();
    size_t n = 1;
    for (uint32_t d = 0; d < rank; ++d)
      n *= static_cast<size_t>(r.le<int64_t>());
    const uint64_t len = r.le<uint64_t>();
    if (len != n) throw CorruptCheckpoint("shape/length mismatch at " + name);
    std::vector<double> vals(len);
    r.raw(vals.data(), len * sizeof(double));
    if (tensors[i].ref) {
      auto* dst = const_cast<std::vector<double>*>(tensors[i].ref);
      if (dst->size() != vals.size())
        throw CorruptCheckpoint("tensor size mismatch at " + name);
      *dst = std::move(vals);
    } else {
      // BatchNorm stats snapshot
      const size_t row = m.spec.index_of(name.substr(0, name.rfind('.')));
      m.norm.at(row).restore(vals);
    }
  }
  return m;
}

}  // namespace sleepstack::net
