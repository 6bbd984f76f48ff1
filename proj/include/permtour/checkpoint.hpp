#pragma once

// Snapshot persistence. File layout (all integers little-endian):
//
//   magic       8 bytes  "PERMTOUR"
//   version     u32
//   fingerprint u64      ModelConfig::fingerprint()
//   epoch       u64
//   val_mean    f64
//   config      u32 length + UTF-8 JSON of the ModelConfig
//   count       u32
//   count x { u32 name length, name, u64 b, u64 r, u64 c, b*r*c x f64 }
//   checksum    u64      FNV-1a over every preceding byte
//
// Files are written to a temporary name and renamed, so a reader never sees a
// partially written snapshot.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "permtour/config.hpp"
#include "permtour/error.hpp"
#include "permtour/sct_gnn.hpp"
#include "permtour/tensor.hpp"

namespace permtour {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'P', 'E', 'R', 'M', 'T', 'O', 'U', 'R'};

struct EpochRecord {
  std::uint64_t epoch = 0;
  double train_loss = 0.0;
  double val_mean_length = 0.0;
  double lr = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

using TrainingHistory = std::vector<EpochRecord>;

/// First and second moment estimates, one tensor per parameter tensor.
struct AdamState {
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
  std::uint64_t step = 0;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Loop bookkeeping needed to resume exactly where a run stopped.
struct TrainerState {
  double clip_ema = 0.0;
  double best_val = 0.0;
  std::uint64_t best_epoch = 0;
  std::uint64_t stale_epochs = 0;
  TrainingHistory history;
  friend bool operator==(const TrainerState&, const TrainerState&) = default;
};

struct Snapshot {
  std::uint64_t epoch = 0;
  ModelConfig model_cfg;
  ModelParams params;
  AdamState optimizer_state;
  double validation_mean_length = 0.0;
  std::uint64_t config_fingerprint = 0;
  TrainerState trainer;
};

namespace detail {

inline std::uint64_t fnv1a(const std::uint8_t* p, std::size_t len) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t len) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + len);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t len) : p_(p), len_(len) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return len_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (len_ - pos_ < n) fail(ErrorCode::Io, "checkpoint: unexpected end of data");
  }
  std::uint64_t get(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  const std::uint8_t* p_;
  std::size_t len_;
  std::size_t pos_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const ad::Tensor& t) {
  w.str(name);
  w.u64(t.shape.b);
  w.u64(t.shape.r);
  w.u64(t.shape.c);
  for (double v : t.data) w.f64(v);
}

inline ad::Tensor scalar_tensor(double v) { return ad::Tensor(ad::Shape{}, v); }

}  // namespace detail

inline std::vector<std::uint8_t> encode_snapshot(const Snapshot& s) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(s.config_fingerprint);
  w.u64(s.epoch);
  w.f64(s.validation_mean_length);
  w.str(to_json(s.model_cfg).dump());

  const auto& p = s.params.tensors;
  const auto& opt = s.optimizer_state;
  const bool has_opt = opt.m.size() == p.size() && opt.v.size() == p.size();
  const auto& hist = s.trainer.history;
  const std::uint32_t count =
      static_cast<std::uint32_t>(p.size() * (has_opt ? 3 : 1) + 6);
  w.u32(count);
  for (const auto& t : p) detail::write_tensor(w, t.name, t.value);
  if (has_opt)
    for (std::size_t k = 0; k < p.size(); ++k) {
      detail::write_tensor(w, "adam.m/" + p[k].name, opt.m[k]);
      detail::write_tensor(w, "adam.v/" + p[k].name, opt.v[k]);
    }
  detail::write_tensor(w, "adam.step", detail::scalar_tensor(static_cast<double>(opt.step)));
  detail::write_tensor(w, "trainer.clip_ema", detail::scalar_tensor(s.trainer.clip_ema));
  detail::write_tensor(w, "trainer.best_val", detail::scalar_tensor(s.trainer.best_val));
  detail::write_tensor(w, "trainer.best_epoch",
                       detail::scalar_tensor(static_cast<double>(s.trainer.best_epoch)));
  detail::write_tensor(w, "trainer.stale_epochs",
                       detail::scalar_tensor(static_cast<double>(s.trainer.stale_epochs)));
  ad::Tensor h(ad::Shape{1, hist.size(), 4});
  for (std::size_t e = 0; e < hist.size(); ++e) {
    h.at(0, e, 0) = static_cast<double>(hist[e].epoch);
    h.at(0, e, 1) = hist[e].train_loss;
    h.at(0, e, 2) = hist[e].val_mean_length;
    h.at(0, e, 3) = hist[e].lr;
  }
  detail::write_tensor(w, "trainer.history", h);

  auto& bytes = w.bytes();
  const std::uint64_t sum = detail::fnv1a(bytes.data(), bytes.size());
  w.u64(sum);
  return std::move(w.bytes());
}

/// Decodes a snapshot. When `expected_fingerprint` is non-zero it must match
/// the stored one.
inline Snapshot decode_snapshot(const std::vector<std::uint8_t>& bytes,
                                std::uint64_t expected_fingerprint = 0) {
  if (bytes.size() < sizeof kCheckpointMagic + 8)
    fail(ErrorCode::Checksum, "checkpoint: file too short");
  const std::size_t body = bytes.size() - 8;
  detail::ByteReader tail(bytes.data() + body, 8);
  if (tail.u64() != detail::fnv1a(bytes.data(), body))
    fail(ErrorCode::Checksum, "checkpoint: checksum mismatch (corrupt or truncated file)");

  detail::ByteReader r(bytes.data(), body);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    fail(ErrorCode::Io, "checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorCode::Version, "checkpoint: version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  Snapshot s;
  s.config_fingerprint = r.u64();
  if (expected_fingerprint != 0 && expected_fingerprint != s.config_fingerprint)
    fail(ErrorCode::Fingerprint, "checkpoint: model configuration fingerprint mismatch");
  s.epoch = r.u64();
  s.validation_mean_length = r.f64();
  try {
    s.model_cfg = model_config_from_json(json::parse(r.str()));
  } catch (const json::exception& e) {
    fail(ErrorCode::Io, std::string("checkpoint: bad config block: ") + e.what());
  }
  if (s.model_cfg.fingerprint() != s.config_fingerprint)
    fail(ErrorCode::Fingerprint, "checkpoint: stored config does not match its fingerprint");

  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> all;
  all.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.str();
    ad::Shape sh{r.u64(), r.u64(), r.u64()};
    if (sh.b * sh.r * sh.c * 8 > r.remaining()) fail(ErrorCode::Io, "checkpoint: tensor overruns file");
    t.value = ad::Tensor(sh);
    for (auto& v : t.value.data) v = r.f64();
    all.push_back(std::move(t));
  }
  if (r.remaining() != 0) fail(ErrorCode::Io, "checkpoint: trailing bytes");

  auto scalar = [&](const std::string& name) -> double {
    for (const auto& t : all)
      if (t.name == name) return t.value.data.at(0);
    fail(ErrorCode::Io, "checkpoint: missing entry " + name);
  };
  for (auto& t : all) {
    if (t.name.rfind("adam.m/", 0) == 0) {
      s.optimizer_state.m.push_back(std::move(t.value));
    } else if (t.name.rfind("adam.v/", 0) == 0) {
      s.optimizer_state.v.push_back(std::move(t.value));
    } else if (t.name == "trainer.history") {
      for (std::size_t e = 0; e < t.value.shape.r; ++e)
        s.trainer.history.push_back({static_cast<std::uint64_t>(t.value.at(0, e, 0)),
                                     t.value.at(0, e, 1), t.value.at(0, e, 2),
                                     t.value.at(0, e, 3)});
    } else if (t.name.rfind("adam.", 0) != 0 && t.name.rfind("trainer.", 0) != 0) {
      s.params.tensors.push_back(std::move(t));
    }
  }
  s.optimizer_state.step = static_cast<std::uint64_t>(scalar("adam.step"));
  s.trainer.clip_ema = scalar("trainer.clip_ema");
  s.trainer.best_val = scalar("trainer.best_val");
  s.trainer.best_epoch = static_cast<std::uint64_t>(scalar("trainer.best_epoch"));
  s.trainer.stale_epochs = static_cast<std::uint64_t>(scalar("trainer.stale_epochs"));

  const ModelParams expect = init_params(s.model_cfg, 0);
  if (expect.tensors.size() != s.params.tensors.size())
    fail(ErrorCode::Fingerprint, "checkpoint: parameter table does not match the configuration");
  for (std::size_t k = 0; k < expect.tensors.size(); ++k)
    if (expect.tensors[k].name != s.params.tensors[k].name ||
        !(expect.tensors[k].value.shape == s.params.tensors[k].value.shape))
      fail(ErrorCode::Fingerprint,
           "checkpoint: tensor " + s.params.tensors[k].name + " does not match the configuration");
  return s;
}

inline void save_snapshot(const Snapshot& s, const std::filesystem::path& path) {
  const auto bytes = encode_snapshot(s);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Snapshot load_snapshot(const std::filesystem::path& path,
                              std::uint64_t expected_fingerprint = 0) {
  return decode_snapshot(read_file_bytes(path), expected_fingerprint);
}

inline Snapshot load_snapshot(const std::filesystem::path& path, const ModelConfig& current) {
  return load_snapshot(path, current.fingerprint());
}

}  // namespace permtour
