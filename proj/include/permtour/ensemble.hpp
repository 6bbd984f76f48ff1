#pragma once

// Inference: deterministic single pass, MC-dropout passes, snapshot members,
// and best-of selection with win tallies.
//
// Member order (also the tie-break order): deterministic, then MC passes by
// index, then snapshots by epoch. A size-k MC ensemble is the deterministic
// pass plus k-1 dropout passes, laid out like the per-run tables it mirrors.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "permtour/assignment.hpp"
#include "permtour/checkpoint.hpp"
#include "permtour/error.hpp"
#include "permtour/instance.hpp"
#include "permtour/perm.hpp"
#include "permtour/rng.hpp"
#include "permtour/sct_gnn.hpp"

namespace permtour {

enum class EnsembleMode { Deterministic, McDropout, Snapshot, Combined };

inline std::string to_string(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::Deterministic: return "det";
    case EnsembleMode::McDropout: return "mc";
    case EnsembleMode::Snapshot: return "snapshot";
    case EnsembleMode::Combined: return "combined";
  }
  return "?";
}

inline EnsembleMode ensemble_mode_from_string(const std::string& s) {
  if (s == "det" || s == "deterministic") return EnsembleMode::Deterministic;
  if (s == "mc" || s == "mc_dropout") return EnsembleMode::McDropout;
  if (s == "snapshot") return EnsembleMode::Snapshot;
  if (s == "combined") return EnsembleMode::Combined;
  fail(ErrorCode::Validation, "unknown ensemble mode '" + s + "'");
}

struct EnsembleConfig {
  EnsembleMode mode = EnsembleMode::Deterministic;
  std::size_t mc_passes = 10;  // ensemble size in MC mode, deterministic pass included
  std::vector<std::string> snapshot_paths;
  std::uint64_t seed = 0;

  void validate() const {
    if (mode == EnsembleMode::McDropout || mode == EnsembleMode::Combined)
      require(mc_passes >= 1, ErrorCode::Validation, "EnsembleConfig: mc_passes must be >= 1");
    if (mode == EnsembleMode::Snapshot || mode == EnsembleMode::Combined)
      require(!snapshot_paths.empty(), ErrorCode::Validation,
              "EnsembleConfig: snapshot mode needs at least one snapshot");
  }
};

struct MemberResult {
  std::string tag;
  Tour tour;
  double seconds = 0.0;
};

struct InferenceRecord {
  std::size_t instance = 0;
  std::uint64_t seed_tag = 0;
  std::vector<MemberResult> members;
  std::size_t best_member = 0;  // index into members
  Tour best;
};

struct EnsembleSummary {
  std::vector<std::string> tags;
  std::vector<double> mean_length;
  std::vector<std::size_t> wins;  // co-minimal members all credited
  std::vector<double> win_pct;
  double ensemble_mean = 0.0;
  std::size_t instances = 0;
};

inline Tour tour_from_logits(const Matrix& logits, const DistanceMatrix& d) {
  SinkhornConfig sk;
  sk.gamma = 0.0;
  const Permutation p = decode(logits, sk);
  return canonicalize(tour_from_cycle_matrix(conjugate(p, cyclic_shift(d.n())), d));
}

inline Tour infer_deterministic(const ModelParams& params, const ModelConfig& cfg,
                                const EuclideanInstance& inst) {
  const PreparedInstance prep = prepare(inst, cfg);
  return tour_from_logits(forward(prep, params, cfg, ad::Mode::Deterministic, 0), prep.d);
}

inline std::uint64_t mc_pass_seed(std::uint64_t seed, std::size_t pass) {
  return derive_seed(seed, {kStreamMc, pass});
}

/// k dropout passes; pass i uses mc_pass_seed(seed, i).
inline std::vector<Tour> infer_mc(const ModelParams& params, const ModelConfig& cfg,
                                  const EuclideanInstance& inst, std::size_t k, std::uint64_t seed) {
  require(k >= 1, ErrorCode::Validation, "infer_mc: k must be >= 1");
  const PreparedInstance prep = prepare(inst, cfg);
  std::vector<Tour> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    out.push_back(
        tour_from_logits(forward(prep, params, cfg, ad::Mode::McDropout, mc_pass_seed(seed, i)), prep.d));
  return out;
}

inline void check_compatible(const std::vector<Snapshot>& snaps) {
  require(!snaps.empty(), ErrorCode::Validation, "snapshot ensemble: no snapshots");
  for (const auto& s : snaps)
    require(s.config_fingerprint == snaps.front().config_fingerprint, ErrorCode::Fingerprint,
            "snapshot ensemble: snapshots come from different model configurations");
}

inline std::vector<Tour> infer_snapshot(const std::vector<Snapshot>& snaps,
                                        const EuclideanInstance& inst) {
  check_compatible(snaps);
  const ModelConfig& cfg = snaps.front().model_cfg;
  const PreparedInstance prep = prepare(inst, cfg);
  std::vector<Tour> out;
  for (const auto& s : snaps)
    out.push_back(tour_from_logits(forward(prep, s.params, cfg, ad::Mode::Deterministic, 0), prep.d));
  return out;
}

/// Fills best/best_member of every record and tallies wins. Ties go to the
/// earliest member; win counts credit every member within 1e-12 of the minimum.
inline EnsembleSummary select_best(std::vector<InferenceRecord>& records) {
  require(!records.empty(), ErrorCode::Validation, "select_best: no records");
  const std::size_t m = records.front().members.size();
  require(m >= 1, ErrorCode::Validation, "select_best: record without members");
  EnsembleSummary s;
  s.instances = records.size();
  for (const auto& mem : records.front().members) s.tags.push_back(mem.tag);
  s.mean_length.assign(m, 0.0);
  s.wins.assign(m, 0);
  for (auto& r : records) {
    require(r.members.size() == m, ErrorCode::ShapeMismatch,
            "select_best: records have different member counts");
    std::size_t best = 0;
    for (std::size_t k = 1; k < m; ++k)
      if (r.members[k].tour.length < r.members[best].tour.length) best = k;
    r.best_member = best;
    r.best = r.members[best].tour;
    const double lo = r.best.length;
    for (std::size_t k = 0; k < m; ++k) {
      s.mean_length[k] += r.members[k].tour.length;
      if (r.members[k].tour.length - lo <= 1e-12) ++s.wins[k];
    }
    s.ensemble_mean += lo;
  }
  const double inv = 1.0 / static_cast<double>(records.size());
  for (std::size_t k = 0; k < m; ++k) {
    s.mean_length[k] *= inv;
    s.win_pct.push_back(100.0 * static_cast<double>(s.wins[k]) * inv);
  }
  s.ensemble_mean *= inv;
  return s;
}

/// The model(s) an ensemble draws from. `primary` drives the deterministic and
/// MC members; `snapshots` are sorted by epoch before use.
struct EnsembleModels {
  const Snapshot* primary = nullptr;
  std::vector<Snapshot> snapshots;
};

/// Evaluates every member on every instance (instance-major) and selects the best.
inline std::vector<InferenceRecord> run_ensemble(const std::vector<EuclideanInstance>& instances,
                                                 EnsembleModels models, const EnsembleConfig& cfg,
                                                 EnsembleSummary* summary = nullptr) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const bool want_primary = cfg.mode != EnsembleMode::Snapshot;
  const bool want_mc = cfg.mode == EnsembleMode::McDropout || cfg.mode == EnsembleMode::Combined;
  const bool want_snap = cfg.mode == EnsembleMode::Snapshot || cfg.mode == EnsembleMode::Combined;
  if (want_primary) require(models.primary != nullptr, ErrorCode::Validation, "ensemble: no model");
  if (want_snap) {
    check_compatible(models.snapshots);
    std::stable_sort(models.snapshots.begin(), models.snapshots.end(),
                     [](const Snapshot& a, const Snapshot& b) { return a.epoch < b.epoch; });
    if (want_primary)
      require(models.primary->config_fingerprint == models.snapshots.front().config_fingerprint,
              ErrorCode::Fingerprint, "ensemble: snapshots do not match the primary model");
  }
  const ModelConfig& mcfg = want_primary ? models.primary->model_cfg : models.snapshots.front().model_cfg;

  std::vector<InferenceRecord> records;
  records.reserve(instances.size());
  for (std::size_t idx = 0; idx < instances.size(); ++idx) {
    InferenceRecord rec;
    rec.instance = idx;
    rec.seed_tag = instances[idx].seed_tag;
    const auto t0 = clock::now();
    const PreparedInstance prep = prepare(instances[idx], mcfg);
    const double prep_s = std::chrono::duration<double>(clock::now() - t0).count();
    auto timed = [&](const std::string& tag, const ModelParams& p, ad::Mode mode, std::uint64_t seed) {
      const auto a = clock::now();
      Tour t = tour_from_logits(forward(prep, p, mcfg, mode, seed), prep.d);
      rec.members.push_back({tag, std::move(t), prep_s + std::chrono::duration<double>(clock::now() - a).count()});
    };
    if (want_primary) timed("deterministic", models.primary->params, ad::Mode::Deterministic, 0);
    if (want_mc)
      for (std::size_t i = 1; i < cfg.mc_passes; ++i)
        timed("mc-" + std::to_string(i), models.primary->params, ad::Mode::McDropout,
              mc_pass_seed(cfg.seed, i));
    if (want_snap)
      for (const auto& s : models.snapshots)
        timed("snapshot-" + std::to_string(s.epoch), s.params, ad::Mode::Deterministic, 0);
    records.push_back(std::move(rec));
  }
  EnsembleSummary s = select_best(records);
  if (summary) *summary = std::move(s);
  return records;
}

}  // namespace permtour
