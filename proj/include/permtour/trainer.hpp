#pragma once

// Unsupervised training loop: minimizes the soft tour objective with AdamW,
// linear warmup then cosine decay, adaptive global-norm clipping, per-epoch
// validation by hard decoding, early stopping and periodic snapshots.
//
// Work inside a step is split into a fixed number of logical shards. Each
// shard sums its instances in order and shards are reduced in index order, so
// results do not depend on how many threads execute the shards.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "permtour/assignment.hpp"
#include "permtour/checkpoint.hpp"
#include "permtour/config.hpp"
#include "permtour/error.hpp"
#include "permtour/instance.hpp"
#include "permtour/perm.hpp"
#include "permtour/rng.hpp"
#include "permtour/sct_gnn.hpp"
#include "permtour/sinkhorn.hpp"

namespace permtour {

struct TrainConfig {
  std::size_t epochs_max = 60;
  double lr = 2e-3;
  double weight_decay = 2.5e-5;
  std::size_t warmup_epochs = 3;
  double clip_multiple = 2.0;  // clip to clip_multiple * running mean of the norm
  double clip_ema_decay = 0.99;
  std::size_t patience = 10;
  std::size_t checkpoint_every = 5;
  std::size_t batch_size = 128;
  std::size_t dataset_size = 100000;
  std::size_t validation_size = 1000;
  std::uint64_t seed = 0;
  std::size_t shards = 8;
  std::size_t threads = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    require(epochs_max >= 1 && warmup_epochs >= 1 && patience >= 1 && checkpoint_every >= 1 &&
                batch_size >= 1 && dataset_size >= 1 && validation_size >= 1 && shards >= 1 &&
                threads >= 1,
            ErrorCode::Validation, "TrainConfig: all counts must be >= 1");
    require(lr > 0.0, ErrorCode::Validation, "TrainConfig: lr must be > 0");
    require(weight_decay >= 0.0, ErrorCode::Validation, "TrainConfig: weight_decay must be >= 0");
    require(clip_multiple > 0.0, ErrorCode::Validation, "TrainConfig: clip_multiple must be > 0");
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"epochs_max", c.epochs_max},       {"lr", c.lr},
          {"weight_decay", c.weight_decay},   {"warmup_epochs", c.warmup_epochs},
          {"clip_multiple", c.clip_multiple}, {"clip_ema_decay", c.clip_ema_decay},
          {"patience", c.patience},           {"checkpoint_every", c.checkpoint_every},
          {"batch_size", c.batch_size},       {"dataset_size", c.dataset_size},
          {"validation_size", c.validation_size}, {"seed", c.seed},
          {"shards", c.shards},               {"threads", c.threads},
          {"adam_beta1", c.adam_beta1},       {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  detail::read_opt(j, "epochs_max", c.epochs_max);
  detail::read_opt(j, "lr", c.lr);
  detail::read_opt(j, "weight_decay", c.weight_decay);
  detail::read_opt(j, "warmup_epochs", c.warmup_epochs);
  detail::read_opt(j, "clip_multiple", c.clip_multiple);
  detail::read_opt(j, "clip_ema_decay", c.clip_ema_decay);
  detail::read_opt(j, "patience", c.patience);
  detail::read_opt(j, "checkpoint_every", c.checkpoint_every);
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "dataset_size", c.dataset_size);
  detail::read_opt(j, "validation_size", c.validation_size);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "shards", c.shards);
  detail::read_opt(j, "threads", c.threads);
  detail::read_opt(j, "adam_beta1", c.adam_beta1);
  detail::read_opt(j, "adam_beta2", c.adam_beta2);
  detail::read_opt(j, "adam_eps", c.adam_eps);
  c.validate();
  return c;
}

/// Learning rate at a global step: linear warmup to `lr`, then cosine decay.
inline double learning_rate(const TrainConfig& cfg, std::size_t steps_per_epoch, std::size_t step) {
  const double warm = static_cast<double>(cfg.warmup_epochs * steps_per_epoch);
  const double total = static_cast<double>(cfg.epochs_max * steps_per_epoch);
  const double s = static_cast<double>(step);
  if (s < warm) return cfg.lr * (s + 1.0) / warm;
  if (total <= warm) return cfg.lr;
  const double progress = std::min(1.0, (s - warm) / (total - warm));
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Decoupled weight decay Adam step.
inline void adamw_update(ModelParams& params, AdamState& st,
                         const std::vector<std::vector<double>>& grads, double lr,
                         const TrainConfig& cfg) {
  if (st.m.size() != params.tensors.size()) {
    st.m.clear();
    st.v.clear();
    for (const auto& t : params.tensors) {
      st.m.emplace_back(t.value.shape, 0.0);
      st.v.emplace_back(t.value.shape, 0.0);
    }
  }
  ++st.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t p = 0; p < params.tensors.size(); ++p) {
    auto& w = params.tensors[p].value.data;
    auto& m = st.m[p].data;
    auto& v = st.v[p].data;
    const auto& g = grads[p];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      w[k] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * w[k]);
    }
  }
}

/// Mean tour length after deterministic forward and noise-free Hungarian decode.
inline double decoded_tour_length(const PreparedInstance& prep, const ModelParams& params,
                                  const ModelConfig& cfg) {
  const Matrix logits = forward(prep, params, cfg, ad::Mode::Deterministic, 0);
  SinkhornConfig sk = cfg.sinkhorn_cfg;
  sk.gamma = 0.0;
  const Permutation p = decode(logits, sk);
  return tour_length(prep.d, tour_from_cycle_matrix(conjugate(p, cyclic_shift(cfg.n))));
}

namespace detail {

/// Runs fn(shard) for shard in [0, shards) on up to `threads` workers.
inline void run_shards(std::size_t shards, std::size_t threads,
                       const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, shards);
  if (threads <= 1) {
    for (std::size_t s = 0; s < shards; ++s) fn(s);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t s = t; s < shards; s += threads) fn(s);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string epoch_file(std::uint64_t epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
  return os.str();
}

}  // namespace detail

inline double validation_mean_length(std::span<const EuclideanInstance> val,
                                     const ModelParams& params, const ModelConfig& cfg,
                                     std::size_t threads = 1) {
  std::vector<double> len(val.size());
  const std::size_t shards = std::max<std::size_t>(1, std::min<std::size_t>(threads, val.size()));
  detail::run_shards(shards, threads, [&](std::size_t s) {
    for (std::size_t i = s; i < val.size(); i += shards)
      len[i] = decoded_tour_length(prepare(val[i], cfg), params, cfg);
  });
  double sum = 0.0;
  for (double l : len) sum += l;
  return sum / static_cast<double>(val.size());
}

/// Progress callback, invoked after every finished epoch.
using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainResult {
  std::vector<Snapshot> snapshots;  // periodic ones, in epoch order
  std::optional<Snapshot> best;
  TrainingHistory history;
  bool early_stopped = false;
  std::uint64_t last_epoch = 0;
};

inline void write_history_csv(const TrainingHistory& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << "epoch,train_loss,val_mean_length,lr\n" << std::setprecision(17);
  for (const auto& r : h)
    out << r.epoch << ',' << r.train_loss << ',' << r.val_mean_length << ',' << r.lr << '\n';
}

/// Most recent periodic snapshot in `dir`, if any.
inline std::optional<std::filesystem::path> latest_snapshot(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) return std::nullopt;
  std::optional<std::filesystem::path> best;
  std::uint64_t best_epoch = 0;
  static const std::regex re(R"(epoch_(\d+)\.ckpt)");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (!std::regex_match(name, m, re)) continue;
    const auto ep = std::stoull(m[1].str());
    if (!best || ep > best_epoch) {
      best = e.path();
      best_epoch = ep;
    }
  }
  return best;
}

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;
  std::optional<Snapshot> resume;
  /// Stop after this epoch even if epochs_max is larger (simulates an
  /// interruption; the schedule still follows epochs_max).
  std::optional<std::uint64_t> stop_after_epoch;
  EpochCallback on_epoch;
};

/// Trains on `data` and validates on `val`. Training instances must all have
/// n == model_cfg.n.
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         std::span<const EuclideanInstance> data,
                         std::span<const EuclideanInstance> val, const TrainOptions& opts = {}) {
  model_cfg.validate();
  train_cfg.validate();
  require(!data.empty(), ErrorCode::Validation, "train: empty dataset");
  require(!val.empty(), ErrorCode::Validation, "train: empty validation set");
  for (const auto& inst : data)
    require(inst.n() == model_cfg.n, ErrorCode::ShapeMismatch,
            "train: instance size differs from model n");

  const std::uint64_t fp = model_cfg.fingerprint();
  const std::size_t steps_per_epoch = (data.size() + train_cfg.batch_size - 1) / train_cfg.batch_size;
  const std::size_t shards = train_cfg.shards;

  Snapshot state;
  std::uint64_t start_epoch = 1;
  if (opts.resume) {
    require(opts.resume->config_fingerprint == fp, ErrorCode::Fingerprint,
            "train: resume snapshot was produced by a different model configuration");
    state = *opts.resume;
    start_epoch = state.epoch + 1;
  } else {
    state.model_cfg = model_cfg;
    state.params = init_params(model_cfg, train_cfg.seed);
    state.config_fingerprint = fp;
    state.trainer.best_val = std::numeric_limits<double>::infinity();
  }

  TrainResult result;
  auto emit = [&](const std::filesystem::path& name, const Snapshot& s) {
    if (opts.out_dir) save_snapshot(s, *opts.out_dir / name);
  };

  const std::size_t nparam = state.params.tensors.size();
  std::vector<std::size_t> order(data.size());

  for (std::uint64_t epoch = start_epoch; epoch <= train_cfg.epochs_max; ++epoch) {
    if (state.trainer.stale_epochs >= train_cfg.patience) {
      result.early_stopped = true;
      break;
    }
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng(derive_seed(train_cfg.seed, {kStreamShuffle, epoch})).shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    double lr = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t begin = step * train_cfg.batch_size;
      const std::size_t end = std::min(begin + train_cfg.batch_size, data.size());
      const std::size_t bs = end - begin;

      std::vector<std::vector<std::vector<double>>> shard_grads(shards);
      std::vector<double> shard_loss(shards, 0.0);
      detail::run_shards(shards, train_cfg.threads, [&](std::size_t s) {
        auto& acc = shard_grads[s];
        acc.resize(nparam);
        for (std::size_t p = 0; p < nparam; ++p) acc[p].assign(state.params.tensors[p].value.size(), 0.0);
        for (std::size_t slot = s; slot < bs; slot += shards) {
          const std::size_t idx = order[begin + slot];
          const PreparedInstance prep = prepare(data[idx], model_cfg);
          SinkhornConfig sk = model_cfg.sinkhorn_cfg;
          sk.noise_seed = derive_seed(train_cfg.seed, {kStreamGumbel, epoch, step, slot});
          const std::uint64_t drop_seed = derive_seed(train_cfg.seed, {kStreamDropout, epoch, step, slot});
          ad::Tape tape;
          const auto vars = bind_params(tape, state.params, true);
          const ad::Var loss = loss_tape(tape, vars, prep, model_cfg, ad::Mode::Train, drop_seed, sk);
          if (!std::isfinite(loss.item()))
            fail(ErrorCode::NonFinite, "train: non-finite loss at epoch " + std::to_string(epoch) +
                                           " step " + std::to_string(step) + " slot " +
                                           std::to_string(slot) + " (noise seed " +
                                           std::to_string(sk.noise_seed) + ")");
          tape.backward(loss);
          shard_loss[s] += loss.item();
          for (std::size_t p = 0; p < nparam; ++p) {
            const auto& g = tape.grad(vars[p].id);
            for (std::size_t k = 0; k < g.size(); ++k) acc[p][k] += g[k];
          }
        }
      });

      std::vector<std::vector<double>> grads(nparam);
      double batch_loss = 0.0;
      for (std::size_t p = 0; p < nparam; ++p) grads[p].assign(state.params.tensors[p].value.size(), 0.0);
      for (std::size_t s = 0; s < shards; ++s) {
        batch_loss += shard_loss[s];
        for (std::size_t p = 0; p < nparam; ++p)
          for (std::size_t k = 0; k < grads[p].size(); ++k) grads[p][k] += shard_grads[s][p][k];
      }
      const double inv = 1.0 / static_cast<double>(bs);
      double norm2 = 0.0;
      for (auto& g : grads)
        for (auto& x : g) {
          x *= inv;
          norm2 += x * x;
        }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm))
        fail(ErrorCode::NonFinite, "train: non-finite gradient at epoch " + std::to_string(epoch) +
                                       " step " + std::to_string(step));

      // Adaptive clipping against a running mean of recent norms.
      double& ema = state.trainer.clip_ema;
      double used = norm;
      if (ema > 0.0) {
        const double cap = train_cfg.clip_multiple * ema;
        if (norm > cap) {
          const double f = cap / norm;
          for (auto& g : grads)
            for (auto& x : g) x *= f;
          used = cap;
        }
        ema = train_cfg.clip_ema_decay * ema + (1.0 - train_cfg.clip_ema_decay) * used;
      } else {
        ema = norm;
      }

      lr = learning_rate(train_cfg, steps_per_epoch, (epoch - 1) * steps_per_epoch + step);
      adamw_update(state.params, state.optimizer_state, grads, lr, train_cfg);
      epoch_loss += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(data.size());
    rec.val_mean_length = validation_mean_length(val, state.params, model_cfg, train_cfg.threads);
    rec.lr = lr;
    state.trainer.history.push_back(rec);
    state.epoch = epoch;
    state.validation_mean_length = rec.val_mean_length;

    if (rec.val_mean_length < state.trainer.best_val) {
      state.trainer.best_val = rec.val_mean_length;
      state.trainer.best_epoch = epoch;
      state.trainer.stale_epochs = 0;
      result.best = state;
      emit("best.ckpt", state);
    } else {
      ++state.trainer.stale_epochs;
    }
    if (epoch % train_cfg.checkpoint_every == 0) {
      result.snapshots.push_back(state);
      emit(detail::epoch_file(epoch), state);
    }
    if (opts.out_dir) write_history_csv(state.trainer.history, *opts.out_dir / "history.csv");
    if (opts.on_epoch) opts.on_epoch(rec);
    result.last_epoch = epoch;
    if (opts.stop_after_epoch && epoch >= *opts.stop_after_epoch) break;
  }
  if (state.trainer.stale_epochs >= train_cfg.patience) result.early_stopped = true;
  result.history = state.trainer.history;
  if (result.last_epoch == 0) result.last_epoch = state.epoch;
  return result;
}

/// Trains into `out_dir`, resuming from the newest periodic snapshot found
/// there. A finished run is picked up where it stopped, so calling this again
/// with the same arguments only re-reads the directory.
inline TrainResult train_in_dir(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                std::span<const EuclideanInstance> data,
                                std::span<const EuclideanInstance> val,
                                const std::filesystem::path& out_dir, EpochCallback on_epoch = {}) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cfg_out(out_dir / "config.json");
    if (!cfg_out) fail(ErrorCode::Io, "cannot write " + (out_dir / "config.json").string());
    cfg_out << json{{"model", to_json(model_cfg)}, {"train", to_json(train_cfg)}}.dump(2) << '\n';
  }
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.on_epoch = std::move(on_epoch);
  if (auto latest = latest_snapshot(out_dir)) opts.resume = load_snapshot(*latest, model_cfg);
  return train(model_cfg, train_cfg, data, val, opts);
}

}  // namespace permtour
