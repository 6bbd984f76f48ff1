// permtour command-line tool: generate, train, infer, bench, oracle, report,
// features. Errors print one line "error <CODE>: <message>" and exit 2.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "permtour/permtour.hpp"

namespace fs = std::filesystem;
using namespace permtour;

namespace {

using clock_type = std::chrono::steady_clock;

double since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

fs::path under_env(const std::string& p, const char* env) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* base = std::getenv(env)) return fs::path(base) / path;
  return path;
}

fs::path data_path(const std::string& p) { return under_env(p, "PERMTOUR_DATA_DIR"); }
fs::path ckpt_path(const std::string& p) { return under_env(p, "PERMTOUR_CKPT_DIR"); }

// Writes through a temporary file so a failed run never leaves a partial output.
void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) fail(ErrorCode::Io, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorCode::Io, "cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::Io, p.string() + ": " + e.what());
  }
}

std::vector<EuclideanInstance> load_data(const std::string& p) {
  auto insts = load_instances(data_path(p));
  require(!insts.empty(), ErrorCode::Validation, "no instances in " + p);
  return insts;
}

json seeds_json(std::uint64_t seed) { return {{"root_seed", seed}}; }

json build_info() {
  return {{"compiler", __VERSION__}, {"cxx", static_cast<long>(__cplusplus)},
#ifdef NDEBUG
          {"ndebug", true}
#else
          {"ndebug", false}
#endif
  };
}

struct Common {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// ---------------------------------------------------------------- generate
struct GenerateOpts {
  std::size_t n = 20;
  std::size_t count = 1000;
  std::string out;
};

void run_generate(const GenerateOpts& o, const Common& c) {
  const auto insts = generate_uniform(o.n, o.count, c.seed);
  const fs::path out = data_path(o.out);
  std::ostringstream body;
  const auto ext = out.extension().string();
  if (ext == ".jsonl" || ext == ".json")
    write_instances_jsonl(body, insts);
  else
    write_instances(body, insts);
  write_atomic(out, body.str());
  write_atomic(out.string() + ".config.json",
               json{{"command", "generate"}, {"n", o.n}, {"count", o.count}, {"seed", c.seed}}.dump(2) + "\n");
  std::cout << "wrote " << insts.size() << " instances (n=" << o.n << ") to " << out.string() << "\n";
}

// ------------------------------------------------------------------- train
struct TrainOpts {
  std::string model_cfg, train_cfg, data, val, out_dir = "run";
  std::size_t n = 0, val_count = 1000;
  std::optional<std::size_t> epochs, batch, dataset, layers, hidden, warmup, patience, every, shards, iters;
  std::optional<double> lr, wd, alpha, dropout, tau, gamma, clip;
  std::optional<std::uint64_t> stop_after;
};

void run_train(const TrainOpts& o, const Common& c) {
  ModelConfig mc = o.model_cfg.empty() ? ModelConfig{} : model_config_from_json(read_json_file(o.model_cfg));
  TrainConfig tc = o.train_cfg.empty() ? TrainConfig{} : train_config_from_json(read_json_file(o.train_cfg));
  if (o.n) mc.n = o.n;
  if (o.layers) mc.layers = *o.layers;
  if (o.hidden) mc.hidden = *o.hidden;
  if (o.alpha) mc.alpha = *o.alpha;
  if (o.dropout) mc.dropout_p = *o.dropout;
  if (o.tau) mc.sinkhorn_cfg.tau = *o.tau;
  if (o.gamma) mc.sinkhorn_cfg.gamma = *o.gamma;
  if (o.iters) mc.sinkhorn_cfg.iters = *o.iters;
  if (o.epochs) tc.epochs_max = *o.epochs;
  if (o.batch) tc.batch_size = *o.batch;
  if (o.dataset) tc.dataset_size = *o.dataset;
  if (o.warmup) tc.warmup_epochs = *o.warmup;
  if (o.patience) tc.patience = *o.patience;
  if (o.every) tc.checkpoint_every = *o.every;
  if (o.shards) tc.shards = *o.shards;
  if (o.lr) tc.lr = *o.lr;
  if (o.wd) tc.weight_decay = *o.wd;
  if (o.clip) tc.clip_multiple = *o.clip;
  tc.seed = c.seed;
  tc.threads = c.threads;
  tc.validation_size = o.val_count;
  mc.validate();
  tc.validate();

  std::vector<EuclideanInstance> data, val;
  if (!o.data.empty()) {
    data = load_data(o.data);
    if (data.size() > tc.dataset_size) data.resize(tc.dataset_size);
    tc.dataset_size = data.size();
  } else {
    data = generate_uniform(mc.n, tc.dataset_size, derive_seed(c.seed, {kStreamInstances, 1}));
  }
  if (!o.val.empty())
    val = load_data(o.val);
  else
    val = generate_uniform(mc.n, tc.validation_size, derive_seed(c.seed, {kStreamInstances, 2}));
  tc.validation_size = val.size();

  const fs::path dir = ckpt_path(o.out_dir);
  fs::create_directories(dir);
  if (auto latest = latest_snapshot(dir)) std::cout << "resuming from " << latest->string() << "\n";
  TrainOptions opts;
  opts.out_dir = dir;
  opts.stop_after_epoch = o.stop_after;
  opts.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %llu  loss %.6f  val %.6f  lr %.3e\n", static_cast<unsigned long long>(r.epoch),
                r.train_loss, r.val_mean_length, r.lr);
    std::fflush(stdout);
  };
  if (auto latest = latest_snapshot(dir)) opts.resume = load_snapshot(*latest, mc);
  write_atomic(dir / "config.json",
               json{{"model", to_json(mc)}, {"train", to_json(tc)}, {"seed", c.seed}}.dump(2) + "\n");
  const TrainResult res = train(mc, tc, data, val, opts);
  std::cout << "finished at epoch " << res.last_epoch << (res.early_stopped ? " (early stop)" : "")
            << "; snapshots in " << dir.string() << "\n";
}

// ------------------------------------------------------------------- infer
struct InferOpts {
  std::vector<std::string> checkpoints;
  std::vector<std::string> snapshots;
  std::string mode = "det";
  std::size_t passes = 10;
  std::string data, out = "infer.jsonl";
};

EnsembleModels load_models(const std::vector<std::string>& ckpts, const std::vector<std::string>& snaps,
                           Snapshot& primary_storage, bool need_primary) {
  EnsembleModels m;
  if (need_primary) {
    require(!ckpts.empty(), ErrorCode::Validation, "--checkpoint is required for this mode");
    primary_storage = load_snapshot(ckpt_path(ckpts.front()));
    m.primary = &primary_storage;
  }
  for (const auto& s : snaps) m.snapshots.push_back(load_snapshot(ckpt_path(s)));
  if (!need_primary && m.snapshots.empty())
    for (const auto& s : ckpts) m.snapshots.push_back(load_snapshot(ckpt_path(s)));
  return m;
}

void run_infer(const InferOpts& o, const Common& c) {
  EnsembleConfig ec;
  ec.mode = ensemble_mode_from_string(o.mode);
  ec.mc_passes = o.passes;
  ec.seed = c.seed;
  const bool need_primary = ec.mode != EnsembleMode::Snapshot;
  Snapshot primary;
  EnsembleModels models = load_models(o.checkpoints, o.snapshots, primary, need_primary);
  for (const auto& s : models.snapshots) ec.snapshot_paths.push_back("epoch-" + std::to_string(s.epoch));
  const auto insts = load_data(o.data);
  EnsembleSummary summary;
  const auto recs = run_ensemble(insts, std::move(models), ec, &summary);
  const fs::path out = data_path(o.out);
  std::ostringstream body, csv;
  write_records_jsonl(body, recs);
  write_summary_csv(csv, summary);
  write_atomic(out, body.str());
  write_atomic(out.string() + ".summary.csv", csv.str());
  write_atomic(out.string() + ".config.json",
               json{{"command", "infer"}, {"mode", to_string(ec.mode)}, {"passes", ec.mc_passes},
                    {"seed", c.seed}, {"checkpoints", o.checkpoints}, {"snapshots", o.snapshots},
                    {"data", o.data}}.dump(2) + "\n");
  write_ensemble_table(std::cout, summary, TableFormat::Markdown);
}

// ------------------------------------------------------------------- bench
struct BenchOpts {
  std::string data, methods = "nn,2opt", out = "bench";
  std::vector<std::string> checkpoints, snapshots;
  std::size_t oracle_max_n = 0;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

BenchmarkReport run_bench_methods(const BenchOpts& o, const Common& c, const std::vector<EuclideanInstance>& insts) {
  BenchmarkReport rep;
  rep.metadata = {{"seeds", seeds_json(c.seed)}, {"build", build_info()}, {"data", o.data},
                  {"fingerprints", json::object()}};
  const auto methods = split(o.methods, ',');
  require(!methods.empty(), ErrorCode::Validation, "--methods is empty");

  std::optional<Snapshot> primary;
  std::vector<Snapshot> snaps;
  auto need_primary = [&]() -> const Snapshot& {
    if (!primary) {
      require(!o.checkpoints.empty(), ErrorCode::Validation, "model methods need --checkpoint");
      primary = load_snapshot(ckpt_path(o.checkpoints.front()));
      rep.metadata["fingerprints"]["primary"] = primary->config_fingerprint;
    }
    return *primary;
  };
  auto need_snaps = [&]() -> const std::vector<Snapshot>& {
    if (snaps.empty()) {
      const auto& list = o.snapshots.empty() ? o.checkpoints : o.snapshots;
      require(!list.empty(), ErrorCode::Validation, "model:snap needs --snapshots or --checkpoint");
      for (const auto& s : list) snaps.push_back(load_snapshot(ckpt_path(s)));
      rep.metadata["fingerprints"]["snapshots"] = snaps.front().config_fingerprint;
    }
    return snaps;
  };

  for (const auto& name : methods) {
    MethodRun run;
    run.name = name;
    if (name == "nn" || name == "nn-best" || name == "2opt" || name == "2opt-best") {
      BaselineConfig bc;
      bc.seed = c.seed;
      if (name == "nn-best") bc.nn_start = NnStart::BestOfAll;
      if (name == "2opt-best") bc.two_opt_strategy = TwoOptStrategy::BestImprovement;
      for (const auto& inst : insts) {
        const auto t0 = clock_type::now();
        const auto d = distance_matrix(inst);
        const Tour t = name.rfind("nn", 0) == 0 ? greedy_nn(d, bc) : two_opt(d, bc);
        run.seconds.push_back(since(t0));
        run.lengths.push_back(t.length);
      }
    } else if (name.rfind("model:", 0) == 0) {
      const std::string kind = name.substr(6);
      EnsembleConfig ec;
      ec.seed = c.seed;
      EnsembleModels models;
      const auto t0 = clock_type::now();
      if (kind == "det") {
        ec.mode = EnsembleMode::Deterministic;
        models.primary = &need_primary();
      } else if (kind.rfind("mc", 0) == 0) {
        ec.mode = EnsembleMode::McDropout;
        ec.mc_passes = kind.size() > 2 ? std::stoul(kind.substr(2)) : 10;
        models.primary = &need_primary();
      } else if (kind == "snap") {
        ec.mode = EnsembleMode::Snapshot;
        models.snapshots = need_snaps();
      } else if (kind.rfind("combined", 0) == 0) {
        ec.mode = EnsembleMode::Combined;
        ec.mc_passes = kind.size() > 8 ? std::stoul(kind.substr(8)) : 10;
        models.primary = &need_primary();
        models.snapshots = need_snaps();
      } else {
        fail(ErrorCode::Validation, "unknown model method '" + name + "'");
      }
      for (std::size_t k = 0; k < models.snapshots.size(); ++k) ec.snapshot_paths.push_back(std::to_string(k));
      run.setup_seconds = since(t0);
      const auto recs = run_ensemble(insts, std::move(models), ec);
      for (const auto& r : recs) {
        double s = 0.0;
        for (const auto& m : r.members) s += m.seconds;
        run.seconds.push_back(s);
        run.lengths.push_back(r.best.length);
      }
    } else {
      fail(ErrorCode::Validation, "unknown method '" + name + "'");
    }
    rep.methods.push_back(std::move(run));
  }
  return rep;
}

void attach_oracle(BenchmarkReport& rep, const std::vector<EuclideanInstance>& insts, std::size_t max_n) {
  std::vector<double> opt;
  for (const auto& inst : insts) {
    if (inst.n() > max_n)
      fail(ErrorCode::Capability, "oracle: instance with n=" + std::to_string(inst.n()) +
                                      " exceeds --max-n " + std::to_string(max_n));
    opt.push_back(held_karp(distance_matrix(inst)).length);
  }
  rep.optimum = std::move(opt);
  rep.metadata["oracle"] = {{"method", "held_karp"}, {"max_n", max_n}};
}

void emit_report(const BenchmarkReport& rep, const fs::path& prefix) {
  std::ostringstream csv, inst_csv, hist;
  write_method_table(csv, rep, TableFormat::Csv);
  write_instances_csv(inst_csv, rep);
  write_histograms_csv(hist, rep);
  write_atomic(prefix.string() + ".json", to_json(rep).dump(2) + "\n");
  write_atomic(prefix.string() + ".csv", csv.str());
  write_atomic(prefix.string() + ".instances.csv", inst_csv.str());
  write_atomic(prefix.string() + ".hist.csv", hist.str());
}

void run_bench(const BenchOpts& o, const Common& c) {
  const auto insts = load_data(o.data);
  BenchmarkReport rep = run_bench_methods(o, c, insts);
  if (o.oracle_max_n) attach_oracle(rep, insts, o.oracle_max_n);
  emit_report(rep, data_path(o.out));
  write_method_table(std::cout, rep, TableFormat::Markdown);
}

// ------------------------------------------------------------------ oracle
struct OracleOpts {
  std::string data, in, out;
  std::size_t max_n = 16;
};

void run_oracle(const OracleOpts& o, const Common&) {
  require(o.max_n <= kHeldKarpMaxN, ErrorCode::Capability,
          "--max-n may not exceed " + std::to_string(kHeldKarpMaxN));
  const auto insts = load_data(o.data);
  BenchmarkReport rep;
  if (!o.in.empty()) {
    rep = report_from_json(read_json_file(data_path(o.in)));
    require(rep.instances() == insts.size() || rep.methods.empty(), ErrorCode::ShapeMismatch,
            "oracle: report and data have different instance counts");
  }
  attach_oracle(rep, insts, o.max_n);
  const std::string out = !o.out.empty() ? o.out : (!o.in.empty() ? fs::path(o.in).replace_extension().string() : "oracle");
  emit_report(rep, data_path(out));
  write_method_table(std::cout, rep, TableFormat::Markdown);
}

// ------------------------------------------------------------------ report
struct ReportOpts {
  std::string in, format = "md", out;
};

void run_report(const ReportOpts& o, const Common&) {
  const TableFormat f = table_format_from_string(o.format);
  const fs::path in = data_path(o.in);
  std::ostringstream body;
  if (in.extension() == ".jsonl") {
    std::ifstream s(in);
    if (!s) fail(ErrorCode::Io, "cannot open " + in.string());
    auto recs = read_records_jsonl(s);
    write_ensemble_table(body, select_best(recs), f);
  } else {
    write_method_table(body, report_from_json(read_json_file(in)), f);
  }
  if (o.out.empty())
    std::cout << body.str();
  else
    write_atomic(data_path(o.out), body.str());
}

// ---------------------------------------------------------------- features
struct FeaturesOpts {
  std::string data, out;
  std::size_t index = 0;
  std::string sign_rule = "third_moment";
};

void run_features(const FeaturesOpts& o, const Common&) {
  const auto insts = load_data(o.data);
  require(o.index < insts.size(), ErrorCode::Validation, "--index out of range");
  FeatureConfig fc;
  fc.sign_rule = sign_rule_from_string(o.sign_rule);
  const auto frame = canonical_frame(insts[o.index], fc);
  std::ostringstream body;
  write_features_csv(body, node_features(insts[o.index], frame, fc));
  if (frame.degenerate) std::cerr << "note: degenerate covariance, standard basis used\n";
  if (o.out.empty())
    std::cout << body.str();
  else
    write_atomic(data_path(o.out), body.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"permtour: unsupervised permutation learning for Euclidean TSP"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "root seed for every random stream")->default_val(0);
  app.add_option("--threads", common.threads, "worker threads")->default_val(1)->check(CLI::PositiveNumber);

  GenerateOpts gen;
  auto* g = app.add_subcommand("generate", "write uniform instances");
  g->add_option("--n", gen.n, "cities per instance")->default_val(20)->check(CLI::Range(3, 1 << 20));
  g->add_option("--count", gen.count, "number of instances")->default_val(1000)->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "output file (.bin or .jsonl)")->required();

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--model-cfg", tr.model_cfg, "model config JSON");
  t->add_option("--train-cfg", tr.train_cfg, "training config JSON");
  t->add_option("--data", tr.data, "training instances (default: generated from --seed)");
  t->add_option("--val", tr.val, "validation instances (default: generated from --seed)");
  t->add_option("--val-count", tr.val_count, "generated validation size")->default_val(1000);
  t->add_option("--out-dir", tr.out_dir, "snapshot directory (resumed if it has snapshots)")->default_val("run");
  t->add_option("--n", tr.n, "problem size");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch);
  t->add_option("--dataset-size", tr.dataset);
  t->add_option("--layers", tr.layers);
  t->add_option("--hidden", tr.hidden);
  t->add_option("--warmup-epochs", tr.warmup);
  t->add_option("--patience", tr.patience);
  t->add_option("--checkpoint-every", tr.every);
  t->add_option("--shards", tr.shards);
  t->add_option("--sinkhorn-iters", tr.iters);
  t->add_option("--lr", tr.lr);
  t->add_option("--weight-decay", tr.wd);
  t->add_option("--alpha", tr.alpha);
  t->add_option("--dropout", tr.dropout);
  t->add_option("--tau", tr.tau);
  t->add_option("--gamma", tr.gamma);
  t->add_option("--clip-multiple", tr.clip);
  t->add_option("--stop-after-epoch", tr.stop_after, "stop early (the schedule still spans --epochs)");

  InferOpts inf;
  auto* in = app.add_subcommand("infer", "decode tours with a trained model");
  in->add_option("--checkpoint,--checkpoints", inf.checkpoints, "snapshot file(s); the first drives det/mc");
  in->add_option("--snapshots", inf.snapshots, "snapshot members for snapshot/combined modes");
  in->add_option("--mode", inf.mode, "det|mc|snapshot|combined")->default_val("det")
      ->check(CLI::IsMember({"det", "mc", "snapshot", "combined"}));
  in->add_option("--passes", inf.passes, "MC ensemble size (deterministic pass included)")->default_val(10)
      ->check(CLI::PositiveNumber);
  in->add_option("--data", inf.data, "instances")->required();
  in->add_option("--out", inf.out, "records (JSON lines)")->default_val("infer.jsonl");

  BenchOpts be;
  auto* b = app.add_subcommand("bench", "compare methods on a data set");
  b->add_option("--data", be.data, "instances")->required();
  b->add_option("--methods", be.methods, "comma list: nn,nn-best,2opt,2opt-best,model:det,model:mcK,model:snap,model:combinedK")
      ->default_val("nn,2opt");
  b->add_option("--checkpoint,--checkpoints", be.checkpoints, "snapshot file(s)");
  b->add_option("--snapshots", be.snapshots, "snapshot members for model:snap");
  b->add_option("--oracle-max-n", be.oracle_max_n, "also compute Held-Karp optima when n <= this")->default_val(0);
  b->add_option("--out", be.out, "output prefix (.json, .csv, .instances.csv, .hist.csv)")->default_val("bench");

  OracleOpts orc;
  auto* o = app.add_subcommand("oracle", "exact Held-Karp optima for small instances");
  o->add_option("--data", orc.data, "instances")->required();
  o->add_option("--max-n", orc.max_n, "largest n accepted")->default_val(16);
  o->add_option("--in", orc.in, "bench report JSON to extend");
  o->add_option("--out", orc.out, "output prefix");

  ReportOpts rp;
  auto* r = app.add_subcommand("report", "summary tables from a bench report or inference records");
  r->add_option("--in", rp.in, "report .json or records .jsonl")->required();
  r->add_option("--format", rp.format, "csv|json|md")->default_val("md")->check(CLI::IsMember({"csv", "json", "md"}));
  r->add_option("--out", rp.out, "output file (default stdout)");

  FeaturesOpts fe;
  auto* f = app.add_subcommand("features", "dump equivariant node features as CSV");
  f->add_option("--data", fe.data, "instances")->required();
  f->add_option("--index", fe.index, "instance index")->default_val(0);
  f->add_option("--sign-rule", fe.sign_rule, "third_moment|first_component")->default_val("third_moment");
  f->add_option("--out", fe.out, "output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error E_USAGE: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*g) run_generate(gen, common);
    if (*t) run_train(tr, common);
    if (*in) run_infer(inf, common);
    if (*b) run_bench(be, common);
    if (*o) run_oracle(orc, common);
    if (*r) run_report(rp, common);
    if (*f) run_features(fe, common);
  } catch (const Error& e) {
    std::cerr << "error " << to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error E_INTERNAL: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
