#pragma once

// File formats.
//
// Instances (binary): records back to back, each
//   u64 n, u64 seed_tag, then n pairs of f64 (x, y), all little-endian.
// Instances (JSON lines): {"n":..,"seed_tag":..,"coords":[[x,y],..]}
// Tours (JSON lines): {"order":[..],"length":..}
// Tours (text): one tour per line, space-separated node indices.
// Features (CSV): one node per row.
// Inference records (JSON lines) and ensemble summary (CSV).

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "permtour/ensemble.hpp"
#include "permtour/equifeat.hpp"
#include "permtour/error.hpp"
#include "permtour/instance.hpp"
#include "permtour/perm.hpp"

namespace permtour {

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
  out.write(b, 8);
}

inline bool get_u64(std::istream& in, std::uint64_t& v, bool allow_eof) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() == 0 && allow_eof) return false;
  if (in.gcount() != 8) fail(ErrorCode::Io, "instance file: truncated record");
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return true;
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + p.string() + " for writing");
  out << std::setprecision(17);
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = false) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(ErrorCode::Io, "cannot open " + p.string());
  return in;
}

}  // namespace detail

inline void write_instances(std::ostream& out, const std::vector<EuclideanInstance>& insts) {
  for (const auto& inst : insts) {
    detail::put_u64(out, inst.n());
    detail::put_u64(out, inst.seed_tag);
    for (const auto& p : inst.coords) {
      detail::put_u64(out, std::bit_cast<std::uint64_t>(p.x));
      detail::put_u64(out, std::bit_cast<std::uint64_t>(p.y));
    }
  }
}

inline std::vector<EuclideanInstance> read_instances(std::istream& in) {
  std::vector<EuclideanInstance> out;
  std::uint64_t n = 0;
  while (detail::get_u64(in, n, true)) {
    if (n < 3 || n > (1u << 24)) fail(ErrorCode::Io, "instance file: implausible n=" + std::to_string(n));
    EuclideanInstance inst;
    detail::get_u64(in, inst.seed_tag, false);
    inst.coords.resize(n);
    for (auto& p : inst.coords) {
      std::uint64_t x = 0, y = 0;
      detail::get_u64(in, x, false);
      detail::get_u64(in, y, false);
      p = {std::bit_cast<double>(x), std::bit_cast<double>(y)};
    }
    validate(inst);
    out.push_back(std::move(inst));
  }
  return out;
}

inline nlohmann::json instance_to_json(const EuclideanInstance& inst) {
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& p : inst.coords) coords.push_back({p.x, p.y});
  return {{"n", inst.n()}, {"seed_tag", inst.seed_tag}, {"coords", coords}};
}

inline EuclideanInstance instance_from_json(const nlohmann::json& j) {
  EuclideanInstance inst;
  try {
    if (j.contains("seed_tag")) inst.seed_tag = j.at("seed_tag").get<std::uint64_t>();
    for (const auto& c : j.at("coords")) inst.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    if (j.contains("n"))
      require(j.at("n").get<std::size_t>() == inst.n(), ErrorCode::Validation,
              "instance JSON: n does not match the coordinate count");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, std::string("instance JSON: ") + e.what());
  }
  validate(inst);
  return inst;
}

inline void write_instances_jsonl(std::ostream& out, const std::vector<EuclideanInstance>& insts) {
  for (const auto& inst : insts) out << instance_to_json(inst).dump() << '\n';
}

inline std::vector<EuclideanInstance> read_instances_jsonl(std::istream& in) {
  std::vector<EuclideanInstance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Io, std::string("instance JSON: ") + e.what());
    }
    out.push_back(instance_from_json(j));
  }
  return out;
}

/// Reads either format, chosen by extension (.jsonl / .json, else binary).
inline std::vector<EuclideanInstance> load_instances(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".jsonl" || ext == ".json") {
    auto in = detail::open_in(p);
    return read_instances_jsonl(in);
  }
  auto in = detail::open_in(p, true);
  return read_instances(in);
}

inline void save_instances(const std::filesystem::path& p, const std::vector<EuclideanInstance>& insts) {
  const auto ext = p.extension().string();
  if (ext == ".jsonl" || ext == ".json") {
    auto out = detail::open_out(p);
    write_instances_jsonl(out, insts);
    if (!out) fail(ErrorCode::Io, "write failed for " + p.string());
    return;
  }
  auto out = detail::open_out(p, true);
  write_instances(out, insts);
  if (!out) fail(ErrorCode::Io, "write failed for " + p.string());
}

inline nlohmann::json tour_to_json(const Tour& t) { return {{"order", t.order}, {"length", t.length}}; }

inline Tour tour_from_json(const nlohmann::json& j) {
  try {
    return Tour{j.at("order").get<std::vector<std::size_t>>(), j.at("length").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, std::string("tour JSON: ") + e.what());
  }
}

inline void write_tour_text(std::ostream& out, const Tour& t) {
  for (std::size_t k = 0; k < t.order.size(); ++k) out << (k ? " " : "") << t.order[k];
  out << '\n';
}

inline std::vector<std::size_t> read_tour_text(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::size_t> order;
  long long v = 0;
  while (is >> v) {
    if (v < 0) fail(ErrorCode::Io, "tour text: negative index");
    order.push_back(static_cast<std::size_t>(v));
  }
  if (!is.eof()) fail(ErrorCode::Io, "tour text: bad token");
  Permutation check(order);  // must be a bijection on 0..n-1
  (void)check;
  return order;
}

inline void write_features_csv(std::ostream& out, const NodeFeatures& f) {
  out << "node,r,a_x,a_y";
  for (std::size_t m = 1; m <= f.harmonics; ++m) out << ",sin" << m;
  for (std::size_t m = 1; m <= f.harmonics; ++m) out << ",cos" << m;
  out << ",theta\n" << std::setprecision(17);
  for (std::size_t i = 0; i < f.n(); ++i) {
    out << i;
    for (std::size_t c = 0; c < f.f.cols(); ++c) out << ',' << f.f(i, c);
    out << ',' << f.theta[i] << '\n';
  }
}

inline nlohmann::json record_to_json(const InferenceRecord& r) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : r.members)
    members.push_back({{"tag", m.tag}, {"order", m.tour.order}, {"length", m.tour.length}, {"seconds", m.seconds}});
  return {{"instance", r.instance},
          {"seed_tag", r.seed_tag},
          {"members", members},
          {"winner", r.members.at(r.best_member).tag},
          {"best", tour_to_json(r.best)}};
}

inline InferenceRecord record_from_json(const nlohmann::json& j) {
  InferenceRecord r;
  try {
    r.instance = j.at("instance").get<std::size_t>();
    r.seed_tag = j.value("seed_tag", std::uint64_t{0});
    for (const auto& m : j.at("members"))
      r.members.push_back({m.at("tag").get<std::string>(),
                           Tour{m.at("order").get<std::vector<std::size_t>>(), m.at("length").get<double>()},
                           m.value("seconds", 0.0)});
    const auto winner = j.at("winner").get<std::string>();
    for (std::size_t k = 0; k < r.members.size(); ++k)
      if (r.members[k].tag == winner) {
        r.best_member = k;
        break;
      }
    r.best = tour_from_json(j.at("best"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, std::string("inference record: ") + e.what());
  }
  return r;
}

inline void write_records_jsonl(std::ostream& out, const std::vector<InferenceRecord>& recs) {
  for (const auto& r : recs) out << record_to_json(r).dump() << '\n';
}

inline std::vector<InferenceRecord> read_records_jsonl(std::istream& in) {
  std::vector<InferenceRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::Io, std::string("inference record: ") + e.what());
    }
  }
  return out;
}

/// Columns: member,mean_length,wins,win_pct, then an "ensemble" row.
inline void write_summary_csv(std::ostream& out, const EnsembleSummary& s) {
  out << "member,mean_length,wins,win_pct\n" << std::setprecision(17);
  for (std::size_t k = 0; k < s.tags.size(); ++k)
    out << s.tags[k] << ',' << s.mean_length[k] << ',' << s.wins[k] << ',' << s.win_pct[k] << '\n';
  out << "ensemble," << s.ensemble_mean << ",,\n";
}

}  // namespace permtour
