#pragma once

// JSON (de)serialization of the configuration structs. Missing keys keep their
// defaults so partial config files are accepted.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "permtour/equifeat.hpp"
#include "permtour/error.hpp"
#include "permtour/sct_gnn.hpp"
#include "permtour/sinkhorn.hpp"

namespace permtour {

using json = nlohmann::json;

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Validation, std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline std::string to_string(SignRule r) {
  return r == SignRule::FirstComponent ? "first_component" : "third_moment";
}

inline SignRule sign_rule_from_string(const std::string& s) {
  if (s == "first_component") return SignRule::FirstComponent;
  if (s == "third_moment") return SignRule::ThirdMoment;
  fail(ErrorCode::Validation, "unknown sign rule '" + s + "'");
}

inline json to_json(const FeatureConfig& c) {
  return {{"harmonics", c.harmonics},
          {"eps_radius", c.eps_radius},
          {"degeneracy_tol", c.degeneracy_tol},
          {"sign_rule", to_string(c.sign_rule)}};
}

inline FeatureConfig feature_config_from_json(const json& j) {
  FeatureConfig c;
  detail::read_opt(j, "harmonics", c.harmonics);
  detail::read_opt(j, "eps_radius", c.eps_radius);
  detail::read_opt(j, "degeneracy_tol", c.degeneracy_tol);
  if (j.contains("sign_rule")) c.sign_rule = sign_rule_from_string(j.at("sign_rule").get<std::string>());
  return c;
}

inline json to_json(const SinkhornConfig& c) {
  return {{"tau", c.tau}, {"gamma", c.gamma}, {"iters", c.iters}, {"noise_seed", c.noise_seed}};
}

inline SinkhornConfig sinkhorn_config_from_json(const json& j, SinkhornConfig c = {}) {
  detail::read_opt(j, "tau", c.tau);
  detail::read_opt(j, "gamma", c.gamma);
  detail::read_opt(j, "iters", c.iters);
  detail::read_opt(j, "noise_seed", c.noise_seed);
  return c;
}

inline json to_json(const ModelConfig& c) {
  return {{"n", c.n},
          {"layers", c.layers},
          {"hidden", c.hidden},
          {"attention_width", c.attention_width},
          {"scattering_scales", c.scattering_scales},
          {"alpha", c.alpha},
          {"dropout_p", c.dropout_p},
          {"distance_scale", c.distance_scale},
          {"features", to_json(c.feature_cfg)},
          {"sinkhorn", to_json(c.sinkhorn_cfg)}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  detail::read_opt(j, "n", c.n);
  detail::read_opt(j, "layers", c.layers);
  detail::read_opt(j, "hidden", c.hidden);
  detail::read_opt(j, "attention_width", c.attention_width);
  detail::read_opt(j, "scattering_scales", c.scattering_scales);
  detail::read_opt(j, "alpha", c.alpha);
  detail::read_opt(j, "dropout_p", c.dropout_p);
  detail::read_opt(j, "distance_scale", c.distance_scale);
  if (j.contains("features")) c.feature_cfg = feature_config_from_json(j.at("features"));
  if (j.contains("sinkhorn")) c.sinkhorn_cfg = sinkhorn_config_from_json(j.at("sinkhorn"), c.sinkhorn_cfg);
  c.validate();
  return c;
}

}  // namespace permtour
