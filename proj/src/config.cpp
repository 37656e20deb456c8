// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace ovseg {

std::string to_string(BackgroundMode mode) { return mode == BackgroundMode::kQueries ? "queries" : "threshold"; }

BackgroundMode background_mode_from_string(const std::string& s) {
  if (s == "queries") return BackgroundMode::kQueries;
  if (s == "threshold") return BackgroundMode::kThreshold;
  throw ConfigError("unknown background mode '" + s + "' (expected queries|threshold)");
}

namespace {

VgScope vg_scope_from_string(const std::string& s) {
  if (s == "restricted") return VgScope::kRestricted;
  if (s == "global") return VgScope::kGlobal;
  throw ConfigError("unknown vg_scope '" + s + "' (expected restricted|global)");
}

std::string to_string(VgScope s) { return s == VgScope::kRestricted ? "restricted" : "global"; }

bool parse_switch(const nlohmann::json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "on" || s == "true") return true;
    if (s == "off" || s == "false") return false;
  }
  throw ConfigError("'" + key + "' must be on|off");
}

}  // namespace

void RunConfig::apply(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {
      "version",    "backend",       "base_dir",  "cache_dir",     "alpha",
      "beta",       "tau",           "threshold", "gate",          "logit_scale",
      "self_correction", "self_correction_scale", "aggregation", "softmax_scope", "vg_scope", "min_support",
      "anchor_only_when_unsupported", "background", "background_threshold", "jobs", "max_images"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    if (j.contains("version") && j["version"] != 1) throw ConfigError("unsupported config version");
    if (j.contains("backend")) backend = j["backend"];
    if (j.contains("base_dir")) base_dir = j["base_dir"].get<std::string>();
    if (j.contains("cache_dir")) cache_dir = j["cache_dir"].get<std::string>();
    if (j.contains("alpha")) alpha = j["alpha"].get<double>();
    if (j.contains("beta")) beta = j["beta"].get<int>();
    if (j.contains("tau")) tau = j["tau"].get<double>();
    if (j.contains("threshold")) threshold = j["threshold"].get<double>();
    if (j.contains("gate")) gate = j["gate"].get<double>();
    if (j.contains("logit_scale")) {
      logit_scale = j["logit_scale"].is_null() ? std::nullopt : std::optional<double>(j["logit_scale"].get<double>());
    }
    if (j.contains("self_correction")) self_correction = parse_switch(j["self_correction"], "self_correction");
    if (j.contains("aggregation")) aggregation = aggregation_mode_from_string(j["aggregation"].get<std::string>());
    if (j.contains("softmax_scope")) softmax_scope = softmax_scope_from_string(j["softmax_scope"].get<std::string>());
    if (j.contains("vg_scope")) vg_scope = vg_scope_from_string(j["vg_scope"].get<std::string>());
    if (j.contains("min_support")) min_support = j["min_support"].get<int>();
    if (j.contains("anchor_only_when_unsupported")) {
      anchor_only_when_unsupported = j["anchor_only_when_unsupported"].get<bool>();
    }
    if (j.contains("background")) background = background_mode_from_string(j["background"].get<std::string>());
    if (j.contains("background_threshold")) background_threshold = j["background_threshold"].get<double>();
    if (j.contains("jobs")) jobs = j["jobs"].get<int>();
    if (j.contains("max_images")) {
      max_images = j["max_images"].is_null() ? std::nullopt : std::optional<int>(j["max_images"].get<int>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  validate();
}

void RunConfig::validate() const {
  if (alpha < 1.0) throw ConfigError("alpha must be >= 1");
  if (beta < 0) throw ConfigError("beta must be >= 0");
  if (tau <= 0.0) throw ConfigError("tau must be positive");
  if (threshold < 0.0 || threshold > 1.0) throw ConfigError("threshold must lie in [0, 1]");
  if (gate < -1.0 || gate > 1.0) throw ConfigError("gate must lie in [-1, 1]");
  if (logit_scale && *logit_scale <= 0.0) throw ConfigError("logit_scale must be positive");
  if (min_support < 1) throw ConfigError("min_support must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (max_images && *max_images < 1) throw ConfigError("max_images must be >= 1");
  if (!backend.is_object() || !backend.contains("type")) throw ConfigError("backend must be an object with a type");
}

nlohmann::json RunConfig::to_json() const {
  return {{"version", 1},
          {"backend", backend},
          {"base_dir", base_dir.string()},
          {"cache_dir", cache_dir.string()},
          {"alpha", alpha},
          {"beta", beta},
          {"tau", tau},
          {"threshold", threshold},
          {"gate", gate},
          {"logit_scale", logit_scale ? nlohmann::json(*logit_scale) : nlohmann::json(nullptr)},
          {"self_correction", self_correction ? "on" : "off"},
          {"self_correction_scale", "1/sqrt(full token dim)"},
          {"aggregation", to_string(aggregation)},
          {"softmax_scope", to_string(softmax_scope)},
          {"vg_scope", to_string(vg_scope)},
          {"min_support", min_support},
          {"anchor_only_when_unsupported", anchor_only_when_unsupported},
          {"background", to_string(background)},
          {"background_threshold", background_threshold},
          {"jobs", jobs},
          {"max_images", max_images ? nlohmann::json(*max_images) : nlohmann::json(nullptr)}};
}

RunConfig RunConfig::resolve(const std::optional<std::filesystem::path>& file, const nlohmann::json& overrides) {
  RunConfig cfg;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config '" + file->string() + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("'" + file->string() + "': " + e.what());
    }
    cfg.base_dir = file->parent_path().empty() ? "." : file->parent_path();
    cfg.apply(j);
    if (cfg.cache_dir.is_relative()) cfg.cache_dir = cfg.base_dir / cfg.cache_dir;
  }
  if (const char* env = std::getenv("VIP_CACHE_DIR"); env && *env) cfg.cache_dir = env;
  if (!overrides.is_null()) cfg.apply(overrides);
  return cfg;
}

double RunConfig::effective_logit_scale(const EncoderBackend& backend) const {
  if (logit_scale) return *logit_scale;
  return backend.logit_scale().value_or(100.0);
}

ScoringParams RunConfig::scoring_params(const EncoderBackend& backend) const {
  return {alpha, beta, threshold, effective_logit_scale(backend), vg_scope};
}

AggregationParams RunConfig::aggregation_params(const EncoderBackend& backend) const {
  return {effective_logit_scale(backend), tau, aggregation, softmax_scope};
}

FilterPolicy RunConfig::filter_policy() const { return {min_support, anchor_only_when_unsupported}; }

}  // namespace ovseg
