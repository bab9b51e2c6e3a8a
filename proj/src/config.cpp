#include "osp3d/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "osp3d/error.hpp"
#include "osp3d/io.hpp"

namespace osp3d {

void SceneConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    require(ok, ErrorCode::kInvalidParameter, std::string("config: ") + what);
  };
  check(feature_dim >= 1, "feature_dim must be >= 1");
  check(sh_degree >= 0 && sh_degree <= kMaxShDegree, "sh_degree must be in [0,3]");
  check(beta >= 0.0 && beta <= 1.0, "beta must be in [0,1]");
  check(lambda_inst2d >= 0.0 && lambda_var >= 0.0, "lambda weights must be >= 0");
  check(w_pos >= 0.0 && w_neg >= 0.0, "w_pos and w_neg must be >= 0");
  check(gamma > 0.0, "gamma must be > 0");
  check(iterations >= 0, "iterations must be >= 0");
  check(lr_means >= 0 && lr_means_final >= 0 && lr_features >= 0 && lr_opacity >= 0 &&
            lr_scales >= 0 && lr_rotations >= 0 && lr_sh >= 0,
        "learning rates must be >= 0");
  check(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1,
        "adam betas must be in [0,1)");
  check(densify_interval >= 1, "densify_interval must be >= 1");
  check(split_scale_divisor > 1.0, "split_scale_divisor must be > 1");
  check(prune_opacity >= 0.0 && prune_opacity < 1.0, "prune_opacity must be in [0,1)");
  check(max_gaussians >= 1, "max_gaussians must be >= 1");
  check(alpha_max > 0.0 && alpha_max <= 1.0 && alpha_min >= 0.0 && alpha_min < alpha_max,
        "alpha bounds invalid");
  check(min_cluster_size == 0 || min_cluster_size >= 2, "min_cluster_size must be 0 or >= 2");
  check(min_samples >= 1, "min_samples must be >= 1");
  check(top_k >= 1, "top_k must be >= 1");
  check(zoom_levels >= 1, "zoom_levels must be >= 1");
  check(expansion_ratio >= 0.0, "expansion_ratio must be >= 0");
  check(silhouette_threshold > 0.0 && silhouette_threshold < 1.0,
        "silhouette_threshold must be in (0,1)");
  check(ioa_threshold >= 0.0 && ioa_threshold <= 1.0, "ioa_threshold must be in [0,1]");
  check(smooth_k >= 1, "smooth_k must be >= 1");
  check(smooth_merge_threshold >= 0.0, "smooth_merge_threshold must be >= 0");
}

RenderSettings SceneConfig::render_settings() const {
  RenderSettings rs;
  rs.precision = f64 ? Precision::kF64 : Precision::kF32;
  rs.alpha_min = alpha_min;
  rs.alpha_max = alpha_max;
  rs.transmittance_min = transmittance_min;
  rs.variance_full_gradient = variance_full_gradient;
  return rs;
}

namespace {

template <class F>
void for_each_field(SceneConfig& c, F&& f) {
  f("scene", "feature_dim", c.feature_dim);
  f("scene", "sh_degree", c.sh_degree);
  f("losses", "beta", c.beta);
  f("losses", "lambda_inst2d", c.lambda_inst2d);
  f("losses", "lambda_var", c.lambda_var);
  f("losses", "w_pos", c.w_pos);
  f("losses", "w_neg", c.w_neg);
  f("losses", "gamma", c.gamma);
  f("losses", "variance_full_gradient", c.variance_full_gradient);
  f("trainer", "iterations", c.iterations);
  f("trainer", "lr_means", c.lr_means);
  f("trainer", "lr_means_final", c.lr_means_final);
  f("trainer", "lr_features", c.lr_features);
  f("trainer", "lr_opacity", c.lr_opacity);
  f("trainer", "lr_scales", c.lr_scales);
  f("trainer", "lr_rotations", c.lr_rotations);
  f("trainer", "lr_sh", c.lr_sh);
  f("trainer", "adam_beta1", c.adam_beta1);
  f("trainer", "adam_beta2", c.adam_beta2);
  f("trainer", "adam_eps", c.adam_eps);
  f("trainer", "densify_grad_threshold", c.densify_grad_threshold);
  f("trainer", "densify_from", c.densify_from);
  f("trainer", "densify_until", c.densify_until);
  f("trainer", "densify_interval", c.densify_interval);
  f("trainer", "prune_opacity", c.prune_opacity);
  f("trainer", "percent_dense", c.percent_dense);
  f("trainer", "split_scale_divisor", c.split_scale_divisor);
  f("trainer", "max_gaussians", c.max_gaussians);
  f("trainer", "feature_init_range", c.feature_init_range);
  f("trainer", "checkpoint_interval", c.checkpoint_interval);
  f("trainer", "seed", c.seed);
  f("trainer", "f64", c.f64);
  f("rasterizer", "alpha_min", c.alpha_min);
  f("rasterizer", "alpha_max", c.alpha_max);
  f("rasterizer", "transmittance_min", c.transmittance_min);
  f("clustering", "min_cluster_size", c.min_cluster_size);
  f("clustering", "min_samples", c.min_samples);
  f("clustering", "allow_single_cluster", c.allow_single_cluster);
  f("language", "top_k", c.top_k);
  f("language", "zoom_levels", c.zoom_levels);
  f("language", "expansion_ratio", c.expansion_ratio);
  f("language", "silhouette_threshold", c.silhouette_threshold);
  f("language", "query_threshold", c.query_threshold);
  f("eval", "macc_tau", c.macc_tau);
  f("eval", "ioa_threshold", c.ioa_threshold);
  f("eval", "smooth_k", c.smooth_k);
  f("eval", "smooth_merge_threshold", c.smooth_merge_threshold);
  f("eval", "biou_radius_fraction", c.biou_radius_fraction);
  f("masks", "mask_iou_weight", c.mask_iou_weight);
  f("masks", "mask_stability_weight", c.mask_stability_weight);
}

bool parse_value(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") out = true;
  else if (s == "false" || s == "0" || s == "no" || s == "off") out = false;
  else return false;
  return true;
}

template <class T>
bool parse_value(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}
template <class T>
std::string format_value(T v) {
  return std::to_string(v);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

void set_config_value(SceneConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value) {
  bool found = false;
  for_each_field(cfg, [&](const char* sec, const char* name, auto& field) {
    if (found || section != sec || key != name) return;
    found = true;
    std::remove_reference_t<decltype(field)> parsed{};
    require(parse_value(trim(value), parsed), ErrorCode::kUsage,
            "config: bad value '" + value + "' for " + section + "." + key);
    field = parsed;
  });
  require(found, ErrorCode::kUsage, "config: unknown key " + section + "." + key);
}

void apply_config_text(SceneConfig& cfg, const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::kUsage, std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    require(!body.empty() || body.data().empty(), ErrorCode::kUsage,
            "config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) set_config_value(cfg, section, key, value.data());
  }
}

SceneConfig load_config(const std::filesystem::path& path) {
  SceneConfig cfg;
  apply_config_text(cfg, read_text_file(path));
  return cfg;
}

std::vector<std::string> apply_env_overrides(SceneConfig& cfg) {
  std::vector<std::string> applied;
  std::vector<std::pair<std::string, std::string>> keys;
  for_each_field(cfg, [&](const char* sec, const char* name, auto&) { keys.emplace_back(sec, name); });
  for (const auto& [sec, name] : keys) {
    const std::string var = "OSP3D_" + upper(sec) + "_" + upper(name);
    if (const char* v = std::getenv(var.c_str())) {
      set_config_value(cfg, sec, name, v);
      applied.push_back(var);
    }
  }
  return applied;
}

std::string config_to_ini(const SceneConfig& config) {
  SceneConfig c = config;
  std::string out, current;
  for_each_field(c, [&](const char* sec, const char* name, auto& field) {
    if (current != sec) {
      if (!current.empty()) out += "\n";
      out += "[" + std::string(sec) + "]\n";
      current = sec;
    }
    out += std::string(name) + " = " + format_value(field) + "\n";
  });
  return out;
}

std::string config_hash(const SceneConfig& config) { return content_hash(config_to_ini(config)); }

}  // namespace osp3d
