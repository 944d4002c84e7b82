#include "lidarsplat/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "lidarsplat/io.hpp"

namespace lidarsplat {
namespace {

using nlohmann::json;

// Reads the keys of one object, rejecting any it does not know.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw IoError(path_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw IoError("unknown config key: " + path_ + "." + key);
    }
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw IoError("config key " + path_ + "." + key + " has the wrong type");
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json field_json(const FieldConfig& c) {
  return {{"token_dim", c.token_dim},       {"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers}, {"max_scale", c.max_scale},
          {"max_offset", c.max_offset},     {"distance_norm", c.distance_norm},
          {"min_distance", c.min_distance}, {"init_scale", c.init_scale},
          {"init_opacity", c.init_opacity}};
}

json render_json(const RenderConfig& c) {
  return {{"tile_size", c.tile_size},
          {"alpha_skip", c.alpha_skip},
          {"transmittance_stop", c.transmittance_stop},
          {"median_transmittance", c.median_transmittance},
          {"min_determinant", c.min_determinant},
          {"min_distance", c.min_distance}};
}

json train_json(const TrainConfig& c) {
  return {{"lambda_intensity", c.lambda_intensity},
          {"ssim_window", c.ssim.window},
          {"ssim_sigma", c.ssim.sigma},
          {"lr",
           {{"geometry", c.lr.geometry},
            {"intensity", c.lr.intensity},
            {"raydrop", c.lr.raydrop},
            {"opacity", c.lr.opacity},
            {"tokens", c.lr.tokens}}},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"densify", c.densify},
          {"densify_from", c.densify_from},
          {"densify_until", c.densify_until},
          {"densify_interval", c.densify_interval},
          {"split_threshold", c.split_threshold},
          {"prune_opacity", c.prune_opacity},
          {"max_anchor_factor", c.max_anchor_factor},
          {"anchor_count", c.anchor_count},
          {"single_pass_iters", c.single_pass_iters},
          {"expand_iters", c.expand_iters}};
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (field.token_dim < 1 || field.hidden_width < 1 || field.hidden_layers < 1) {
    throw std::invalid_argument("field network sizes must be >= 1");
  }
  if (!(field.max_scale > 0.0) || !(field.distance_norm > 0.0)) {
    throw std::invalid_argument("field scales must be > 0");
  }
  if (!(field.init_scale > 0.0 && field.init_scale < field.max_scale)) {
    throw std::invalid_argument("init_scale must lie in (0, max_scale)");
  }
  if (!(field.init_opacity > 0.0 && field.init_opacity < 1.0)) {
    throw std::invalid_argument("init_opacity must lie in (0, 1)");
  }
  if (render.tile_size < 1) throw std::invalid_argument("tile_size must be >= 1");
  if (!(render.alpha_skip > 0.0 && render.alpha_skip < 1.0)) {
    throw std::invalid_argument("alpha_skip must lie in (0, 1)");
  }
  if (expansion.sigma < 0.0 || expansion.tau < 0.0 || expansion.tau >= 1.0) {
    throw std::invalid_argument("expansion sigma must be >= 0 and tau in [0, 1)");
  }
  if (!(metrics.fscore_threshold > 0.0)) throw std::invalid_argument("F-score threshold must be > 0");
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  {
    Section root(j, "config");
    int version = 0;
    root.get("version", version);
    if (version != RunConfig::kVersion) {
      throw IoError("config version must be " + std::to_string(RunConfig::kVersion));
    }
    root.get("seed", cfg.seed);
    if (const json* f = root.child("field")) {
      Section s(*f, "field");
      auto& c = cfg.field;
      s.get("token_dim", c.token_dim);
      s.get("hidden_width", c.hidden_width);
      s.get("hidden_layers", c.hidden_layers);
      s.get("max_scale", c.max_scale);
      s.get("max_offset", c.max_offset);
      s.get("distance_norm", c.distance_norm);
      s.get("min_distance", c.min_distance);
      s.get("init_scale", c.init_scale);
      s.get("init_opacity", c.init_opacity);
    }
    if (const json* r = root.child("render")) {
      Section s(*r, "render");
      auto& c = cfg.render;
      s.get("tile_size", c.tile_size);
      s.get("alpha_skip", c.alpha_skip);
      s.get("transmittance_stop", c.transmittance_stop);
      s.get("median_transmittance", c.median_transmittance);
      s.get("min_determinant", c.min_determinant);
      s.get("min_distance", c.min_distance);
    }
    if (const json* t = root.child("train")) {
      Section s(*t, "train");
      auto& c = cfg.train;
      s.get("lambda_intensity", c.lambda_intensity);
      s.get("ssim_window", c.ssim.window);
      s.get("ssim_sigma", c.ssim.sigma);
      if (const json* lr = s.child("lr")) {
        Section l(*lr, "train.lr");
        l.get("geometry", c.lr.geometry);
        l.get("intensity", c.lr.intensity);
        l.get("raydrop", c.lr.raydrop);
        l.get("opacity", c.lr.opacity);
        l.get("tokens", c.lr.tokens);
      }
      s.get("beta1", c.beta1);
      s.get("beta2", c.beta2);
      s.get("epsilon", c.epsilon);
      s.get("densify", c.densify);
      s.get("densify_from", c.densify_from);
      s.get("densify_until", c.densify_until);
      s.get("densify_interval", c.densify_interval);
      s.get("split_threshold", c.split_threshold);
      s.get("prune_opacity", c.prune_opacity);
      s.get("max_anchor_factor", c.max_anchor_factor);
      s.get("anchor_count", c.anchor_count);
      s.get("single_pass_iters", c.single_pass_iters);
      s.get("expand_iters", c.expand_iters);
    }
    if (const json* e = root.child("expansion")) {
      Section s(*e, "expansion");
      s.get("sigma", cfg.expansion.sigma);
      s.get("tau", cfg.expansion.tau);
      s.get("offsets", cfg.expansion.offsets);
      s.get("ddad", cfg.expansion.ddad);
    }
    if (const json* m = root.child("metrics")) {
      Section s(*m, "metrics");
      auto& c = cfg.metrics;
      s.get("fscore_threshold", c.fscore_threshold);
      s.get("raydrop_threshold", c.raydrop_threshold);
      s.get("bev_bins", c.bev.bins);
      s.get("bev_extent", c.bev.extent);
      s.get("mmd_bandwidth", c.bev.bandwidth);
      s.get("ssim_window", c.ssim.window);
      s.get("ssim_sigma", c.ssim.sigma);
    }
  }
  cfg.train.render = cfg.render;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  json j;
  j["version"] = RunConfig::kVersion;
  j["seed"] = cfg.seed;
  j["field"] = field_json(cfg.field);
  j["render"] = render_json(cfg.render);
  j["train"] = train_json(cfg.train);
  j["expansion"] = {{"sigma", cfg.expansion.sigma},
                    {"tau", cfg.expansion.tau},
                    {"offsets", cfg.expansion.offsets},
                    {"ddad", cfg.expansion.ddad}};
  j["metrics"] = {{"fscore_threshold", cfg.metrics.fscore_threshold},
                  {"raydrop_threshold", cfg.metrics.raydrop_threshold},
                  {"bev_bins", cfg.metrics.bev.bins},
                  {"bev_extent", cfg.metrics.bev.extent},
                  {"mmd_bandwidth", cfg.metrics.bev.bandwidth},
                  {"ssim_window", cfg.metrics.ssim.window},
                  {"ssim_sigma", cfg.metrics.ssim.sigma}};
  return j.dump(2) + "\n";
}

}  // namespace lidarsplat
