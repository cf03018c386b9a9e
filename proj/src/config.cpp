#include "fmridec/config.hpp"

#include <fstream>
#include <set>

namespace fmridec {

namespace {

using nlohmann::json;

/// Strict reader over one JSON object: every key must be consumed, and type
/// errors carry the full path.
class SectionReader {
public:
  SectionReader(const json& j, std::string path)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ValidationError(errc::configuration,
                            "config key " + path_ + " must be an object");
    }
  }

  template <typename T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    extract(j_.at(key), key, target);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ValidationError(errc::unknown_key,
                              "unknown config key: " + path_ + "." +
                                  item.key());
      }
    }
  }

private:
  template <typename T>
  void fail_type(const char* key, const char* expected) const {
    throw ValidationError(errc::configuration,
                          "config key " + path_ + "." + key + " must be " +
                              expected);
  }

  void extract(const json& v, const char* key, double& out) {
    if (!v.is_number()) fail_type<double>(key, "a number");
    out = v.get<double>();
  }
  void extract(const json& v, const char* key, int& out) {
    if (!v.is_number_integer()) fail_type<int>(key, "an integer");
    out = v.get<int>();
  }
  void extract(const json& v, const char* key, std::int64_t& out) {
    if (!v.is_number_integer()) fail_type<std::int64_t>(key, "an integer");
    out = v.get<std::int64_t>();
  }
  void extract(const json& v, const char* key, bool& out) {
    if (!v.is_boolean()) fail_type<bool>(key, "a boolean");
    out = v.get<bool>();
  }
  void extract(const json& v, const char* key, std::string& out) {
    if (!v.is_string()) fail_type<std::string>(key, "a string");
    out = v.get<std::string>();
  }
  void extract(const json& v, const char* key,
               std::vector<double>& out) {
    if (!v.is_array()) fail_type<std::vector<double>>(key, "an array");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number()) {
        fail_type<std::vector<double>>(key, "an array of numbers");
      }
      out.push_back(e.get<double>());
    }
  }
  void extract(const json& v, const char* key,
               std::vector<std::string>& out) {
    if (v.is_string()) {  // single path accepted as a one-element list
      out = {v.get<std::string>()};
      return;
    }
    if (!v.is_array()) {
      fail_type<std::vector<std::string>>(key, "a string or string array");
    }
    out.clear();
    for (const auto& e : v) {
      if (!e.is_string()) {
        fail_type<std::vector<std::string>>(key, "a string or string array");
      }
      out.push_back(e.get<std::string>());
    }
  }
  template <typename T>
  void extract(const json& v, const char* key, std::optional<T>& out) {
    T value{};
    extract(v, key, value);
    out = value;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_pair(SectionReader& r, const char* key, int& a, int& b) {
  std::vector<double> pair;
  r.read(key, pair);
  if (pair.empty()) return;
  if (pair.size() != 2) {
    throw ValidationError(errc::configuration,
                          std::string("config key ") + key +
                              " must hold exactly 2 entries");
  }
  a = static_cast<int>(pair[0]);
  b = static_cast<int>(pair[1]);
}

void read_pair(SectionReader& r, const char* key, double& a, double& b) {
  std::vector<double> pair;
  r.read(key, pair);
  if (pair.empty()) return;
  if (pair.size() != 2) {
    throw ValidationError(errc::configuration,
                          std::string("config key ") + key +
                              " must hold exactly 2 entries");
  }
  a = pair[0];
  b = pair[1];
}

}  // namespace

PipelineConfig parse_config(const json& j) {
  if (!j.is_object()) {
    throw ValidationError(errc::configuration,
                          "config document must be a JSON object");
  }
  PipelineConfig cfg;
  const std::set<std::string> sections = {"synth",   "preprocess", "codebook",
                                          "decoder", "metrics",    "encoding"};
  for (const auto& item : j.items()) {
    if (!sections.count(item.key())) {
      throw ValidationError(errc::unknown_key,
                            "unknown config key: " + item.key());
    }
  }

  if (j.contains("synth")) {
    SectionReader r(j.at("synth"), "synth");
    r.read("n_samples", cfg.synth.n_samples);
    read_pair(r, "grid", cfg.synth.grid_h, cfg.synth.grid_w);
    r.read("n_classes", cfg.synth.n_classes);
    r.read("n_voxels_per_stream", cfg.synth.n_voxels_per_stream);
    r.read("noise_sigma", cfg.synth.noise_sigma);
    r.read("d_img", cfg.synth.d_img);
    r.read("d_fmri", cfg.synth.d_fmri);
    read_pair(r, "speed", cfg.synth.speed_min, cfg.synth.speed_max);
    read_pair(r, "blob_sigma_frac", cfg.synth.blob_sigma_min_frac,
              cfg.synth.blob_sigma_max_frac);
    r.finish();
  }

  if (j.contains("preprocess")) {
    auto& p = cfg.preprocess;
    SectionReader r(j.at("preprocess"), "preprocess");
    r.read("tr_seconds", p.tr_seconds);
    r.read("shift_seconds", p.shift_seconds);
    r.read("t_video_seconds", p.t_video_seconds);
    r.read("alpha", p.alpha);
    r.read("stride_seconds", p.stride_seconds);
    r.read("scene_threshold", p.scene_threshold);
    r.read("fmri_runs", p.fmri_runs);
    r.read("video_frames", p.video_frames);
    r.read("video_n_frames", p.video_n_frames);
    r.read("video_fps", p.video_fps);
    r.read("video_height", p.video_height);
    r.read("video_width", p.video_width);
    r.read("stimulus_id", p.stimulus_id);
    r.finish();
  }

  if (j.contains("codebook")) {
    auto& c = cfg.codebook;
    SectionReader r(j.at("codebook"), "codebook");
    r.read("n_vec", c.n_vec);
    r.read("max_iters", c.max_iters);
    r.read("tol", c.tol);
    r.read("flows", c.flows);
    r.read("dataset", c.dataset);
    r.finish();
  }

  if (j.contains("decoder")) {
    auto& d = cfg.decoder;
    SectionReader r(j.at("decoder"), "decoder");
    r.read("d_h", d.d_h);
    r.read("lambda2", d.lambda2);
    r.read("learning_rate", d.learning_rate);
    r.read("epochs", d.epochs);
    r.read("batch_size", d.batch_size);
    r.read("train_fraction", d.train_fraction);
    r.read("dataset", d.dataset);
    r.read("codebook", d.codebook);
    r.finish();
  }

  if (j.contains("metrics")) {
    auto& m = cfg.metrics;
    SectionReader r(j.at("metrics"), "metrics");
    r.read("subject", m.subject);
    r.read("nway_n", m.nway_n);
    r.read("nway_k", m.nway_k);
    r.read("nway_trials", m.nway_trials);
    r.read("ssim_range", m.ssim_range);
    r.read("coverage_thresholds", m.coverage_thresholds);
    r.read("pooled", m.pooled);
    r.read("scores", m.scores);
    r.read("labels", m.labels);
    r.read("gt_masks", m.gt_masks);
    r.read("pred_masks", m.pred_masks);
    r.read("gt_images", m.gt_images);
    r.read("pred_images", m.pred_images);
    r.read("dataset", m.dataset);
    r.read("decoder", m.decoder);
    r.read("codebook", m.codebook);
    r.finish();
  }

  if (j.contains("encoding")) {
    auto& e = cfg.encoding;
    SectionReader r(j.at("encoding"), "encoding");
    r.read("pca_components", e.params.pca_components);
    r.read("t_window", e.params.t_window);
    r.read("smooth_sigma", e.params.smooth_sigma);
    r.read("lambda_grid", e.params.lambda_grid);
    r.read("train_fraction", e.params.train_fraction);
    r.read("keep_negative_correlation",
           e.params.keep_negative_correlation);
    r.read("fmri", e.fmri);
    r.read("e_sem", e.e_sem);
    r.read("e_spa", e.e_spa);
    r.read("tr_seconds", e.tr_seconds);
    r.finish();
  }

  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (path.empty()) return PipelineConfig{};
  std::ifstream in(path);
  if (!in) {
    throw ValidationError(errc::io,
                          "cannot open config file " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(errc::configuration,
                          path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(j);
}

namespace {

void echo_optional(nlohmann::ordered_json& section, const char* key,
                   const std::optional<std::string>& value) {
  if (value) section[key] = *value;
}

}  // namespace

nlohmann::ordered_json config_to_json(const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  j["synth"] = {
      {"n_samples", cfg.synth.n_samples},
      {"grid", {cfg.synth.grid_h, cfg.synth.grid_w}},
      {"n_classes", cfg.synth.n_classes},
      {"n_voxels_per_stream", cfg.synth.n_voxels_per_stream},
      {"noise_sigma", cfg.synth.noise_sigma},
      {"d_img", cfg.synth.d_img},
      {"d_fmri", cfg.synth.d_fmri},
      {"speed", {cfg.synth.speed_min, cfg.synth.speed_max}},
      {"blob_sigma_frac",
       {cfg.synth.blob_sigma_min_frac, cfg.synth.blob_sigma_max_frac}},
  };
  const auto& p = cfg.preprocess;
  j["preprocess"] = {
      {"tr_seconds", p.tr_seconds},
      {"shift_seconds", p.shift_seconds},
      {"t_video_seconds", p.t_video_seconds},
      {"alpha", p.alpha},
      {"stride_seconds", p.stride()},
      {"scene_threshold", p.scene_threshold},
      {"video_fps", p.video_fps},
      {"video_height", p.video_height},
      {"video_width", p.video_width},
      {"stimulus_id", p.stimulus_id},
  };
  if (!p.fmri_runs.empty()) j["preprocess"]["fmri_runs"] = p.fmri_runs;
  echo_optional(j["preprocess"], "video_frames", p.video_frames);
  if (p.video_n_frames) {
    j["preprocess"]["video_n_frames"] = *p.video_n_frames;
  }
  j["codebook"] = {
      {"n_vec", cfg.codebook.n_vec},
      {"max_iters", cfg.codebook.max_iters},
      {"tol", cfg.codebook.tol},
  };
  echo_optional(j["codebook"], "flows", cfg.codebook.flows);
  echo_optional(j["codebook"], "dataset", cfg.codebook.dataset);
  const auto& d = cfg.decoder;
  j["decoder"] = {
      {"d_h", d.d_h},           {"lambda2", d.lambda2},
      {"learning_rate", d.learning_rate}, {"epochs", d.epochs},
      {"batch_size", d.batch_size},       {"train_fraction", d.train_fraction},
  };
  echo_optional(j["decoder"], "dataset", d.dataset);
  echo_optional(j["decoder"], "codebook", d.codebook);
  const auto& m = cfg.metrics;
  j["metrics"] = {
      {"subject", m.subject},
      {"nway_n", m.nway_n},
      {"nway_k", m.nway_k},
      {"nway_trials", m.nway_trials},
      {"ssim_range", m.ssim_range},
      {"coverage_thresholds", m.coverage_thresholds},
      {"pooled", m.pooled},
  };
  echo_optional(j["metrics"], "scores", m.scores);
  echo_optional(j["metrics"], "labels", m.labels);
  echo_optional(j["metrics"], "gt_masks", m.gt_masks);
  echo_optional(j["metrics"], "pred_masks", m.pred_masks);
  echo_optional(j["metrics"], "gt_images", m.gt_images);
  echo_optional(j["metrics"], "pred_images", m.pred_images);
  echo_optional(j["metrics"], "dataset", m.dataset);
  echo_optional(j["metrics"], "decoder", m.decoder);
  echo_optional(j["metrics"], "codebook", m.codebook);
  const auto& e = cfg.encoding;
  j["encoding"] = {
      {"pca_components", e.params.pca_components},
      {"t_window", e.params.t_window},
      {"smooth_sigma", e.params.smooth_sigma},
      {"lambda_grid", e.params.lambda_grid},
      {"train_fraction", e.params.train_fraction},
      {"keep_negative_correlation", e.params.keep_negative_correlation},
      {"tr_seconds", e.tr_seconds},
  };
  echo_optional(j["encoding"], "fmri", e.fmri);
  echo_optional(j["encoding"], "e_sem", e.e_sem);
  echo_optional(j["encoding"], "e_spa", e.e_spa);
  return j;
}

}  // namespace fmridec
