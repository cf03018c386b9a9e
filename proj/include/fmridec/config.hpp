#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmridec/encoding.hpp"
#include "fmridec/synth.hpp"

namespace fmridec {

/// Per-module configuration. Every default mirrors the documented module
/// default; keys absent from the JSON take these values. Unknown keys are
/// rejected with their full path, and subcommands that need an input path
/// report the missing key's path.

struct PreprocessSection {
  double tr_seconds = 2.0;
  double shift_seconds = 6.0;
  double t_video_seconds = 2.0;
  double alpha = 1.0;
  std::optional<double> stride_seconds;  // default: non-overlapping (= T)
  double scene_threshold = 0.3;
  std::vector<std::string> fmri_runs;    // required by `preprocess`
  std::optional<std::string> video_frames;
  std::optional<std::int64_t> video_n_frames;
  double video_fps = 8.0;
  std::int64_t video_height = 64;
  std::int64_t video_width = 64;
  std::string stimulus_id = "stimulus";

  double stride() const {
    return stride_seconds ? *stride_seconds : t_video_seconds;
  }
};

struct CodebookSection {
  int n_vec = 40;
  int max_iters = 100;
  double tol = 1e-6;
  std::optional<std::string> flows;    // (n, H, W, 2) tensor
  std::optional<std::string> dataset;  // synthetic dataset directory
};

struct DecoderSection {
  int d_h = 16;
  double lambda2 = 1.0;
  double learning_rate = 1e-2;
  int epochs = 50;
  int batch_size = 32;
  double train_fraction = 0.8;
  std::optional<std::string> dataset;
  std::optional<std::string> codebook;
};

struct MetricsSection {
  std::string subject = "synthetic";
  int nway_n = 50;
  int nway_k = 1;
  int nway_trials = 100;
  double ssim_range = 1.0;
  std::vector<double> coverage_thresholds = {0.2, 0.3, 0.4, 0.5, 0.6};
  bool pooled = false;
  std::optional<std::string> scores;      // (n, n_classes) tensor
  std::optional<std::string> labels;      // (n,) int tensor
  std::optional<std::string> gt_masks;    // (n, H, W) u8 tensor
  std::optional<std::string> pred_masks;
  std::optional<std::string> gt_images;   // (n, H, W) tensor in [0, 1]
  std::optional<std::string> pred_images;
  std::optional<std::string> dataset;
  std::optional<std::string> decoder;
  std::optional<std::string> codebook;
};

struct EncodingSection {
  EncodingConfig params;
  std::optional<std::string> fmri;   // (T, H, W) tensor
  std::optional<std::string> e_sem;  // (T, D_e) tensor
  std::optional<std::string> e_spa;
  double tr_seconds = 2.0;
};

struct PipelineConfig {
  SyntheticConfig synth;  // seed comes from the CLI, not the file
  PreprocessSection preprocess;
  CodebookSection codebook;
  DecoderSection decoder;
  MetricsSection metrics;
  EncodingSection encoding;
};

/// Parses and validates a config document. Unknown keys anywhere raise a
/// ValidationError naming the offending JSON path.
PipelineConfig parse_config(const nlohmann::json& j);

/// Loads a config file; an empty path yields the all-defaults config.
PipelineConfig load_config(const std::filesystem::path& path);

/// JSON echo of a parsed config (used in run manifests).
nlohmann::ordered_json config_to_json(const PipelineConfig& config);

}  // namespace fmridec
