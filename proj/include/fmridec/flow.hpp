#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "fmridec/errors.hpp"

namespace fmridec {

using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Vectors2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Dense per-pixel motion field, one 2-vector (u = horizontal, v = vertical)
/// per cell, in pixels per flow interval. The optional mask marks cells whose
/// vectors are meaningful.
struct FlowField {
  Eigen::ArrayXXd u;  // H x W
  Eigen::ArrayXXd v;  // H x W
  std::optional<BoolGrid> valid_mask;

  Eigen::Index height() const { return u.rows(); }
  Eigen::Index width() const { return u.cols(); }
};

FlowField make_flow(Eigen::Index height, Eigen::Index width);
void validate_flow(const FlowField& flow);

/// All flow vectors of a field flattened to an N x 2 matrix (row-major cell
/// order).
Vectors2 flatten_flow(const FlowField& flow);

/// Quantization centroids, sorted by ascending Euclidean norm. `zero_index`
/// names the zero cluster; after `zero_snap` that centroid is exactly (0,0).
struct Codebook {
  Vectors2 centroids;  // n_vec x 2
  int zero_index = 0;
  std::uint64_t seed = 0;

  int n_vec() const { return static_cast<int>(centroids.rows()); }
};

void validate_codebook(const Codebook& codebook);

/// Per-iteration diagnostics of the Lloyd loop.
struct KMeansTrace {
  std::vector<double> inertia;  // one entry per completed iteration
  int iterations = 0;
  bool converged = false;
};

/// k-means++ seeded Lloyd clustering over every 2-vector of the given flow
/// fields. Deterministic for a fixed seed. Inertia is checked to be
/// non-increasing on every iteration. Throws when the inputs hold fewer
/// distinct vectors than clusters.
Codebook fit_codebook(const std::vector<FlowField>& flows, int n_vec,
                      std::uint64_t seed, int max_iters = 100,
                      double tol = 1e-6, KMeansTrace* trace = nullptr);

/// Replaces the minimum-norm centroid by exactly (0,0) and records it as the
/// zero cluster. All other centroids are untouched.
Codebook zero_snap(Codebook codebook);

struct QuantizeResult {
  Eigen::ArrayXXi labels;  // H x W centroid indices
  FlowField quantized;
};

/// Nearest-centroid quantization (squared Euclidean distance, ties to the
/// lowest index).
QuantizeResult quantize(const FlowField& flow, const Codebook& codebook);

/// Splits a single-interval field into n_frames-1 equal sub-fields whose
/// vector sum reproduces the input.
std::vector<FlowField> extend_flow(const FlowField& flow, int n_frames);

/// Zeroes vectors outside the foreground and installs the foreground as the
/// field's validity mask.
FlowField mask_flow(const FlowField& flow, const BoolGrid& foreground);

/// Resamples a field to a new grid by area-weighted averaging of overlapping
/// source cells (each output cell covers an equal rectangle of the input).
FlowField resample_flow(const FlowField& flow, Eigen::Index out_height,
                        Eigen::Index out_width);

nlohmann::ordered_json codebook_to_json(const Codebook& codebook);
Codebook codebook_from_json(const nlohmann::json& j);
void save_codebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace fmridec
