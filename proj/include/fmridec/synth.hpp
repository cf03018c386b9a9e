#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fmridec/decoder.hpp"
#include "fmridec/flow.hpp"
#include "fmridec/preprocess.hpp"

namespace fmridec {

/// Synthetic world with planted structure: every sample is a Gaussian blob
/// with a class identity, a position and a motion vector. Ventral voxels read
/// out the class one-hot, dorsal voxels read out (position, motion), both
/// linearly plus Gaussian noise, so downstream estimators have provable
/// optima.
struct SyntheticConfig {
  int n_samples = 500;
  int grid_h = 16;
  int grid_w = 16;
  int n_classes = 5;
  int n_voxels_per_stream = 200;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  int d_img = 8;
  int d_fmri = 8;
  double speed_min = 1.5;
  double speed_max = 3.5;
  double blob_sigma_min_frac = 0.125;  // x min(grid_h, grid_w)
  double blob_sigma_max_frac = 1.0 / 3.0;
};

void validate_synth_config(const SyntheticConfig& config);

enum class Stream : std::int32_t { ventral = 0, dorsal = 1 };

struct SyntheticSample {
  int semantic_class = 0;
  double cx = 0.0, cy = 0.0;  // blob center, grid units (x = column)
  double u = 0.0, v = 0.0;    // motion vector
  double blob_sigma = 0.0;
  FeatureGrid image_feat;
  FeatureGrid fmri_feat;
  Eigen::VectorXd voxels;  // ventral block then dorsal block
  FlowField gt_flow;       // motion vector on the blob support, zero outside
  BoolGrid fg_mask;        // blob support: within 2*blob_sigma of the center
};

struct SyntheticDataset {
  SyntheticConfig config;
  std::vector<SyntheticSample> samples;
  std::vector<Stream> stream_assignment;  // per voxel
  Eigen::MatrixXd ventral_readout;   // n_voxels_per_stream x n_classes
  Eigen::MatrixXd dorsal_readout;    // n_voxels_per_stream x 4
  Eigen::MatrixXd class_signatures;  // n_classes x (d_img - 1)
  // One fixed projection of the voxel vector, broadcast to every grid cell,
  // so the decoder's shared per-cell weights see a consistent encoding.
  Eigen::MatrixXd feature_mixing;    // d_fmri x n_voxels

  Eigen::Index n_voxels() const {
    return static_cast<Eigen::Index>(stream_assignment.size());
  }
};

SyntheticDataset generate(const SyntheticConfig& config);

struct Embeddings {
  Eigen::MatrixXd e_sem;  // one-hot class rows plus tiny seeded jitter
  Eigen::MatrixXd e_spa;  // (cx/W, cy/H, u, v) rows padded to the same width
};

Embeddings export_embeddings(const SyntheticDataset& dataset);

/// Frame layout of the voxel vector for the encoding pipeline: the ventral
/// block, a 4-row zero gap (so Gaussian smoothing cannot mix the streams),
/// then the dorsal block. Padding pixels are zero everywhere.
struct EncodingLayout {
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  std::vector<Eigen::Index> voxel_pixel;  // voxel index -> flat pixel index
};

EncodingLayout encoding_layout(const SyntheticDataset& dataset);

/// Voxel responses arranged as an fMRI series (one frame per sample) using
/// encoding_layout.
FmriSeries encoding_series(const SyntheticDataset& dataset);

/// All ground-truth flow fields, in sample order.
std::vector<FlowField> dataset_flows(const SyntheticDataset& dataset);

/// Decoder training pairs; labels come from quantizing the ground-truth flow
/// against the given codebook.
std::vector<TrainingSample> training_samples(const SyntheticDataset& dataset,
                                             const Codebook& codebook);

/// Copy with the fMRI feature branch zeroed (the image-only ablation).
std::vector<TrainingSample> ablate_fmri(std::vector<TrainingSample> samples);

void save_dataset(const std::filesystem::path& dir,
                  const SyntheticDataset& dataset);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

}  // namespace fmridec
