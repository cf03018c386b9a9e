#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fmridec/errors.hpp"
#include "fmridec/flow.hpp"

namespace fmridec {

/// Per-cell feature map on the flow grid: one D-dimensional feature row per
/// cell, cells in row-major order (row h*W + w).
struct FeatureGrid {
  enum class Source { image, fmri, synthetic };

  Eigen::MatrixXd values;  // (H*W) x D
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  Source source = Source::synthetic;

  Eigen::Index cells() const { return height * width; }
  Eigen::Index depth() const { return values.cols(); }
};

void validate_feature_grid(const FeatureGrid& grid);

/// Per-cell distribution over codebook entries.
struct ProbGrid {
  Eigen::MatrixXd probs;  // (H*W) x n_vec
  Eigen::Index height = 0;
  Eigen::Index width = 0;
};

struct DecoderHyper {
  int d_img = 0;
  int d_fmri = 0;
  int d_h = 0;
  int n_vec = 0;
  double lambda2 = 1.0;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

/// Classifier over the flow codebook: per cell, image and fMRI features pass
/// through separate linear+ReLU projections, the hidden activations are
/// concatenated, and a linear head plus softmax yields a distribution over
/// codebook entries.
struct MotionDecoder {
  Eigen::MatrixXd w_img;   // d_img x d_h
  Eigen::RowVectorXd b_img;
  Eigen::MatrixXd w_fmri;  // d_fmri x d_h
  Eigen::RowVectorXd b_fmri;
  Eigen::MatrixXd w_head;  // 2*d_h x n_vec
  Eigen::RowVectorXd b_head;
  DecoderHyper hyper;
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero, deterministic per seed.
MotionDecoder init_decoder(int d_img, int d_fmri, int d_h, int n_vec,
                           std::uint64_t seed);

ProbGrid forward(const MotionDecoder& decoder, const FeatureGrid& image_feat,
                 const FeatureGrid& fmri_feat);

/// Probability-weighted mean of the codebook per cell: O_hat = P * B.
FlowField expected_flow(const ProbGrid& probs, const Codebook& codebook);

struct LossTerms {
  double entropy = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

/// Cross-entropy against the quantization labels plus lambda2 times the mean
/// squared error between ground-truth flow and the expected-flow readout,
/// both averaged over cells. Log probabilities are clamped at 1e-12.
LossTerms loss(const ProbGrid& probs, const Eigen::ArrayXXi& labels,
               const FlowField& gt_flow, const Codebook& codebook,
               double lambda2);

struct TrainingSample {
  FeatureGrid image_feat;
  FeatureGrid fmri_feat;
  Eigen::ArrayXXi labels;
  FlowField gt_flow;
};

struct DecoderGradients {
  Eigen::MatrixXd w_img;
  Eigen::RowVectorXd b_img;
  Eigen::MatrixXd w_fmri;
  Eigen::RowVectorXd b_fmri;
  Eigen::MatrixXd w_head;
  Eigen::RowVectorXd b_head;
};

/// Analytic gradient of the mean batch loss with respect to every decoder
/// parameter. Summation runs in a fixed sample order for reproducibility.
DecoderGradients gradient(const MotionDecoder& decoder,
                          const std::vector<TrainingSample>& batch,
                          const Codebook& codebook);

DecoderGradients gradient(const MotionDecoder& decoder,
                          const std::vector<TrainingSample>& batch,
                          const Codebook& codebook, LossTerms& batch_loss);

struct EpochLoss {
  int epoch = 0;
  double entropy = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

struct TrainResult {
  MotionDecoder decoder;
  std::vector<EpochLoss> history;
};

/// Seeded mini-batch gradient descent. The history records the mean training
/// loss of each epoch. A non-finite loss aborts with a divergence error
/// naming the epoch.
TrainResult train(MotionDecoder decoder,
                  const std::vector<TrainingSample>& dataset,
                  const Codebook& codebook, int epochs, int batch_size,
                  double learning_rate, std::uint64_t seed);

/// Checkpoint layout: one tensor container per parameter block plus a
/// manifest.json of hyperparameters.
void save_decoder(const std::filesystem::path& dir,
                  const MotionDecoder& decoder);
MotionDecoder load_decoder(const std::filesystem::path& dir);

}  // namespace fmridec
