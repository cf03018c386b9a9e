#pragma once

#include <Eigen/Dense>
#include <vector>

#include "fmridec/errors.hpp"
#include "fmridec/preprocess.hpp"

namespace fmridec {

struct PcaFit {
  Eigen::MatrixXd components;         // D x D_e, orthonormal rows
  Eigen::VectorXd mean;               // D_e
  Eigen::VectorXd explained_variance; // D, descending
};

/// Top-D principal components of the sample covariance (divisor T-1),
/// eigenvalues descending. Sign convention: the largest-magnitude entry of
/// every component is positive.
PcaFit pca_fit(const Eigen::MatrixXd& x, int n_components);

/// Projects rows onto the fitted components: (X - mean) * components^T.
Eigen::MatrixXd pca_transform(const Eigen::MatrixXd& x, const PcaFit& fit);

/// Per-frame 2-D Gaussian blur, kernel radius ceil(3*sigma), truncated
/// kernel renormalized at the image border. sigma = 0 is the identity.
FmriSeries gaussian_smooth(const FmriSeries& series, double sigma_pixels);
Image gaussian_smooth_image(const Image& img, double sigma_pixels);

/// Ridge regression with an unpenalized intercept: slopes solve
/// (Xc' Xc + lambda I) W = Xc' Yc on column-centered data. Returns a
/// (D+1) x N_v matrix whose last row is the intercept.
Eigen::MatrixXd ridge_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                          double lambda);
Eigen::MatrixXd ridge_predict(const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& weights);

struct WindowedCorrelation {
  Eigen::VectorXd r;  // per-voxel mean correlation over windows
  Eigen::Index zero_variance_windows = 0;
};

/// Pearson correlation per voxel inside consecutive non-overlapping windows
/// of length t_window (the tail shorter than one window is dropped),
/// averaged over windows. Windows where either side has zero variance
/// contribute 0 and are counted.
WindowedCorrelation windowed_correlation(const Eigen::MatrixXd& gt,
                                         const Eigen::MatrixXd& pred,
                                         int t_window);

/// p_spa per voxel: r_spa^2/(r_spa^2 + r_sem^2) - 0.5, in [-0.5, 0.5].
/// Voxels where both correlations are 0 get a NaN sentinel and are excluded
/// from rendered maps.
Eigen::VectorXd differential_map(const Eigen::VectorXd& r_sem,
                                 const Eigen::VectorXd& r_spa);

struct EncodingConfig {
  int pca_components = 128;
  int t_window = 30;
  double smooth_sigma = 1.0;
  std::vector<double> lambda_grid = {1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4};
  double train_fraction = 0.8;
  bool keep_negative_correlation = true;
};

struct EncodingReport {
  Eigen::VectorXd r_sem;
  Eigen::VectorXd r_spa;
  Eigen::VectorXd p_spa;
  double lambda_sem = 0.0;
  double lambda_spa = 0.0;
  int effective_components_sem = 0;
  int effective_components_spa = 0;
  Eigen::Index height = 0;  // frame layout of the voxel axis
  Eigen::Index width = 0;
  EncodingConfig config;
};

/// End-to-end differential encoding: smooth the series, fit PCA and ridge on
/// the leading train_fraction of time points (lambda chosen from the grid by
/// held-out correlation), correlate on the held-out tail, and derive the
/// differential map. The requested component count is clamped to what the
/// training split supports.
EncodingReport run_encoding(const FmriSeries& fmri,
                            const Eigen::MatrixXd& e_sem,
                            const Eigen::MatrixXd& e_spa,
                            const EncodingConfig& config);

}  // namespace fmridec
