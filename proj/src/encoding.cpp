#include "fmridec/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fmridec {

PcaFit pca_fit(const Eigen::MatrixXd& x, int n_components) {
  const Eigen::Index t_len = x.rows();
  const Eigen::Index d_e = x.cols();
  if (t_len < 2) {
    throw ValidationError(errc::insufficient_frames,
                          "pca_fit: need at least 2 observations");
  }
  if (n_components < 1 ||
      n_components > std::min<Eigen::Index>(t_len - 1, d_e)) {
    throw ValidationError(
        errc::configuration,
        "pca_fit: component count must lie in [1, min(T-1, D_e)]");
  }
  PcaFit fit;
  fit.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - fit.mean.transpose();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(t_len - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw NumericalError(errc::solver_failure,
                         "pca_fit: eigendecomposition failed");
  }
  // Eigen returns eigenvalues ascending; take the top n_components.
  fit.components.resize(n_components, d_e);
  fit.explained_variance.resize(n_components);
  for (int c = 0; c < n_components; ++c) {
    const Eigen::Index src = d_e - 1 - c;
    Eigen::VectorXd component = solver.eigenvectors().col(src);
    Eigen::Index max_idx = 0;
    component.cwiseAbs().maxCoeff(&max_idx);
    if (component(max_idx) < 0.0) component = -component;
    fit.components.row(c) = component.transpose();
    fit.explained_variance(c) = std::max(0.0, solver.eigenvalues()(src));
  }
  return fit;
}

Eigen::MatrixXd pca_transform(const Eigen::MatrixXd& x, const PcaFit& fit) {
  if (x.cols() != fit.mean.size()) {
    throw ValidationError(errc::alignment,
                          "pca_transform: feature dimension differs from fit");
  }
  return (x.rowwise() - fit.mean.transpose()) * fit.components.transpose();
}

Image gaussian_smooth_image(const Image& img, double sigma_pixels) {
  if (sigma_pixels == 0.0) return img;
  const auto radius =
      static_cast<Eigen::Index>(std::ceil(3.0 * sigma_pixels));
  Eigen::VectorXd kernel(2 * radius + 1);
  for (Eigen::Index i = -radius; i <= radius; ++i) {
    kernel(i + radius) = std::exp(-static_cast<double>(i * i) /
                                  (2.0 * sigma_pixels * sigma_pixels));
  }
  // Separable passes with per-position renormalization over the in-image
  // taps; for a separable kernel this equals 2-D truncated renormalization.
  const auto pass = [&](const Image& in, bool vertical) {
    Image out(in.rows(), in.cols());
    const Eigen::Index extent = vertical ? in.rows() : in.cols();
    for (Eigen::Index p = 0; p < extent; ++p) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, p - radius);
      const Eigen::Index hi = std::min<Eigen::Index>(extent - 1, p + radius);
      double norm = 0.0;
      for (Eigen::Index q = lo; q <= hi; ++q) norm += kernel(q - p + radius);
      if (vertical) {
        out.row(p).setZero();
        for (Eigen::Index q = lo; q <= hi; ++q) {
          out.row(p) += in.row(q) * (kernel(q - p + radius) / norm);
        }
      } else {
        out.col(p).setZero();
        for (Eigen::Index q = lo; q <= hi; ++q) {
          out.col(p) += in.col(q) * (kernel(q - p + radius) / norm);
        }
      }
    }
    return out;
  };
  return pass(pass(img, true), false);
}

FmriSeries gaussian_smooth(const FmriSeries& series, double sigma_pixels) {
  validate_series(series);
  if (sigma_pixels < 0.0) {
    throw ValidationError(errc::configuration,
                          "gaussian_smooth: sigma must be non-negative");
  }
  if (sigma_pixels == 0.0) return series;
  FmriSeries out = series;
  for (Eigen::Index t = 0; t < series.frames(); ++t) {
    out.set_frame(t, gaussian_smooth_image(series.frame(t), sigma_pixels));
  }
  return out;
}

Eigen::MatrixXd ridge_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                          double lambda) {
  const Eigen::Index t_len = x.rows();
  const Eigen::Index dim = x.cols();
  if (y.rows() != t_len) {
    throw ValidationError(errc::alignment,
                          "ridge_fit: X and Y row counts differ");
  }
  if (t_len <= dim) {
    throw ValidationError(errc::configuration,
                          "ridge_fit: need more observations than features");
  }
  if (lambda < 0.0) {
    throw ValidationError(errc::configuration,
                          "ridge_fit: lambda must be non-negative");
  }
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const Eigen::RowVectorXd y_mean = y.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::MatrixXd yc = y.rowwise() - y_mean;
  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += lambda;
  if (lambda == 0.0) {
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    if (!lu.isInvertible()) {
      throw NumericalError(
          errc::solver_failure,
          "ridge_fit: singular normal equations at lambda = 0 "
          "(rank-deficient design)");
    }
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success) {
    throw NumericalError(errc::solver_failure,
                         "ridge_fit: factorization failed");
  }
  const Eigen::MatrixXd slopes = ldlt.solve(xc.transpose() * yc);
  Eigen::MatrixXd weights(dim + 1, y.cols());
  weights.topRows(dim) = slopes;
  weights.row(dim) = y_mean - x_mean * slopes;
  return weights;
}

Eigen::MatrixXd ridge_predict(const Eigen::MatrixXd& x,
                              const Eigen::MatrixXd& weights) {
  if (x.cols() + 1 != weights.rows()) {
    throw ValidationError(errc::alignment,
                          "ridge_predict: weight rows must equal D+1");
  }
  return (x * weights.topRows(x.cols())).rowwise() + weights.bottomRows(1).row(0);
}

WindowedCorrelation windowed_correlation(const Eigen::MatrixXd& gt,
                                         const Eigen::MatrixXd& pred,
                                         int t_window) {
  if (gt.rows() != pred.rows() || gt.cols() != pred.cols()) {
    throw ValidationError(errc::alignment,
                          "windowed_correlation: shapes differ");
  }
  if (t_window < 3) {
    throw ValidationError(errc::configuration,
                          "windowed_correlation: window must span >= 3 points");
  }
  if (t_window > gt.rows()) {
    throw ValidationError(errc::configuration,
                          "windowed_correlation: window longer than the series");
  }
  const Eigen::Index n_windows = gt.rows() / t_window;
  const Eigen::Index n_voxels = gt.cols();
  WindowedCorrelation out;
  out.r = Eigen::VectorXd::Zero(n_voxels);
  for (Eigen::Index w = 0; w < n_windows; ++w) {
    const Eigen::Index start = w * t_window;
    for (Eigen::Index v = 0; v < n_voxels; ++v) {
      const Eigen::VectorXd a = gt.col(v).segment(start, t_window);
      const Eigen::VectorXd b = pred.col(v).segment(start, t_window);
      const Eigen::VectorXd ac = a.array() - a.mean();
      const Eigen::VectorXd bc = b.array() - b.mean();
      const double na = ac.norm();
      const double nb = bc.norm();
      if (na == 0.0 || nb == 0.0) {
        ++out.zero_variance_windows;
        continue;  // contributes 0
      }
      out.r(v) += ac.dot(bc) / (na * nb);
    }
  }
  out.r /= static_cast<double>(n_windows);
  return out;
}

Eigen::VectorXd differential_map(const Eigen::VectorXd& r_sem,
                                 const Eigen::VectorXd& r_spa) {
  if (r_sem.size() != r_spa.size()) {
    throw ValidationError(errc::alignment,
                          "differential_map: vector lengths differ");
  }
  Eigen::VectorXd p(r_sem.size());
  for (Eigen::Index v = 0; v < p.size(); ++v) {
    const double s2 = r_spa(v) * r_spa(v);
    const double m2 = r_sem(v) * r_sem(v);
    p(v) = (s2 + m2) > 0.0
               ? s2 / (s2 + m2) - 0.5
               : std::numeric_limits<double>::quiet_NaN();
  }
  return p;
}

namespace {

struct StreamResult {
  Eigen::VectorXd r;
  double lambda = 0.0;
  int components = 0;
};

StreamResult encode_stream(const Eigen::MatrixXd& embeddings,
                           const Eigen::MatrixXd& voxels_train,
                           const Eigen::MatrixXd& voxels_test,
                           Eigen::Index t_train, const EncodingConfig& config) {
  const Eigen::MatrixXd emb_train = embeddings.topRows(t_train);
  const Eigen::MatrixXd emb_test =
      embeddings.bottomRows(embeddings.rows() - t_train);
  const int effective = static_cast<int>(std::min<Eigen::Index>(
      config.pca_components,
      std::min<Eigen::Index>(t_train - 1, embeddings.cols())));
  const PcaFit fit = pca_fit(emb_train, effective);
  const Eigen::MatrixXd feats_train = pca_transform(emb_train, fit);
  const Eigen::MatrixXd feats_test = pca_transform(emb_test, fit);

  StreamResult best;
  best.components = effective;
  double best_mean = -std::numeric_limits<double>::infinity();
  for (double lambda : config.lambda_grid) {
    const Eigen::MatrixXd weights =
        ridge_fit(feats_train, voxels_train, lambda);
    const Eigen::MatrixXd pred = ridge_predict(feats_test, weights);
    const WindowedCorrelation corr =
        windowed_correlation(voxels_test, pred, config.t_window);
    const double mean_r = corr.r.mean();
    if (mean_r > best_mean) {
      best_mean = mean_r;
      best.r = corr.r;
      best.lambda = lambda;
    }
  }
  return best;
}

}  // namespace

EncodingReport run_encoding(const FmriSeries& fmri,
                            const Eigen::MatrixXd& e_sem,
                            const Eigen::MatrixXd& e_spa,
                            const EncodingConfig& config) {
  validate_series(fmri);
  if (e_sem.rows() != fmri.frames() || e_spa.rows() != fmri.frames()) {
    throw ValidationError(
        errc::alignment,
        "run_encoding: embedding rows must match the fMRI frame count");
  }
  if (config.lambda_grid.empty()) {
    throw ValidationError(errc::configuration,
                          "run_encoding: empty lambda grid");
  }
  if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0)) {
    throw ValidationError(errc::configuration,
                          "run_encoding: train_fraction must be in (0, 1)");
  }
  const FmriSeries smoothed = gaussian_smooth(fmri, config.smooth_sigma);
  const Eigen::Index t_total = smoothed.frames();
  const auto t_train = static_cast<Eigen::Index>(
      std::floor(t_total * config.train_fraction));
  const Eigen::Index t_test = t_total - t_train;
  if (t_train < 2 || t_test < config.t_window) {
    throw ValidationError(errc::configuration,
                          "run_encoding: split leaves too few time points "
                          "(train needs >= 2, test needs >= t_window)");
  }
  const Eigen::MatrixXd voxels_train = smoothed.data.topRows(t_train);
  const Eigen::MatrixXd voxels_test = smoothed.data.bottomRows(t_test);

  const StreamResult sem =
      encode_stream(e_sem, voxels_train, voxels_test, t_train, config);
  const StreamResult spa =
      encode_stream(e_spa, voxels_train, voxels_test, t_train, config);

  EncodingReport report;
  report.r_sem = sem.r;
  report.r_spa = spa.r;
  report.lambda_sem = sem.lambda;
  report.lambda_spa = spa.lambda;
  report.effective_components_sem = sem.components;
  report.effective_components_spa = spa.components;
  report.height = fmri.height;
  report.width = fmri.width;
  report.config = config;
  if (config.keep_negative_correlation) {
    report.p_spa = differential_map(sem.r, spa.r);
  } else {
    report.p_spa = differential_map(sem.r.cwiseMax(0.0), spa.r.cwiseMax(0.0));
  }
  return report;
}

}  // namespace fmridec
