#include "fmridec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fmridec/rng.hpp"

namespace fmridec {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

Eigen::VectorXd gaussian_window() {
  Eigen::VectorXd k(kWindow);
  const int r = kWindow / 2;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - r;
    k(i) = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
  }
  return k / k.sum();
}

/// Separable valid-mode convolution with the 11-tap Gaussian.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& img,
                             const Eigen::VectorXd& k) {
  const Eigen::Index oh = img.rows() - kWindow + 1;
  const Eigen::Index ow = img.cols() - kWindow + 1;
  Eigen::ArrayXXd rows(oh, img.cols());
  for (Eigen::Index r = 0; r < oh; ++r) {
    rows.row(r) = img.row(r) * k(0);
    for (int t = 1; t < kWindow; ++t) rows.row(r) += img.row(r + t) * k(t);
  }
  Eigen::ArrayXXd out(oh, ow);
  for (Eigen::Index c = 0; c < ow; ++c) {
    out.col(c) = rows.col(c) * k(0);
    for (int t = 1; t < kWindow; ++t) out.col(c) += rows.col(c + t) * k(t);
  }
  return out;
}

}  // namespace

double matching_ratio(const BoolGrid& gt, const BoolGrid& pred) {
  if (gt.rows() != pred.rows() || gt.cols() != pred.cols()) {
    throw ValidationError(errc::alignment,
                          "matching_ratio: mask shapes differ");
  }
  if (gt.size() == 0) {
    throw ValidationError(errc::degenerate_input,
                          "matching_ratio: empty masks");
  }
  const Eigen::Index disagree = (gt != pred).count();
  return 1.0 - static_cast<double>(disagree) / static_cast<double>(gt.size());
}

double ssim(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, double range) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(errc::alignment, "ssim: image shapes differ");
  }
  if (a.rows() < kWindow || a.cols() < kWindow) {
    throw ValidationError(errc::configuration,
                          "ssim: image smaller than the 11x11 window");
  }
  if (!(range > 0.0)) {
    throw ValidationError(errc::configuration,
                          "ssim: pixel range must be positive");
  }
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  const Eigen::VectorXd k = gaussian_window();

  const Eigen::ArrayXXd mu_a = filter_valid(a, k);
  const Eigen::ArrayXXd mu_b = filter_valid(b, k);
  const Eigen::ArrayXXd var_a = filter_valid(a * a, k) - mu_a * mu_a;
  const Eigen::ArrayXXd var_b = filter_valid(b * b, k) - mu_b * mu_b;
  const Eigen::ArrayXXd cov = filter_valid(a * b, k) - mu_a * mu_b;

  const Eigen::ArrayXXd numerator =
      (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
  const Eigen::ArrayXXd denominator =
      (mu_a.square() + mu_b.square() + c1) * (var_a + var_b + c2);
  return (numerator / denominator).mean();
}

double video_ssim(const std::vector<Eigen::ArrayXXd>& gt,
                  const std::vector<Eigen::ArrayXXd>& pred, double range) {
  if (gt.size() != pred.size()) {
    throw ValidationError(errc::alignment,
                          "video_ssim: clips differ in frame count");
  }
  if (gt.empty()) {
    throw ValidationError(errc::degenerate_input, "video_ssim: empty clips");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    sum += ssim(gt[t], pred[t], range);
  }
  return sum / static_cast<double>(gt.size());
}

void validate_scores(const ScoreMatrix& scores) {
  if (scores.scores.rows() != scores.gt_labels.size()) {
    throw ValidationError(errc::alignment,
                          "score matrix rows differ from label count");
  }
  if (scores.scores.rows() < 1 || scores.scores.cols() < 2) {
    throw ValidationError(errc::degenerate_input,
                          "score matrix needs >= 1 sample and >= 2 classes");
  }
  for (Eigen::Index i = 0; i < scores.gt_labels.size(); ++i) {
    if (scores.gt_labels(i) < 0 ||
        scores.gt_labels(i) >= scores.scores.cols()) {
      throw ValidationError(errc::alignment,
                            "ground-truth label out of class range at sample " +
                                std::to_string(i));
    }
  }
}

double nway_topk(const ScoreMatrix& scores, int n, int k, int trials,
                 std::uint64_t seed) {
  validate_scores(scores);
  const Eigen::Index n_classes = scores.scores.cols();
  if (n > n_classes) {
    throw ValidationError(errc::configuration,
                          "nway_topk: n exceeds the number of classes");
  }
  if (n < 2 || k < 1 || k > n || trials < 1) {
    throw ValidationError(errc::configuration,
                          "nway_topk: need 2 <= n, 1 <= k <= n, trials >= 1");
  }
  const Rng base(seed);
  std::uint64_t successes = 0;
  for (Eigen::Index s = 0; s < scores.scores.rows(); ++s) {
    Rng rng = base.fork(static_cast<std::uint64_t>(s));
    const int gt = scores.gt_labels(s);
    const double gt_score = scores.scores(s, gt);
    std::vector<int> pool;
    pool.reserve(static_cast<std::size_t>(n_classes - 1));
    for (Eigen::Index c = 0; c < n_classes; ++c) {
      if (static_cast<int>(c) != gt) pool.push_back(static_cast<int>(c));
    }
    for (int trial = 0; trial < trials; ++trial) {
      // Partial Fisher-Yates: the first n-1 entries become the distractors.
      for (int i = 0; i < n - 1; ++i) {
        const std::size_t j =
            static_cast<std::size_t>(i) +
            static_cast<std::size_t>(rng.integer(pool.size() - i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
      }
      int outranked = 0;
      for (int i = 0; i < n - 1; ++i) {
        const int c = pool[static_cast<std::size_t>(i)];
        const double sc = scores.scores(s, c);
        if (sc > gt_score || (sc == gt_score && c < gt)) ++outranked;
      }
      if (outranked < k) ++successes;
    }
  }
  return static_cast<double>(successes) /
         (static_cast<double>(scores.scores.rows()) *
          static_cast<double>(trials));
}

MaskedCosine masked_cosine(const FlowField& gt, const FlowField& pred,
                           const BoolGrid& fg, const Codebook& codebook) {
  validate_flow(gt);
  validate_flow(pred);
  if (pred.height() != gt.height() || pred.width() != gt.width() ||
      fg.rows() != gt.height() || fg.cols() != gt.width()) {
    throw ValidationError(errc::alignment,
                          "masked_cosine: shapes do not match");
  }
  if (codebook.centroids.row(codebook.zero_index).squaredNorm() != 0.0) {
    throw ValidationError(errc::configuration,
                          "masked_cosine: codebook must be zero-snapped");
  }
  const QuantizeResult q = quantize(gt, codebook);
  MaskedCosine out;
  double sum = 0.0;
  for (Eigen::Index h = 0; h < gt.height(); ++h) {
    for (Eigen::Index w = 0; w < gt.width(); ++w) {
      if (!fg(h, w) || q.labels(h, w) == codebook.zero_index) continue;
      ++out.n_valid;
      const double gn = std::hypot(gt.u(h, w), gt.v(h, w));
      const double pn = std::hypot(pred.u(h, w), pred.v(h, w));
      if (gn == 0.0 || pn == 0.0) continue;  // zero vectors contribute 0
      sum += (gt.u(h, w) * pred.u(h, w) + gt.v(h, w) * pred.v(h, w)) /
             (gn * pn);
    }
  }
  out.similarity = out.n_valid > 0
                       ? sum / static_cast<double>(out.n_valid)
                       : std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::vector<CoverageBucket> coverage_bucketed_eval(
    const std::vector<MotionSample>& samples, const Codebook& codebook,
    const std::vector<double>& thresholds, bool pooled) {
  std::vector<double> fractions;
  std::vector<MaskedCosine> cosines;
  fractions.reserve(samples.size());
  cosines.reserve(samples.size());
  for (const MotionSample& s : samples) {
    fractions.push_back(
        static_cast<double>(s.fg.count()) / static_cast<double>(s.fg.size()));
    cosines.push_back(masked_cosine(s.gt, s.pred, s.fg, codebook));
  }
  std::vector<CoverageBucket> table;
  table.reserve(thresholds.size());
  for (double threshold : thresholds) {
    CoverageBucket bucket;
    bucket.threshold = threshold;
    double sum = 0.0;
    Eigen::Index pooled_n = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!(fractions[i] > threshold)) continue;
      ++bucket.n_samples;
      if (cosines[i].n_valid == 0) continue;
      if (pooled) {
        sum += cosines[i].similarity *
               static_cast<double>(cosines[i].n_valid);
        pooled_n += cosines[i].n_valid;
      } else {
        sum += cosines[i].similarity;
        ++pooled_n;  // per-sample count in this mode
      }
    }
    bucket.empty = bucket.n_samples == 0;
    bucket.mean_similarity =
        pooled_n > 0 ? sum / static_cast<double>(pooled_n)
                     : std::numeric_limits<double>::quiet_NaN();
    table.push_back(bucket);
  }
  return table;
}

Eigen::Index select_representative(
    const std::vector<Eigen::VectorXd>& candidates) {
  if (candidates.empty()) {
    throw ValidationError(errc::degenerate_input,
                          "select_representative: no candidates");
  }
  const Eigen::Index dim = candidates.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& c : candidates) {
    if (c.size() != dim) {
      throw ValidationError(errc::alignment,
                            "select_representative: dimension mismatch");
    }
    mean += c;
  }
  mean /= static_cast<double>(candidates.size());
  Eigen::Index best = 0;
  double best_d2 = (candidates[0] - mean).squaredNorm();
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double d2 = (candidates[i] - mean).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<Eigen::Index>(i);
    }
  }
  return best;
}

BoolGrid intensity_mask(const Eigen::ArrayXXd& image, double threshold) {
  return image > threshold;
}

}  // namespace fmridec
