#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fmridec/errors.hpp"
#include "fmridec/flow.hpp"

namespace fmridec {

/// Fraction of pixels on which two foreground masks agree.
double matching_ratio(const BoolGrid& gt, const BoolGrid& pred);

/// Structural similarity between two grayscale images: 11x11 Gaussian window
/// (sigma 1.5), C1 = (0.01 L)^2, C2 = (0.03 L)^2, mean over valid window
/// positions. Images smaller than the window are rejected.
double ssim(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b,
            double range = 1.0);

/// Mean per-frame SSIM of two equally long clips.
double video_ssim(const std::vector<Eigen::ArrayXXd>& gt,
                  const std::vector<Eigen::ArrayXXd>& pred,
                  double range = 1.0);

struct ScoreMatrix {
  Eigen::MatrixXd scores;    // n_samples x n_classes
  Eigen::VectorXi gt_labels; // n_samples
};

void validate_scores(const ScoreMatrix& scores);

/// N-way top-K accuracy: per sample and trial the ground-truth class competes
/// against n-1 distinct random distractors; success iff it ranks in the top
/// k by score (ties to the lower class index). Distractor draws are seeded
/// per sample index.
double nway_topk(const ScoreMatrix& scores, int n, int k, int trials,
                 std::uint64_t seed);

struct MaskedCosine {
  double similarity = 0.0;  // NaN when no pixel is valid
  Eigen::Index n_valid = 0;
};

/// Mean cosine similarity between ground-truth and predicted flow over the
/// pixels that are foreground and whose ground truth does not quantize into
/// the zero cluster. Zero predictions contribute similarity 0.
MaskedCosine masked_cosine(const FlowField& gt, const FlowField& pred,
                           const BoolGrid& fg, const Codebook& codebook);

struct MotionSample {
  FlowField gt;
  FlowField pred;
  BoolGrid fg;
};

struct CoverageBucket {
  double threshold = 0.0;
  double mean_similarity = 0.0;  // NaN when the bucket is empty
  Eigen::Index n_samples = 0;
  bool empty = true;
};

/// Buckets samples by foreground coverage (fraction > threshold) and averages
/// the masked cosine similarity per bucket. `pooled` switches from
/// per-sample-mean-then-average to pooling every valid pixel of the bucket.
std::vector<CoverageBucket> coverage_bucketed_eval(
    const std::vector<MotionSample>& samples, const Codebook& codebook,
    const std::vector<double>& thresholds = {0.2, 0.3, 0.4, 0.5, 0.6},
    bool pooled = false);

/// Index of the candidate closest to the candidate mean (ties to the lowest
/// index). Used to pick a representative from repeated generations.
Eigen::Index select_representative(
    const std::vector<Eigen::VectorXd>& candidates);

/// Fallback foreground detector for demos: pixels strictly brighter than
/// the threshold.
BoolGrid intensity_mask(const Eigen::ArrayXXd& image, double threshold);

}  // namespace fmridec
