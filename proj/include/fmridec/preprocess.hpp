#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fmridec/errors.hpp"

namespace fmridec {

using Image = Eigen::ArrayXXd;  // H x W, row h / column w

/// Time-ordered series of 2-D frame images. Frames are stored flattened, one
/// row per time point, pixels in row-major order, so the series doubles as a
/// T x N_v design/response matrix.
struct FmriSeries {
  Eigen::MatrixXd data;  // T x (height*width)
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  double tr_seconds = 2.0;
  std::string run_id;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index pixels() const { return data.cols(); }
  double duration_seconds() const { return frames() * tr_seconds; }

  Image frame(Eigen::Index t) const;
  void set_frame(Eigen::Index t, const Image& img);
};

FmriSeries make_series(const std::vector<Image>& frames, double tr_seconds,
                       std::string run_id = {});

/// Throws ValidationError if the series breaks an invariant (empty, bad
/// shape metadata, non-finite values).
void validate_series(const FmriSeries& series);

struct VideoMeta {
  Eigen::Index n_frames = 0;
  double fps = 8.0;
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  std::string stimulus_id;

  double duration_seconds() const { return n_frames / fps; }
};

/// Half-open frame-index range [begin, end).
struct FrameRange {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
  Eigen::Index length() const { return end - begin; }
};

/// One flow interval inside a window: the flow field for offset k is defined
/// between video frames `initial` and `future` = initial + floor(m/2),
/// both absolute indices into the stimulus timeline.
struct FlowRef {
  int offset_k = 1;  // 1-based offset, 1 <= k <= floor(m/2)
  Eigen::Index initial = 0;
  Eigen::Index future = 0;
};

struct PairedSample {
  FrameRange fmri_window;
  FrameRange video_window;
  std::vector<FlowRef> flow_refs;
  bool valid = true;
};

struct ZTransformResult {
  FmriSeries series;
  Eigen::Index zero_variance_pixels = 0;
};

/// Standardizes every pixel over time to mean 0 / sample std 1 (divisor
/// T-1). Pixels with zero temporal variance become all-zero and are counted
/// in the diagnostic.
ZTransformResult z_transform_series(const FmriSeries& series);

/// Element-wise mean of runs recorded for the same stimulus. All runs must
/// agree on T, H, W and TR.
FmriSeries average_repeated_runs(const std::vector<FmriSeries>& runs);

/// Whole-TR shift count for a shift expressed in seconds: half-up rounding
/// of shift/TR.
Eigen::Index shift_in_frames(double shift_seconds, double tr_seconds);

/// Advances the series by round(shift/TR) frames: output frame t = input
/// frame t+s, output length T-s. Compensates the lag between stimulus and
/// the BOLD response peak.
FmriSeries apply_hemodynamic_shift(const FmriSeries& series,
                                   double shift_seconds);

/// Slides a window of `t_video_seconds` of video (paired with
/// alpha*t_video_seconds of fMRI) across the shared stimulus timeline.
/// Returns windows ordered by start time; an empty list when the recording
/// is shorter than one window. `valid` is true on every returned sample;
/// scene-change filtering fills it in later when frames are available.
std::vector<PairedSample> make_windows(const FmriSeries& fmri,
                                       const VideoMeta& video,
                                       double t_video_seconds, double alpha,
                                       double stride_seconds);

/// True iff any consecutive frame pair differs by more than `threshold` in
/// mean absolute pixel difference. Frames are expected in [0, 1].
bool detect_scene_change(const std::vector<Image>& frames, double threshold);

}  // namespace fmridec
