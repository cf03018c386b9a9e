#include "fmridec/preprocess.hpp"

#include <cmath>

namespace fmridec {

Image FmriSeries::frame(Eigen::Index t) const {
  Image img(height, width);
  for (Eigen::Index h = 0; h < height; ++h) {
    for (Eigen::Index w = 0; w < width; ++w) {
      img(h, w) = data(t, h * width + w);
    }
  }
  return img;
}

void FmriSeries::set_frame(Eigen::Index t, const Image& img) {
  for (Eigen::Index h = 0; h < height; ++h) {
    for (Eigen::Index w = 0; w < width; ++w) {
      data(t, h * width + w) = img(h, w);
    }
  }
}

FmriSeries make_series(const std::vector<Image>& frames, double tr_seconds,
                       std::string run_id) {
  if (frames.empty()) {
    throw ValidationError(errc::insufficient_frames,
                          "make_series: at least one frame required");
  }
  FmriSeries s;
  s.height = frames.front().rows();
  s.width = frames.front().cols();
  s.tr_seconds = tr_seconds;
  s.run_id = std::move(run_id);
  s.data.resize(static_cast<Eigen::Index>(frames.size()),
                s.height * s.width);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].rows() != s.height || frames[t].cols() != s.width) {
      throw ValidationError(errc::alignment,
                            "make_series: frame " + std::to_string(t) +
                                " shape differs from frame 0");
    }
    s.set_frame(static_cast<Eigen::Index>(t), frames[t]);
  }
  validate_series(s);
  return s;
}

void validate_series(const FmriSeries& series) {
  if (series.frames() < 1) {
    throw ValidationError(errc::insufficient_frames,
                          "fMRI series must hold at least one frame");
  }
  if (series.height < 1 || series.width < 1 ||
      series.pixels() != series.height * series.width) {
    throw ValidationError(errc::alignment,
                          "fMRI series shape metadata is inconsistent");
  }
  if (!(series.tr_seconds > 0.0)) {
    throw ValidationError(errc::configuration,
                          "repetition time must be positive");
  }
  if (!series.data.allFinite()) {
    throw ValidationError(errc::alignment,
                          "fMRI series contains non-finite values");
  }
}

ZTransformResult z_transform_series(const FmriSeries& series) {
  validate_series(series);
  const Eigen::Index t_len = series.frames();
  if (t_len < 2) {
    throw ValidationError(
        errc::insufficient_frames,
        "z_transform_series: need T >= 2 frames, got " + std::to_string(t_len));
  }
  ZTransformResult result;
  result.series = series;
  Eigen::MatrixXd& d = result.series.data;
  const Eigen::RowVectorXd mean = d.colwise().mean();
  d.rowwise() -= mean;
  // Sample standard deviation, divisor T-1.
  const Eigen::RowVectorXd std_dev =
      (d.colwise().squaredNorm() / static_cast<double>(t_len - 1))
          .cwiseSqrt();
  for (Eigen::Index p = 0; p < d.cols(); ++p) {
    if (std_dev(p) == 0.0) {
      d.col(p).setZero();
      ++result.zero_variance_pixels;
    } else {
      d.col(p) /= std_dev(p);
    }
  }
  return result;
}

FmriSeries average_repeated_runs(const std::vector<FmriSeries>& runs) {
  if (runs.empty()) {
    throw ValidationError(errc::insufficient_frames,
                          "average_repeated_runs: no runs given");
  }
  const FmriSeries& first = runs.front();
  validate_series(first);
  for (std::size_t i = 1; i < runs.size(); ++i) {
    const FmriSeries& r = runs[i];
    if (r.frames() != first.frames() || r.height != first.height ||
        r.width != first.width || r.tr_seconds != first.tr_seconds) {
      throw ValidationError(errc::alignment,
                            "average_repeated_runs: run " + std::to_string(i) +
                                " does not align with run 0");
    }
  }
  FmriSeries mean = first;
  mean.run_id = "mean";
  for (std::size_t i = 1; i < runs.size(); ++i) mean.data += runs[i].data;
  mean.data /= static_cast<double>(runs.size());
  return mean;
}

Eigen::Index shift_in_frames(double shift_seconds, double tr_seconds) {
  // Half-up: 2.5 TRs -> 3 frames.
  return static_cast<Eigen::Index>(
      std::floor(shift_seconds / tr_seconds + 0.5));
}

FmriSeries apply_hemodynamic_shift(const FmriSeries& series,
                                   double shift_seconds) {
  validate_series(series);
  if (shift_seconds < 0.0) {
    throw ValidationError(errc::configuration,
                          "hemodynamic shift must be non-negative");
  }
  const Eigen::Index s = shift_in_frames(shift_seconds, series.tr_seconds);
  if (s >= series.frames()) {
    throw ValidationError(errc::empty_output,
                          "hemodynamic shift of " + std::to_string(s) +
                              " frames consumes the whole series of " +
                              std::to_string(series.frames()) + " frames");
  }
  FmriSeries shifted = series;
  shifted.data = series.data.bottomRows(series.frames() - s).eval();
  return shifted;
}

std::vector<PairedSample> make_windows(const FmriSeries& fmri,
                                       const VideoMeta& video,
                                       double t_video_seconds, double alpha,
                                       double stride_seconds) {
  validate_series(fmri);
  if (video.n_frames < 2 || !(video.fps > 0.0)) {
    throw ValidationError(errc::configuration,
                          "make_windows: video needs n_frames >= 2, fps > 0");
  }
  if (!(alpha > 0.0) || !(stride_seconds > 0.0) || !(t_video_seconds > 0.0)) {
    throw ValidationError(errc::configuration,
                          "make_windows: alpha, stride and T must be positive");
  }
  const double duration =
      std::min(fmri.duration_seconds(), video.duration_seconds());
  if (duration < t_video_seconds) return {};

  const Eigen::Index fmri_len = static_cast<Eigen::Index>(
      std::ceil(alpha * t_video_seconds / fmri.tr_seconds - 1e-9));
  const Eigen::Index m =
      static_cast<Eigen::Index>(std::lround(t_video_seconds * video.fps));
  if (m < 2) {
    throw ValidationError(errc::configuration,
                          "make_windows: window spans fewer than 2 video "
                          "frames at the given fps");
  }
  const Eigen::Index half_m = m / 2;
  const auto count = static_cast<Eigen::Index>(
      std::floor((duration - t_video_seconds) / stride_seconds + 1e-9)) + 1;

  std::vector<PairedSample> windows;
  windows.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) {
    const double t0 = i * stride_seconds;
    PairedSample sample;
    sample.fmri_window.begin =
        static_cast<Eigen::Index>(std::lround(t0 / fmri.tr_seconds));
    sample.fmri_window.end = sample.fmri_window.begin + fmri_len;
    sample.video_window.begin =
        static_cast<Eigen::Index>(std::lround(t0 * video.fps));
    sample.video_window.end = sample.video_window.begin + m;
    if (sample.fmri_window.end > fmri.frames() ||
        sample.video_window.end > video.n_frames) {
      break;  // float fuzz pushed the last window past the recording
    }
    sample.flow_refs.reserve(static_cast<std::size_t>(half_m));
    for (Eigen::Index k = 1; k <= half_m; ++k) {
      FlowRef ref;
      ref.offset_k = static_cast<int>(k);
      ref.initial = sample.video_window.begin + (k - 1);
      ref.future = ref.initial + half_m;
      sample.flow_refs.push_back(ref);
    }
    windows.push_back(std::move(sample));
  }
  return windows;
}

bool detect_scene_change(const std::vector<Image>& frames, double threshold) {
  if (frames.size() < 2) {
    throw ValidationError(errc::insufficient_frames,
                          "detect_scene_change: need at least 2 frames");
  }
  double max_diff = 0.0;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    if (frames[t].rows() != frames[t - 1].rows() ||
        frames[t].cols() != frames[t - 1].cols()) {
      throw ValidationError(errc::alignment,
                            "detect_scene_change: frame shapes differ");
    }
    const double diff = (frames[t] - frames[t - 1]).abs().mean();
    max_diff = std::max(max_diff, diff);
  }
  return max_diff > threshold;
}

}  // namespace fmridec
