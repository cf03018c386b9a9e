#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fmridec/preprocess.hpp"
#include "fmridec/rng.hpp"

using namespace fmridec;

namespace {

FmriSeries random_series(Eigen::Index t, Eigen::Index h, Eigen::Index w,
                         std::uint64_t seed, double tr = 2.0) {
  FmriSeries s;
  s.height = h;
  s.width = w;
  s.tr_seconds = tr;
  s.data.resize(t, h * w);
  Rng rng(seed);
  for (Eigen::Index f = 0; f < t; ++f) {
    for (Eigen::Index p = 0; p < h * w; ++p) s.data(f, p) = rng.normal();
  }
  return s;
}

}  // namespace

TEST_CASE("z-transform maps a constant series to zero and counts the pixels") {
  FmriSeries s;
  s.height = 3;
  s.width = 2;
  s.tr_seconds = 2.0;
  s.data = Eigen::MatrixXd::Constant(4, 6, 7.5);
  const ZTransformResult z = z_transform_series(s);
  CHECK(z.series.data.isZero(0.0));
  CHECK(z.zero_variance_pixels == 6);
}

TEST_CASE("z-transform of the two-point series [1, 3]") {
  FmriSeries s;
  s.height = 1;
  s.width = 1;
  s.data.resize(2, 1);
  s.data << 1.0, 3.0;
  const ZTransformResult z = z_transform_series(s);
  // Sample std with divisor T-1: std = sqrt(2), values -1/sqrt(2), +1/sqrt(2).
  CHECK(z.series.data(0, 0) == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(z.series.data(1, 0) == doctest::Approx(+1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(z.zero_variance_pixels == 0);
}

TEST_CASE("z-transform statistics verified by recomputation") {
  const FmriSeries s = random_series(10, 4, 4, 21);
  const ZTransformResult z = z_transform_series(s);
  for (Eigen::Index p = 0; p < z.series.pixels(); ++p) {
    const Eigen::VectorXd col = z.series.data.col(p);
    double mean = 0.0;
    for (Eigen::Index t = 0; t < col.size(); ++t) mean += col(t);
    mean /= static_cast<double>(col.size());
    double var = 0.0;
    for (Eigen::Index t = 0; t < col.size(); ++t) {
      var += (col(t) - mean) * (col(t) - mean);
    }
    var /= static_cast<double>(col.size() - 1);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-12);
  }
}

TEST_CASE("z-transform is idempotent without zero-variance pixels") {
  const FmriSeries s = random_series(12, 3, 3, 5);
  const ZTransformResult once = z_transform_series(s);
  const ZTransformResult twice = z_transform_series(once.series);
  CHECK((twice.series.data - once.series.data).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("z-transform rejects a single frame") {
  const FmriSeries s = random_series(1, 2, 2, 3);
  CHECK_THROWS_AS((void)z_transform_series(s), ValidationError);
}

TEST_CASE("averaging one run is the identity") {
  const FmriSeries s = random_series(6, 3, 3, 8);
  const FmriSeries mean = average_repeated_runs({s});
  CHECK(mean.data == s.data);
}

TEST_CASE("averaging x and -x cancels") {
  const FmriSeries s = random_series(6, 3, 3, 9);
  FmriSeries neg = s;
  neg.data = -s.data;
  const FmriSeries mean = average_repeated_runs({s, neg});
  CHECK(mean.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("averaging three runs matches the naive summation oracle") {
  const FmriSeries a = random_series(5, 2, 4, 31);
  const FmriSeries b = random_series(5, 2, 4, 32);
  const FmriSeries c = random_series(5, 2, 4, 33);
  const FmriSeries mean = average_repeated_runs({a, b, c});
  for (Eigen::Index f = 0; f < 5; ++f) {
    for (Eigen::Index p = 0; p < 8; ++p) {
      const double oracle = (a.data(f, p) + b.data(f, p) + c.data(f, p)) / 3.0;
      CHECK(std::abs(mean.data(f, p) - oracle) < 1e-12);
    }
  }
}

TEST_CASE("averaging is permutation-invariant") {
  const FmriSeries a = random_series(5, 2, 2, 41);
  const FmriSeries b = random_series(5, 2, 2, 42);
  const FmriSeries c = random_series(5, 2, 2, 43);
  const FmriSeries abc = average_repeated_runs({a, b, c});
  const FmriSeries cab = average_repeated_runs({c, a, b});
  CHECK((abc.data - cab.data).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("averaging rejects misaligned runs") {
  const FmriSeries a = random_series(5, 2, 2, 1);
  const FmriSeries b = random_series(6, 2, 2, 2);
  CHECK_THROWS_AS((void)average_repeated_runs({a, b}), ValidationError);
}

TEST_CASE("zero shift is the identity") {
  const FmriSeries s = random_series(10, 2, 2, 4);
  const FmriSeries shifted = apply_hemodynamic_shift(s, 0.0);
  CHECK(shifted.data == s.data);
}

TEST_CASE("6 s shift at TR 2 s drops the first three frames") {
  const FmriSeries s = random_series(10, 2, 2, 7);
  const FmriSeries shifted = apply_hemodynamic_shift(s, 6.0);
  REQUIRE(shifted.frames() == 7);
  for (Eigen::Index t = 0; t < 7; ++t) {
    CHECK(shifted.data.row(t) == s.data.row(t + 3));
  }
}

TEST_CASE("shift rounding follows the half-up rule") {
  // 5 s at TR 2 s is 2.5 TRs; half-up rounding gives 3 frames.
  CHECK(shift_in_frames(5.0, 2.0) == 3);
  CHECK(shift_in_frames(4.9, 2.0) == 2);
  CHECK(shift_in_frames(5.1, 2.0) == 3);
  CHECK(shift_in_frames(6.0, 2.0) == 3);
  CHECK(shift_in_frames(0.0, 2.0) == 0);
}

TEST_CASE("two shifts compose into one") {
  const FmriSeries s = random_series(12, 2, 3, 17);
  const FmriSeries two_step =
      apply_hemodynamic_shift(apply_hemodynamic_shift(s, 4.0), 6.0);
  const FmriSeries one_step = apply_hemodynamic_shift(s, 10.0);
  CHECK(two_step.data == one_step.data);
}

TEST_CASE("shift consuming the whole series is an error") {
  const FmriSeries s = random_series(3, 2, 2, 18);
  CHECK_THROWS_AS((void)apply_hemodynamic_shift(s, 6.0), ValidationError);
}

TEST_CASE("2 s windows over a 10 s recording yield 5 samples") {
  const FmriSeries fmri = random_series(5, 2, 2, 51, 2.0);
  VideoMeta video;
  video.n_frames = 80;
  video.fps = 8.0;
  const auto windows = make_windows(fmri, video, 2.0, 1.0, 2.0);
  REQUIRE(windows.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(windows[i].fmri_window.begin == static_cast<Eigen::Index>(i));
    CHECK(windows[i].fmri_window.length() == 1);
    CHECK(windows[i].video_window.begin == static_cast<Eigen::Index>(16 * i));
    CHECK(windows[i].video_window.length() == 16);
    // Offsets pair frame k with frame k + floor(m/2).
    REQUIRE(windows[i].flow_refs.size() == 8);
    for (int k = 0; k < 8; ++k) {
      const FlowRef& ref = windows[i].flow_refs[static_cast<std::size_t>(k)];
      CHECK(ref.offset_k == k + 1);
      CHECK(ref.initial == windows[i].video_window.begin + k);
      CHECK(ref.future == ref.initial + 8);
      CHECK(ref.future < windows[i].video_window.end);
    }
  }
}

TEST_CASE("stride equal to the duration yields exactly one window") {
  const FmriSeries fmri = random_series(5, 2, 2, 52, 2.0);
  VideoMeta video;
  video.n_frames = 80;
  video.fps = 8.0;
  CHECK(make_windows(fmri, video, 2.0, 1.0, 10.0).size() == 1);
}

TEST_CASE("window count matches exhaustive enumeration") {
  // 9 s recording, 2 s windows, 1 s stride.
  const FmriSeries fmri = random_series(9, 2, 2, 53, 1.0);
  VideoMeta video;
  video.n_frames = 72;
  video.fps = 8.0;
  const auto windows = make_windows(fmri, video, 2.0, 1.0, 1.0);
  std::size_t oracle = 0;
  for (double t0 = 0.0; t0 + 2.0 <= 9.0 + 1e-9; t0 += 1.0) ++oracle;
  CHECK(oracle == 8);
  CHECK(windows.size() == oracle);
}

TEST_CASE("a recording shorter than one window yields an empty list") {
  const FmriSeries fmri = random_series(1, 2, 2, 54, 1.0);
  VideoMeta video;
  video.n_frames = 8;
  video.fps = 8.0;
  CHECK(make_windows(fmri, video, 2.0, 1.0, 2.0).empty());
}

TEST_CASE("window lists are reproducible") {
  const FmriSeries fmri = random_series(30, 2, 2, 55, 2.0);
  VideoMeta video;
  video.n_frames = 480;
  video.fps = 8.0;
  const auto a = make_windows(fmri, video, 2.0, 1.0, 1.5);
  const auto b = make_windows(fmri, video, 2.0, 1.0, 1.5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].fmri_window.begin == b[i].fmri_window.begin);
    CHECK(a[i].fmri_window.end == b[i].fmri_window.end);
    CHECK(a[i].video_window.begin == b[i].video_window.begin);
    CHECK(a[i].video_window.end == b[i].video_window.end);
  }
}

TEST_CASE("identical frames never trigger the scene detector") {
  const Image frame = Image::Constant(4, 4, 0.25);
  CHECK_FALSE(detect_scene_change({frame, frame, frame}, 1e-9));
}

TEST_CASE("a black-to-white cut always triggers below threshold 1") {
  const Image black = Image::Zero(4, 4);
  const Image white = Image::Constant(4, 4, 1.0);
  CHECK(detect_scene_change({black, white}, 0.999));
}

TEST_CASE("a gradual fade stays under the threshold") {
  // Per-step mean difference of exactly 0.01 against threshold 0.05.
  std::vector<Image> frames;
  for (int t = 0; t < 6; ++t) {
    frames.push_back(Image::Constant(4, 4, 0.01 * t));
  }
  double max_step = 0.0;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    max_step =
        std::max(max_step, (frames[t] - frames[t - 1]).abs().mean());
  }
  CHECK(max_step == doctest::Approx(0.01).epsilon(1e-12));
  CHECK_FALSE(detect_scene_change(frames, 0.05));
}
