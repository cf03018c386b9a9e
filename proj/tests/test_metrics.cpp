#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fmridec/metrics.hpp"
#include "fmridec/rng.hpp"

using namespace fmridec;

namespace {

Eigen::ArrayXXd random_image(Eigen::Index h, Eigen::Index w,
                             std::uint64_t seed) {
  Eigen::ArrayXXd img(h, w);
  Rng rng(seed);
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) img(r, c) = rng.uniform();
  }
  return img;
}

/// Reference SSIM: per window position, explicit weighted moments with the
/// 11x11 Gaussian, no separable shortcut. Kept independent of the library
/// implementation on purpose.
double ssim_reference(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b,
                      double range) {
  const int win = 11;
  const double sigma = 1.5;
  Eigen::ArrayXXd kernel(win, win);
  double ksum = 0.0;
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      const double di = i - win / 2;
      const double dj = j - win / 2;
      kernel(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      ksum += kernel(i, j);
    }
  }
  kernel /= ksum;
  const double c1 = std::pow(0.01 * range, 2);
  const double c2 = std::pow(0.03 * range, 2);
  double total = 0.0;
  int count = 0;
  for (Eigen::Index r = 0; r + win <= a.rows(); ++r) {
    for (Eigen::Index c = 0; c + win <= a.cols(); ++c) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          mu_a += kernel(i, j) * a(r + i, c + j);
          mu_b += kernel(i, j) * b(r + i, c + j);
        }
      }
      double var_a = 0.0, var_b = 0.0, cov = 0.0;
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          var_a += kernel(i, j) * a(r + i, c + j) * a(r + i, c + j);
          var_b += kernel(i, j) * b(r + i, c + j) * b(r + i, c + j);
          cov += kernel(i, j) * a(r + i, c + j) * b(r + i, c + j);
        }
      }
      var_a -= mu_a * mu_a;
      var_b -= mu_b * mu_b;
      cov -= mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / count;
}

FlowField single_pixel_flow(double u, double v) {
  FlowField f = make_flow(1, 1);
  f.u(0, 0) = u;
  f.v(0, 0) = v;
  return f;
}

Codebook snapped_codebook() {
  Codebook cb;
  cb.centroids.resize(3, 2);
  cb.centroids << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0;
  cb.zero_index = 0;
  return cb;
}

MotionSample uniform_motion_sample(Eigen::Index h, Eigen::Index w,
                                   double fg_fraction, double gt_u,
                                   double gt_v, double pred_u, double pred_v) {
  MotionSample s;
  s.gt = make_flow(h, w);
  s.pred = make_flow(h, w);
  s.fg = BoolGrid::Constant(h, w, false);
  const auto fg_count =
      static_cast<Eigen::Index>(std::llround(fg_fraction * h * w));
  for (Eigen::Index i = 0; i < fg_count; ++i) {
    const Eigen::Index r = i / w;
    const Eigen::Index c = i % w;
    s.fg(r, c) = true;
    s.gt.u(r, c) = gt_u;
    s.gt.v(r, c) = gt_v;
    s.pred.u(r, c) = pred_u;
    s.pred.v(r, c) = pred_v;
  }
  return s;
}

}  // namespace

TEST_CASE("identical masks match perfectly") {
  BoolGrid m(2, 2);
  m << true, false, true, true;
  CHECK(matching_ratio(m, m) == 1.0);
}

TEST_CASE("complementary masks do not match at all") {
  BoolGrid m(2, 3);
  m << true, false, true, false, true, false;
  const BoolGrid inv = !m;
  CHECK(matching_ratio(m, inv) == 0.0);
}

TEST_CASE("one disagreeing pixel out of four scores 0.75") {
  BoolGrid gt(2, 2), pred(2, 2);
  gt << true, false, true, true;
  pred = gt;
  pred(0, 1) = true;
  CHECK(matching_ratio(gt, pred) == 0.75);
}

TEST_CASE("matching ratio is symmetric and complement-invariant") {
  Rng rng(5);
  BoolGrid a(6, 6), b(6, 6);
  for (Eigen::Index r = 0; r < 6; ++r) {
    for (Eigen::Index c = 0; c < 6; ++c) {
      a(r, c) = rng.uniform() < 0.5;
      b(r, c) = rng.uniform() < 0.5;
    }
  }
  CHECK(matching_ratio(a, b) == matching_ratio(b, a));
  CHECK(matching_ratio(a, b) ==
        matching_ratio(!a, !b));
}

TEST_CASE("ssim of an image with itself is one") {
  const Eigen::ArrayXXd img = random_image(16, 20, 9);
  CHECK(std::abs(ssim(img, img) - 1.0) < 1e-9);
}

TEST_CASE("ssim of opposite constants collapses to the luminance floor") {
  const double range = 1.0;
  const Eigen::ArrayXXd zeros = Eigen::ArrayXXd::Zero(12, 12);
  const Eigen::ArrayXXd ones = Eigen::ArrayXXd::Constant(12, 12, range);
  const double value = ssim(zeros, ones, range);
  // Closed form on constants: C1 / (L^2 + C1).
  const double c1 = 1e-4 * range * range;
  CHECK(value == doctest::Approx(c1 / (range * range + c1)).epsilon(1e-9));
  CHECK(value < 0.05);
}

TEST_CASE("ssim agrees with an independent reference implementation") {
  const Eigen::ArrayXXd a = random_image(18, 15, 10);
  Eigen::ArrayXXd b = random_image(18, 15, 11);
  b = 0.5 * a + 0.5 * b;  // correlated pair
  CHECK(std::abs(ssim(a, b) - ssim_reference(a, b, 1.0)) < 1e-6);
  const Eigen::ArrayXXd c = random_image(11, 32, 12);
  const Eigen::ArrayXXd d = random_image(11, 32, 13);
  CHECK(std::abs(ssim(c, d) - ssim_reference(c, d, 1.0)) < 1e-6);
}

TEST_CASE("ssim is symmetric") {
  const Eigen::ArrayXXd a = random_image(14, 14, 20);
  const Eigen::ArrayXXd b = random_image(14, 14, 21);
  CHECK(ssim(a, b) == ssim(b, a));
}

TEST_CASE("images smaller than the window are rejected") {
  const Eigen::ArrayXXd tiny = random_image(10, 12, 22);
  CHECK_THROWS_AS((void)ssim(tiny, tiny), ValidationError);
}

TEST_CASE("video ssim averages per-frame values") {
  const Eigen::ArrayXXd a = random_image(12, 12, 30);
  const Eigen::ArrayXXd b = random_image(12, 12, 31);
  const double frame0 = ssim(a, a);
  const double frame1 = ssim(a, b);
  const double mean = video_ssim({a, a}, {a, b});
  CHECK(mean == doctest::Approx(0.5 * (frame0 + frame1)).epsilon(1e-12));
  CHECK(video_ssim({a}, {b}) == ssim(a, b));
  CHECK(video_ssim({a, a}, {a, a}) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("video ssim rejects clips of different length") {
  const Eigen::ArrayXXd a = random_image(12, 12, 32);
  CHECK_THROWS_AS((void)video_ssim({a, a}, {a}), ValidationError);
}

TEST_CASE("top-n of n candidates always succeeds") {
  ScoreMatrix sm;
  sm.scores = random_image(10, 20, 40).matrix();
  sm.gt_labels = Eigen::VectorXi::Zero(10);
  CHECK(nway_topk(sm, 5, 5, 20, 3) == 1.0);
}

TEST_CASE("a dominant ground-truth score always wins") {
  ScoreMatrix sm;
  sm.scores = random_image(8, 30, 41).matrix();
  sm.gt_labels.resize(8);
  Rng rng(42);
  for (Eigen::Index i = 0; i < 8; ++i) {
    sm.gt_labels(i) = static_cast<int>(rng.integer(30));
    sm.scores(i, sm.gt_labels(i)) = 2.0;  // above the uniform [0,1) scores
  }
  CHECK(nway_topk(sm, 30, 1, 50, 4) == 1.0);
  CHECK(nway_topk(sm, 7, 3, 50, 4) == 1.0);
}

TEST_CASE("iid scores hit the analytic chance level") {
  // 10,000 independent samples, one trial each: fresh scores per draw keep
  // the Monte-Carlo estimator tight around the analytic chance level.
  ScoreMatrix sm;
  sm.scores = random_image(10000, 200, 43).matrix();
  sm.gt_labels.resize(10000);
  Rng rng(44);
  for (Eigen::Index i = 0; i < 10000; ++i) {
    sm.gt_labels(i) = static_cast<int>(rng.integer(200));
  }
  const double acc50 = nway_topk(sm, 50, 1, 1, 7);
  CHECK(std::abs(acc50 - 0.02) < 0.005);
  const double acc2 = nway_topk(sm, 2, 1, 1, 7);
  CHECK(std::abs(acc2 - 0.5) < 0.01);
}

TEST_CASE("accuracy is monotone in k") {
  ScoreMatrix sm;
  sm.scores = random_image(40, 60, 45).matrix();
  sm.gt_labels.resize(40);
  Rng rng(46);
  for (Eigen::Index i = 0; i < 40; ++i) {
    sm.gt_labels(i) = static_cast<int>(rng.integer(60));
  }
  double prev = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const double acc = nway_topk(sm, 10, k, 50, 8);
    CHECK(acc >= prev);
    prev = acc;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("n larger than the class count is rejected") {
  ScoreMatrix sm;
  sm.scores = random_image(4, 6, 47).matrix();
  sm.gt_labels = Eigen::VectorXi::Zero(4);
  CHECK_THROWS_AS((void)nway_topk(sm, 7, 1, 10, 0), ValidationError);
}

TEST_CASE("masked cosine on parallel, antiparallel and orthogonal flows") {
  const Codebook cb = snapped_codebook();
  const BoolGrid fg = BoolGrid::Constant(1, 1, true);
  const FlowField gt = single_pixel_flow(1.0, 0.0);

  MaskedCosine mc = masked_cosine(gt, single_pixel_flow(0.5, 0.0), fg, cb);
  CHECK(mc.n_valid == 1);
  CHECK(mc.similarity == doctest::Approx(1.0).epsilon(1e-12));

  mc = masked_cosine(gt, single_pixel_flow(-2.0, 0.0), fg, cb);
  CHECK(mc.similarity == doctest::Approx(-1.0).epsilon(1e-12));

  mc = masked_cosine(gt, single_pixel_flow(0.0, 1.0), fg, cb);
  CHECK(mc.similarity == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero predictions contribute zero similarity") {
  const Codebook cb = snapped_codebook();
  FlowField gt = make_flow(1, 2);
  gt.u << 2.0, 2.0;
  FlowField pred = make_flow(1, 2);
  pred.u << 2.0, 0.0;  // second pixel predicts nothing
  const BoolGrid fg = BoolGrid::Constant(1, 2, true);
  const MaskedCosine mc = masked_cosine(gt, pred, fg, cb);
  CHECK(mc.n_valid == 2);
  CHECK(mc.similarity == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pixels quantizing into the zero cluster are excluded") {
  const Codebook cb = snapped_codebook();
  FlowField gt = make_flow(1, 2);
  gt.u << 2.0, 0.05;  // the small vector snaps to the zero cluster
  const FlowField pred = gt;
  const BoolGrid fg = BoolGrid::Constant(1, 2, true);
  const MaskedCosine mc = masked_cosine(gt, pred, fg, cb);
  CHECK(mc.n_valid == 1);
}

TEST_CASE("no valid pixels yields the NaN sentinel") {
  const Codebook cb = snapped_codebook();
  const FlowField zero = make_flow(2, 2);
  const MaskedCosine mc =
      masked_cosine(zero, zero, BoolGrid::Constant(2, 2, true), cb);
  CHECK(mc.n_valid == 0);
  CHECK(std::isnan(mc.similarity));
}

TEST_CASE("masked cosine ignores positive rescaling of predictions") {
  const Codebook cb = snapped_codebook();
  Rng rng(50);
  FlowField gt = make_flow(4, 4);
  FlowField pred = make_flow(4, 4);
  FlowField scaled = make_flow(4, 4);
  for (Eigen::Index r = 0; r < 4; ++r) {
    for (Eigen::Index c = 0; c < 4; ++c) {
      gt.u(r, c) = rng.uniform(-3.0, 3.0);
      gt.v(r, c) = rng.uniform(-3.0, 3.0);
      pred.u(r, c) = rng.uniform(-3.0, 3.0);
      pred.v(r, c) = rng.uniform(-3.0, 3.0);
      const double scale = rng.uniform(0.1, 9.0);
      scaled.u(r, c) = pred.u(r, c) * scale;
      scaled.v(r, c) = pred.v(r, c) * scale;
    }
  }
  const BoolGrid fg = BoolGrid::Constant(4, 4, true);
  CHECK(std::abs(masked_cosine(gt, pred, fg, cb).similarity -
                 masked_cosine(gt, scaled, fg, cb).similarity) < 1e-12);
}

TEST_CASE("coverage buckets respect the strict threshold boundary") {
  const Codebook cb = snapped_codebook();
  std::vector<MotionSample> samples(
      3, uniform_motion_sample(10, 10, 0.55, 2.0, 0.0, 1.0, 0.0));
  const auto table = coverage_bucketed_eval(samples, cb, {0.5, 0.6});
  REQUIRE(table.size() == 2);
  CHECK(table[0].n_samples == 3);
  CHECK_FALSE(table[0].empty);
  CHECK(table[1].n_samples == 0);
  CHECK(table[1].empty);
  CHECK(std::isnan(table[1].mean_similarity));
}

TEST_CASE("bucket means average per-sample similarities") {
  const Codebook cb = snapped_codebook();
  // cos = 0.2 and cos = 0.4 against gt (1, 0).
  std::vector<MotionSample> samples;
  samples.push_back(uniform_motion_sample(10, 10, 0.5, 1.0, 0.0, 0.2,
                                          std::sqrt(1.0 - 0.04)));
  samples.push_back(uniform_motion_sample(10, 10, 0.5, 1.0, 0.0, 0.4,
                                          std::sqrt(1.0 - 0.16)));
  const auto table = coverage_bucketed_eval(samples, cb, {0.3});
  REQUIRE(table.size() == 1);
  CHECK(table[0].n_samples == 2);
  CHECK(table[0].mean_similarity == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("bucket assignment matches a manual pass") {
  const Codebook cb = snapped_codebook();
  std::vector<MotionSample> samples;
  std::vector<double> fractions = {0.1, 0.25, 0.33, 0.48, 0.52, 0.75};
  for (double f : fractions) {
    samples.push_back(uniform_motion_sample(10, 10, f, 2.0, 0.0, 2.0, 0.0));
  }
  const std::vector<double> thresholds = {0.2, 0.3, 0.4, 0.5, 0.6};
  const auto table = coverage_bucketed_eval(samples, cb, thresholds);
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    Eigen::Index manual = 0;
    for (double f : fractions) {
      if (f > thresholds[t]) ++manual;
    }
    CHECK(table[t].n_samples == manual);
  }
  // Buckets are nested: counts never grow as the threshold rises.
  for (std::size_t t = 1; t < table.size(); ++t) {
    CHECK(table[t].n_samples <= table[t - 1].n_samples);
  }
}

TEST_CASE("a single candidate is its own representative") {
  CHECK(select_representative({Eigen::Vector2d(1.0, 2.0)}) == 0);
}

TEST_CASE("the candidate equal to the mean is selected") {
  std::vector<Eigen::VectorXd> candidates = {
      Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(10.0, 10.0),
      Eigen::Vector2d(5.0, 5.0)};
  CHECK(select_representative(candidates) == 2);
}

TEST_CASE("representative selection matches an exhaustive scan") {
  Rng rng(60);
  std::vector<Eigen::VectorXd> candidates;
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd v(6);
    for (Eigen::Index d = 0; d < 6; ++d) v(d) = rng.normal();
    candidates.push_back(v);
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(6);
  for (const auto& c : candidates) mean += c;
  mean /= 20.0;
  Eigen::Index best = 0;
  double best_d = (candidates[0] - mean).norm();
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if ((candidates[i] - mean).norm() < best_d) {
      best_d = (candidates[i] - mean).norm();
      best = static_cast<Eigen::Index>(i);
    }
  }
  CHECK(select_representative(candidates) == best);
}

TEST_CASE("intensity threshold produces a boolean foreground") {
  Eigen::ArrayXXd img(2, 2);
  img << 0.1, 0.6, 0.5, 0.9;
  const BoolGrid mask = intensity_mask(img, 0.5);
  CHECK_FALSE(mask(0, 0));
  CHECK(mask(0, 1));
  CHECK_FALSE(mask(1, 0));
  CHECK(mask(1, 1));
}
