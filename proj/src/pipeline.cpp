#include "fmridec/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "fmridec/decoder.hpp"
#include "fmridec/encoding.hpp"
#include "fmridec/flow.hpp"
#include "fmridec/image_io.hpp"
#include "fmridec/metrics.hpp"
#include "fmridec/rng.hpp"
#include "fmridec/synth.hpp"

namespace fmridec {

namespace {

// Demo-only stream offsets, disjoint from the generator's internal streams.
constexpr std::uint64_t kRunNoiseStream = 0x300000000ULL;
constexpr std::uint64_t kPredMaskStream = 0x300000010ULL;
constexpr std::uint64_t kPredImageStream = 0x300000011ULL;
constexpr std::uint64_t kScoreStream = 0x300000012ULL;

std::string missing(const std::string& path) {
  return "missing config key with no default: " + path;
}

template <typename T>
const T& require_key(const std::optional<T>& value, const std::string& path) {
  if (!value) throw ValidationError(errc::missing_key, missing(path));
  return *value;
}

std::filesystem::path prepare_out(const RunOptions& options) {
  std::filesystem::create_directories(options.out_dir);
  return options.out_dir;
}

void write_manifest(const RunOptions& options, const PipelineConfig& cfg,
                    const std::string& command) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry :
       std::filesystem::recursive_directory_iterator(options.out_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel =
        std::filesystem::relative(entry.path(), options.out_dir);
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  nlohmann::ordered_json manifest;
  manifest["command"] = command;
  manifest["seed"] = options.seed;
  manifest["config"] = config_to_json(cfg);
  auto artifacts = nlohmann::ordered_json::object();
  for (const auto& rel : files) {
    artifacts[rel.generic_string()] = fnv1a64_file(options.out_dir / rel);
  }
  manifest["artifacts"] = std::move(artifacts);
  write_text_atomic(options.out_dir / "manifest.json",
                    manifest.dump(2) + "\n");
}

std::vector<FlowField> flows_from_tensor(const Tensor& t,
                                         const std::string& what) {
  require_ndim(t, 4, what);
  if (t.shape[3] != 2) {
    throw ValidationError(errc::alignment,
                          what + ": last axis must hold 2 components");
  }
  const auto n = static_cast<Eigen::Index>(t.shape[0]);
  const auto h = static_cast<Eigen::Index>(t.shape[1]);
  const auto w = static_cast<Eigen::Index>(t.shape[2]);
  std::vector<FlowField> flows;
  flows.reserve(static_cast<std::size_t>(n));
  std::size_t idx = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    FlowField f = make_flow(h, w);
    for (Eigen::Index r = 0; r < h; ++r) {
      for (Eigen::Index c = 0; c < w; ++c) {
        f.u(r, c) = t.values[idx++];
        f.v(r, c) = t.values[idx++];
      }
    }
    flows.push_back(std::move(f));
  }
  return flows;
}

std::vector<Image> images_from_tensor(const Tensor& t,
                                      const std::string& what) {
  require_ndim(t, 3, what);
  const auto n = static_cast<Eigen::Index>(t.shape[0]);
  const auto h = static_cast<Eigen::Index>(t.shape[1]);
  const auto w = static_cast<Eigen::Index>(t.shape[2]);
  std::vector<Image> frames;
  frames.reserve(static_cast<std::size_t>(n));
  std::size_t idx = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Image img(h, w);
    for (Eigen::Index r = 0; r < h; ++r) {
      for (Eigen::Index c = 0; c < w; ++c) img(r, c) = t.values[idx++];
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

std::vector<BoolGrid> masks_from_tensor(const Tensor& t,
                                        const std::string& what) {
  const auto frames = images_from_tensor(t, what);
  std::vector<BoolGrid> masks;
  masks.reserve(frames.size());
  for (const Image& f : frames) masks.push_back(f != 0.0);
  return masks;
}

nlohmann::ordered_json windows_to_json(
    const std::vector<PairedSample>& windows) {
  auto arr = nlohmann::ordered_json::array();
  for (const PairedSample& w : windows) {
    arr.push_back({
        {"fmri_range", {w.fmri_window.begin, w.fmri_window.end}},
        {"video_range", {w.video_window.begin, w.video_window.end}},
        {"valid", w.valid},
    });
  }
  return arr;
}

struct MetricRow {
  std::string metric;
  std::string subject;
  std::string param;
  double value = 0.0;
  Eigen::Index n = 0;
};

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  out << "metric,subject,param,value,n\n";
  for (const MetricRow& r : rows) {
    out << r.metric << ',' << r.subject << ',' << r.param << ','
        << fmt_double(r.value) << ',' << r.n << '\n';
  }
  return out.str();
}

std::string loss_history_csv(const std::vector<EpochLoss>& history) {
  std::ostringstream out;
  out << "epoch,entropy,mse,total\n";
  for (const EpochLoss& e : history) {
    out << e.epoch << ',' << fmt_double(e.entropy) << ','
        << fmt_double(e.mse) << ',' << fmt_double(e.total) << '\n';
  }
  return out.str();
}

std::string encoding_csv(const EncodingReport& report) {
  std::ostringstream out;
  out << "voxel_index,r_sem,r_spa,p_spa\n";
  for (Eigen::Index v = 0; v < report.p_spa.size(); ++v) {
    out << v << ',' << fmt_double(report.r_sem(v)) << ','
        << fmt_double(report.r_spa(v)) << ',' << fmt_double(report.p_spa(v))
        << '\n';
  }
  return out.str();
}

void write_encoding_outputs(const std::filesystem::path& dir,
                            const EncodingReport& report) {
  std::filesystem::create_directories(dir);
  write_text_atomic(dir / "encoding.csv", encoding_csv(report));
  Eigen::ArrayXXd map(report.height, report.width);
  for (Eigen::Index h = 0; h < report.height; ++h) {
    for (Eigen::Index w = 0; w < report.width; ++w) {
      map(h, w) = report.p_spa(h * report.width + w);
    }
  }
  write_pgm(dir / "p_spa.pgm", map, -0.5, 0.5);
  write_diverging_ppm(dir / "p_spa.ppm", map, 0.5);
}

FmriSeries load_series(const std::filesystem::path& path, double tr_seconds,
                       const std::string& what) {
  return series_from_tensor(read_tensor(path), tr_seconds, what);
}

ScoreMatrix load_scores(const std::filesystem::path& scores_path,
                        const std::filesystem::path& labels_path) {
  ScoreMatrix sm;
  sm.scores = matrix_from_tensor(read_tensor(scores_path), "scores");
  const Tensor lt = read_tensor(labels_path);
  require_ndim(lt, 1, "labels");
  sm.gt_labels.resize(static_cast<Eigen::Index>(lt.values.size()));
  for (Eigen::Index i = 0; i < sm.gt_labels.size(); ++i) {
    sm.gt_labels(i) =
        static_cast<int>(lt.values[static_cast<std::size_t>(i)]);
  }
  validate_scores(sm);
  return sm;
}

struct SplitSamples {
  std::vector<TrainingSample> train;
  std::vector<TrainingSample> test;
  std::size_t split = 0;
};

SplitSamples split_samples(std::vector<TrainingSample> all,
                           double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw ValidationError(errc::configuration,
                          "train_fraction must lie in (0, 1]");
  }
  SplitSamples s;
  s.split = static_cast<std::size_t>(
      std::floor(static_cast<double>(all.size()) * train_fraction));
  s.split = std::max<std::size_t>(1, std::min(s.split, all.size()));
  s.train.assign(all.begin(),
                 all.begin() + static_cast<std::ptrdiff_t>(s.split));
  s.test.assign(all.begin() + static_cast<std::ptrdiff_t>(s.split),
                all.end());
  return s;
}

std::vector<MotionSample> predict_motion(
    const MotionDecoder& decoder, const std::vector<TrainingSample>& samples,
    const std::vector<BoolGrid>& fg_masks, const Codebook& codebook) {
  std::vector<MotionSample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    MotionSample m;
    m.gt = samples[i].gt_flow;
    m.pred = expected_flow(
        forward(decoder, samples[i].image_feat, samples[i].fmri_feat),
        codebook);
    m.fg = fg_masks[i];
    out.push_back(std::move(m));
  }
  return out;
}

double mean_masked_cosine(const std::vector<MotionSample>& samples,
                          const Codebook& codebook) {
  double sum = 0.0;
  Eigen::Index n = 0;
  for (const MotionSample& s : samples) {
    const MaskedCosine mc = masked_cosine(s.gt, s.pred, s.fg, codebook);
    if (mc.n_valid == 0) continue;
    sum += mc.similarity;
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n)
               : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

std::string fmt_double(double x) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, result.ptr);
}

std::string fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError(errc::io, "cannot hash " + path.string());
  }
  std::uint64_t h = 1469598103934665603ULL;
  char chunk[4096];
  while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<std::uint8_t>(chunk[i]);
      h *= 1099511628211ULL;
    }
    if (!in) break;
  }
  std::ostringstream out;
  out << "fnv64:" << std::hex << h;
  return out.str();
}

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& text) {
  const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw ValidationError(errc::io,
                            "cannot open " + tmp.string() + " for writing");
    }
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

Tensor series_to_tensor(const FmriSeries& series) {
  Tensor t;
  t.dtype = Dtype::f64;
  t.shape = {static_cast<std::uint64_t>(series.frames()),
             static_cast<std::uint64_t>(series.height),
             static_cast<std::uint64_t>(series.width)};
  t.values.reserve(t.size());
  for (Eigen::Index f = 0; f < series.frames(); ++f) {
    for (Eigen::Index p = 0; p < series.pixels(); ++p) {
      t.values.push_back(series.data(f, p));
    }
  }
  return t;
}

FmriSeries series_from_tensor(const Tensor& t, double tr_seconds,
                              const std::string& what) {
  require_ndim(t, 3, what);
  FmriSeries s;
  s.height = static_cast<Eigen::Index>(t.shape[1]);
  s.width = static_cast<Eigen::Index>(t.shape[2]);
  s.tr_seconds = tr_seconds;
  s.run_id = what;
  const auto frames = static_cast<Eigen::Index>(t.shape[0]);
  s.data.resize(frames, s.height * s.width);
  for (Eigen::Index f = 0; f < frames; ++f) {
    for (Eigen::Index p = 0; p < s.pixels(); ++p) {
      s.data(f, p) = t.values[static_cast<std::size_t>(f * s.pixels() + p)];
    }
  }
  validate_series(s);
  return s;
}

void run_synth(const RunOptions& options) {
  PipelineConfig cfg = load_config(options.config_path);
  cfg.synth.seed = options.seed;
  const auto out = prepare_out(options);
  const SyntheticDataset ds = generate(cfg.synth);
  save_dataset(out / "dataset", ds);
  write_tensor(out / "dataset" / "fmri_series.dftn",
               series_to_tensor(encoding_series(ds)));
  write_manifest(options, cfg, "synth");
}

void run_preprocess(const RunOptions& options) {
  const PipelineConfig cfg = load_config(options.config_path);
  const auto& p = cfg.preprocess;
  if (p.fmri_runs.empty()) {
    throw ValidationError(errc::missing_key, missing("preprocess.fmri_runs"));
  }
  const auto out = prepare_out(options);

  std::vector<FmriSeries> runs;
  runs.reserve(p.fmri_runs.size());
  Eigen::Index zero_variance = 0;
  for (std::size_t i = 0; i < p.fmri_runs.size(); ++i) {
    FmriSeries run = load_series(p.fmri_runs[i], p.tr_seconds,
                                 "run" + std::to_string(i));
    ZTransformResult z = z_transform_series(run);
    zero_variance += z.zero_variance_pixels;
    runs.push_back(std::move(z.series));
  }
  const FmriSeries averaged = average_repeated_runs(runs);
  const FmriSeries shifted =
      apply_hemodynamic_shift(averaged, p.shift_seconds);

  VideoMeta video;
  video.fps = p.video_fps;
  video.height = p.video_height;
  video.width = p.video_width;
  video.stimulus_id = p.stimulus_id;
  std::vector<Image> video_frames;
  if (p.video_frames) {
    video_frames = images_from_tensor(read_tensor(*p.video_frames),
                                      "preprocess.video_frames");
    video.n_frames = static_cast<Eigen::Index>(video_frames.size());
    if (!video_frames.empty()) {
      video.height = video_frames.front().rows();
      video.width = video_frames.front().cols();
    }
  } else {
    video.n_frames = static_cast<Eigen::Index>(
        require_key(p.video_n_frames, "preprocess.video_n_frames"));
  }

  std::vector<PairedSample> windows = make_windows(
      shifted, video, p.t_video_seconds, p.alpha, p.stride());
  if (!video_frames.empty()) {
    for (PairedSample& w : windows) {
      std::vector<Image> clip(video_frames.begin() + w.video_window.begin,
                              video_frames.begin() + w.video_window.end);
      w.valid = !detect_scene_change(clip, p.scene_threshold);
    }
  }

  write_tensor(out / "series.dftn", series_to_tensor(shifted));
  nlohmann::ordered_json summary;
  summary["zero_variance_pixels"] = zero_variance;
  summary["windows"] = windows_to_json(windows);
  write_text_atomic(out / "windows.json", summary["windows"].dump(2) + "\n");
  write_text_atomic(out / "preprocess_summary.json", summary.dump(2) + "\n");
  write_manifest(options, cfg, "preprocess");
}

void run_fit_codebook(const RunOptions& options) {
  const PipelineConfig cfg = load_config(options.config_path);
  const auto out = prepare_out(options);
  std::vector<FlowField> flows;
  if (cfg.codebook.dataset) {
    flows = dataset_flows(load_dataset(*cfg.codebook.dataset));
  } else if (cfg.codebook.flows) {
    flows = flows_from_tensor(read_tensor(*cfg.codebook.flows),
                              "codebook.flows");
  } else {
    throw ValidationError(errc::missing_key, missing("codebook.flows"));
  }
  const Codebook cb = zero_snap(fit_codebook(flows, cfg.codebook.n_vec,
                                             options.seed,
                                             cfg.codebook.max_iters,
                                             cfg.codebook.tol));
  save_codebook(out / "codebook.json", cb);
  write_manifest(options, cfg, "fit-codebook");
}

void run_train_motion(const RunOptions& options) {
  const PipelineConfig cfg = load_config(options.config_path);
  const auto out = prepare_out(options);
  const SyntheticDataset ds =
      load_dataset(require_key(cfg.decoder.dataset, "decoder.dataset"));
  const Codebook cb =
      load_codebook(require_key(cfg.decoder.codebook, "decoder.codebook"));
  const SplitSamples split =
      split_samples(training_samples(ds, cb), cfg.decoder.train_fraction);

  MotionDecoder decoder = init_decoder(ds.config.d_img, ds.config.d_fmri,
                                       cfg.decoder.d_h, cb.n_vec(),
                                       options.seed);
  decoder.hyper.lambda2 = cfg.decoder.lambda2;
  const TrainResult result =
      train(std::move(decoder), split.train, cb, cfg.decoder.epochs,
            cfg.decoder.batch_size, cfg.decoder.learning_rate, options.seed);
  save_decoder(out / "decoder", result.decoder);
  write_text_atomic(out / "loss_history.csv",
                    loss_history_csv(result.history));
  write_manifest(options, cfg, "train-motion");
}

void run_eval_image(const RunOptions& options) {
  const PipelineConfig cfg = load_config(options.config_path);
  const auto& m = cfg.metrics;
  const auto out = prepare_out(options);
  std::vector<MetricRow> rows;
  nlohmann::ordered_json summary;

  const std::string scores_path = require_key(m.scores, "metrics.scores");
  const std::string labels_path = require_key(m.labels, "metrics.labels");
  const ScoreMatrix scores = load_scores(scores_path, labels_path);
  const double nway =
      nway_topk(scores, m.nway_n, m.nway_k, m.nway_trials, options.seed);
  const double two_way = nway_topk(scores, 2, 1, m.nway_trials, options.seed);
  rows.push_back({"nway_top" + std::to_string(m.nway_k), m.subject,
                  std::to_string(m.nway_n) + "-way", nway,
                  scores.scores.rows() * m.nway_trials});
  rows.push_back({"nway_top1", m.subject, "2-way", two_way,
                  scores.scores.rows() * m.nway_trials});
  summary["semantic"] = {{"n", m.nway_n},
                         {"k", m.nway_k},
                         {"nway_topk", nway},
                         {"2way_top1", two_way}};

  if (m.gt_masks && m.pred_masks) {
    const auto gt = masks_from_tensor(read_tensor(*m.gt_masks), "gt_masks");
    const auto pred =
        masks_from_tensor(read_tensor(*m.pred_masks), "pred_masks");
    if (gt.size() != pred.size()) {
      throw ValidationError(errc::alignment,
                            "gt/pred mask stacks differ in length");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      sum += matching_ratio(gt[i], pred[i]);
    }
    const double r_m = sum / static_cast<double>(gt.size());
    rows.push_back({"matching_ratio", m.subject, "all", r_m,
                    static_cast<Eigen::Index>(gt.size())});
    summary["spatial"] = {{"r_m", r_m}};
  }

  if (m.gt_images && m.pred_images) {
    const auto gt = images_from_tensor(read_tensor(*m.gt_images), "gt_images");
    const auto pred =
        images_from_tensor(read_tensor(*m.pred_images), "pred_images");
    const double s = video_ssim(gt, pred, m.ssim_range);
    rows.push_back({"ssim", m.subject, "mean", s,
                    static_cast<Eigen::Index>(gt.size())});
    summary["pixel"] = {{"ssim", s}};
  }

  write_text_atomic(out / "image_metrics.csv", metrics_csv(rows));
  write_text_atomic(out / "image_summary.json", summary.dump(2) + "\n");
  write_manifest(options, cfg, "eval-image");
}

void run_eval_motion(const RunOptions& options) {
  const PipelineConfig cfg = load_config(options.config_path);
  const auto& m = cfg.metrics;
  const auto out = prepare_out(options);
  const SyntheticDataset ds =
      load_dataset(require_key(m.dataset, "metrics.dataset"));
  const Codebook cb =
      load_codebook(require_key(m.codebook, "metrics.codebook"));
  const MotionDecoder decoder =
      load_decoder(require_key(m.decoder, "metrics.decoder"));
  const SplitSamples split =
      split_samples(training_samples(ds, cb), cfg.decoder.train_fraction);
  std::vector<BoolGrid> fg;
  for (std::size_t i = split.split; i < ds.samples.size(); ++i) {
    fg.push_back(ds.samples[i].fg_mask);
  }
  const auto motion = predict_motion(decoder, split.test, fg, cb);
  const auto table =
      coverage_bucketed_eval(motion, cb, m.coverage_thresholds, m.pooled);
  std::vector<MetricRow> rows;
  auto buckets = nlohmann::ordered_json::array();
  for (const CoverageBucket& b : table) {
    rows.push_back({"masked_cosine", m.subject, fmt_double(b.threshold),
                    b.mean_similarity, b.n_samples});
    buckets.push_back({{"threshold", b.threshold},
                       {"cosine", b.mean_similarity},
                       {"n", b.n_samples}});
  }
  write_text_atomic(out / "motion_metrics.csv", metrics_csv(rows));
  nlohmann::ordered_json summary;
  summary["motion"] = {{"buckets", std::move(buckets)}};
  write_text_atomic(out / "motion_summary.json", summary.dump(2) + "\n");
  write_manifest(options, cfg, "eval-motion");
}

void run_encode(const RunOptions& options) {
  const PipelineConfig cfg = load_config(options.config_path);
  const auto& e = cfg.encoding;
  const auto out = prepare_out(options);
  const FmriSeries fmri = load_series(require_key(e.fmri, "encoding.fmri"),
                                      e.tr_seconds, "encoding");
  const Eigen::MatrixXd e_sem = matrix_from_tensor(
      read_tensor(require_key(e.e_sem, "encoding.e_sem")), "e_sem");
  const Eigen::MatrixXd e_spa = matrix_from_tensor(
      read_tensor(require_key(e.e_spa, "encoding.e_spa")), "e_spa");
  const EncodingReport report = run_encoding(fmri, e_sem, e_spa, e.params);
  write_encoding_outputs(out, report);
  nlohmann::ordered_json summary;
  summary["lambda_sem"] = report.lambda_sem;
  summary["lambda_spa"] = report.lambda_spa;
  summary["pca_components_sem"] = report.effective_components_sem;
  summary["pca_components_spa"] = report.effective_components_spa;
  write_text_atomic(out / "encoding_summary.json", summary.dump(2) + "\n");
  write_manifest(options, cfg, "encode");
}

namespace {

/// Demo stand-ins for the out-of-scope generative stage: a noisy copy of the
/// ground-truth blob image, a mask with seeded pixel flips, and classifier
/// scores biased toward the true class.
struct DemoPredictions {
  std::vector<Image> gt_images, pred_images;
  std::vector<BoolGrid> gt_masks, pred_masks;
  ScoreMatrix scores;
};

DemoPredictions demo_predictions(const SyntheticDataset& ds,
                                 std::size_t begin, const Rng& base) {
  DemoPredictions p;
  Rng mask_rng = base.fork(kPredMaskStream);
  Rng img_rng = base.fork(kPredImageStream);
  Rng score_rng = base.fork(kScoreStream);
  const std::size_t n = ds.samples.size() - begin;
  p.scores.scores.resize(static_cast<Eigen::Index>(n), ds.config.n_classes);
  p.scores.gt_labels.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = begin; i < ds.samples.size(); ++i) {
    const SyntheticSample& s = ds.samples[i];
    Image gt_img(ds.config.grid_h, ds.config.grid_w);
    for (Eigen::Index r = 0; r < gt_img.rows(); ++r) {
      for (Eigen::Index c = 0; c < gt_img.cols(); ++c) {
        gt_img(r, c) = s.image_feat.values(r * gt_img.cols() + c, 0);
      }
    }
    Image pred_img = gt_img;
    BoolGrid pred_mask = s.fg_mask;
    for (Eigen::Index r = 0; r < gt_img.rows(); ++r) {
      for (Eigen::Index c = 0; c < gt_img.cols(); ++c) {
        pred_img(r, c) = std::clamp(
            pred_img(r, c) + 0.1 * img_rng.normal(), 0.0, 1.0);
        if (mask_rng.uniform() < 0.1) pred_mask(r, c) = !pred_mask(r, c);
      }
    }
    p.gt_images.push_back(std::move(gt_img));
    p.pred_images.push_back(std::move(pred_img));
    p.gt_masks.push_back(s.fg_mask);
    p.pred_masks.push_back(std::move(pred_mask));
    const auto row = static_cast<Eigen::Index>(i - begin);
    for (int c = 0; c < ds.config.n_classes; ++c) {
      p.scores.scores(row, c) =
          (c == s.semantic_class ? 1.5 : 0.0) + score_rng.normal();
    }
    p.scores.gt_labels(row) = s.semantic_class;
  }
  return p;
}

Tensor stack_images(const std::vector<Image>& imgs) {
  Tensor t;
  t.dtype = Dtype::f64;
  t.shape = {imgs.size(), static_cast<std::uint64_t>(imgs.front().rows()),
             static_cast<std::uint64_t>(imgs.front().cols())};
  t.values.reserve(t.size());
  for (const Image& img : imgs) {
    for (Eigen::Index r = 0; r < img.rows(); ++r) {
      for (Eigen::Index c = 0; c < img.cols(); ++c) {
        t.values.push_back(img(r, c));
      }
    }
  }
  return t;
}

Image blob_image(const SyntheticSample& s, Eigen::Index h, Eigen::Index w,
                 double dx, double dy) {
  Image img(h, w);
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      const double ddx = c - (s.cx + dx);
      const double ddy = r - (s.cy + dy);
      img(r, c) = std::exp(-(ddx * ddx + ddy * ddy) /
                           (2.0 * s.blob_sigma * s.blob_sigma));
    }
  }
  return img;
}

}  // namespace

void run_demo(const RunOptions& options) {
  PipelineConfig cfg = load_config(options.config_path);
  cfg.synth.seed = options.seed;
  const auto out = prepare_out(options);
  const Rng base(options.seed);
  std::ostringstream report;

  // 1. Synthetic world.
  const SyntheticDataset ds = generate(cfg.synth);
  save_dataset(out / "dataset", ds);
  const FmriSeries clean = encoding_series(ds);
  const Eigen::Index n = clean.frames();

  // 2. Raw recording: two runs with an injected hemodynamic lag, then the
  // z-transform / run-average / shift / window chain.
  const Eigen::Index lag =
      shift_in_frames(cfg.preprocess.shift_seconds, cfg.encoding.tr_seconds);
  std::vector<FmriSeries> runs;
  for (int run = 0; run < 2; ++run) {
    FmriSeries raw;
    raw.height = clean.height;
    raw.width = clean.width;
    raw.tr_seconds = cfg.encoding.tr_seconds;
    raw.run_id = "run" + std::to_string(run);
    raw.data = Eigen::MatrixXd::Zero(n + lag, clean.pixels());
    raw.data.bottomRows(n) = clean.data;
    Rng noise = base.fork(kRunNoiseStream + static_cast<std::uint64_t>(run));
    for (Eigen::Index t = 0; t < raw.frames(); ++t) {
      for (Eigen::Index p = 0; p < raw.pixels(); ++p) {
        raw.data(t, p) += 0.05 * noise.normal();
      }
    }
    ZTransformResult z = z_transform_series(raw);
    runs.push_back(std::move(z.series));
  }
  const FmriSeries averaged = average_repeated_runs(runs);
  const FmriSeries series =
      apply_hemodynamic_shift(averaged, cfg.preprocess.shift_seconds);

  VideoMeta video;
  video.fps = cfg.preprocess.video_fps;
  video.height = cfg.synth.grid_h;
  video.width = cfg.synth.grid_w;
  video.stimulus_id = "synthetic";
  const auto frames_per_window = static_cast<Eigen::Index>(
      std::lround(cfg.preprocess.t_video_seconds * video.fps));
  video.n_frames = n * frames_per_window;
  std::vector<PairedSample> windows =
      make_windows(series, video, cfg.preprocess.t_video_seconds,
                   cfg.preprocess.alpha, cfg.preprocess.stride());
  // Render each window's clip: the blob drifts along the planted motion;
  // every 25th sample teleports mid-window to exercise the scene filter.
  Eigen::Index filtered = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const SyntheticSample& s = ds.samples[i];
    std::vector<Image> clip;
    clip.reserve(static_cast<std::size_t>(frames_per_window));
    const Eigen::Index half = frames_per_window / 2;
    for (Eigen::Index k = 0; k < frames_per_window; ++k) {
      const double step = static_cast<double>(k) / half;
      double jump = (i % 25 == 24 && k >= half)
                        ? 0.5 * cfg.synth.grid_w
                        : 0.0;
      clip.push_back(blob_image(s, video.height, video.width,
                                s.u * step + jump, s.v * step));
    }
    windows[i].valid =
        !detect_scene_change(clip, cfg.preprocess.scene_threshold);
    if (!windows[i].valid) ++filtered;
  }
  std::filesystem::create_directories(out / "preprocess");
  write_tensor(out / "preprocess" / "series.dftn", series_to_tensor(series));
  write_text_atomic(out / "preprocess" / "windows.json",
                    windows_to_json(windows).dump(2) + "\n");
  report << "windows: " << windows.size()
         << " (scene-change filtered: " << filtered << ")\n";

  // 3. Flow codebook.
  const Codebook cb = zero_snap(
      fit_codebook(dataset_flows(ds), cfg.codebook.n_vec, options.seed,
                   cfg.codebook.max_iters, cfg.codebook.tol));
  save_codebook(out / "codebook.json", cb);
  report << "codebook: " << cb.n_vec() << " centroids, zero cluster at index "
         << cb.zero_index << "\n";

  // 4. Motion decoder, full and image-only ablation.
  const SplitSamples split =
      split_samples(training_samples(ds, cb), cfg.decoder.train_fraction);
  MotionDecoder init = init_decoder(ds.config.d_img, ds.config.d_fmri,
                                    cfg.decoder.d_h, cb.n_vec(),
                                    options.seed);
  init.hyper.lambda2 = cfg.decoder.lambda2;
  const TrainResult full =
      train(init, split.train, cb, cfg.decoder.epochs,
            cfg.decoder.batch_size, cfg.decoder.learning_rate, options.seed);
  const TrainResult ablated =
      train(init, ablate_fmri(split.train), cb, cfg.decoder.epochs,
            cfg.decoder.batch_size, cfg.decoder.learning_rate, options.seed);
  save_decoder(out / "decoder", full.decoder);
  write_text_atomic(out / "loss_history.csv",
                    loss_history_csv(full.history));
  report << "decoder final loss: "
         << fmt_double(full.history.empty() ? 0.0
                                            : full.history.back().total)
         << "\n";

  // 5. Motion metrics on the held-out tail.
  std::vector<BoolGrid> fg_test;
  for (std::size_t i = split.split; i < ds.samples.size(); ++i) {
    fg_test.push_back(ds.samples[i].fg_mask);
  }
  const auto motion_full =
      predict_motion(full.decoder, split.test, fg_test, cb);
  const auto motion_ablated = predict_motion(
      ablated.decoder, ablate_fmri(split.test), fg_test, cb);
  const auto table = coverage_bucketed_eval(
      motion_full, cb, cfg.metrics.coverage_thresholds, cfg.metrics.pooled);
  std::vector<MetricRow> motion_rows;
  report << "motion cosine by coverage:";
  for (const CoverageBucket& b : table) {
    motion_rows.push_back({"masked_cosine", cfg.metrics.subject,
                           fmt_double(b.threshold), b.mean_similarity,
                           b.n_samples});
    report << " " << fmt_double(b.threshold) << ":"
           << (b.empty ? "-" : fmt_double(b.mean_similarity));
  }
  report << "\n";
  const double cos_full = mean_masked_cosine(motion_full, cb);
  const double cos_ablated = mean_masked_cosine(motion_ablated, cb);
  report << "masked cosine, full vs image-only: " << fmt_double(cos_full)
         << " vs " << fmt_double(cos_ablated)
         << " (delta " << fmt_double(cos_full - cos_ablated) << ")\n";

  // 6. Image metrics on stand-in predictions.
  const DemoPredictions preds = demo_predictions(ds, split.split, base);
  std::filesystem::create_directories(out / "eval");
  write_tensor(out / "eval" / "gt_images.dftn", stack_images(preds.gt_images));
  write_tensor(out / "eval" / "pred_images.dftn",
               stack_images(preds.pred_images));
  const int n_eff = std::min(cfg.metrics.nway_n, cfg.synth.n_classes);
  const double nway = nway_topk(preds.scores, n_eff, cfg.metrics.nway_k,
                                cfg.metrics.nway_trials, options.seed);
  const double two_way =
      nway_topk(preds.scores, 2, 1, cfg.metrics.nway_trials, options.seed);
  double r_m = 0.0;
  for (std::size_t i = 0; i < preds.gt_masks.size(); ++i) {
    r_m += matching_ratio(preds.gt_masks[i], preds.pred_masks[i]);
  }
  r_m /= static_cast<double>(preds.gt_masks.size());
  const double mean_ssim =
      video_ssim(preds.gt_images, preds.pred_images, cfg.metrics.ssim_range);
  report << n_eff << "-way top-" << cfg.metrics.nway_k << ": "
         << fmt_double(nway) << ", 2-way top-1: " << fmt_double(two_way)
         << "\n";
  report << "matching ratio r_m: " << fmt_double(r_m) << "\n";
  report << "ssim: " << fmt_double(mean_ssim) << "\n";

  std::vector<MetricRow> image_rows = {
      {"nway_top" + std::to_string(cfg.metrics.nway_k), cfg.metrics.subject,
       std::to_string(n_eff) + "-way", nway,
       preds.scores.scores.rows() * cfg.metrics.nway_trials},
      {"nway_top1", cfg.metrics.subject, "2-way", two_way,
       preds.scores.scores.rows() * cfg.metrics.nway_trials},
      {"matching_ratio", cfg.metrics.subject, "all", r_m,
       static_cast<Eigen::Index>(preds.gt_masks.size())},
      {"ssim", cfg.metrics.subject, "mean", mean_ssim,
       static_cast<Eigen::Index>(preds.gt_images.size())},
  };
  write_text_atomic(out / "eval" / "image_metrics.csv",
                    metrics_csv(image_rows));
  write_text_atomic(out / "eval" / "motion_metrics.csv",
                    metrics_csv(motion_rows));

  // 7. Differential encoding on the preprocessed series.
  const Embeddings emb = export_embeddings(ds);
  const EncodingReport enc =
      run_encoding(series, emb.e_sem, emb.e_spa, cfg.encoding.params);
  write_encoding_outputs(out / "encoding", enc);
  const EncodingLayout layout = encoding_layout(ds);
  Eigen::Index agree = 0, judged = 0;
  for (std::size_t j = 0; j < layout.voxel_pixel.size(); ++j) {
    const double p = enc.p_spa(layout.voxel_pixel[j]);
    if (std::isnan(p) || p == 0.0) continue;
    ++judged;
    const bool dorsal = ds.stream_assignment[j] == Stream::dorsal;
    if ((p > 0.0) == dorsal) ++agree;
  }
  const double sign_agreement =
      judged > 0 ? static_cast<double>(agree) / static_cast<double>(judged)
                 : std::numeric_limits<double>::quiet_NaN();
  report << "p_spa sign agreement with planted streams: "
         << fmt_double(sign_agreement) << " (" << judged << " voxels)\n";

  nlohmann::ordered_json summary;
  summary["windows"] = {{"total", windows.size()},
                        {"scene_change_filtered", filtered}};
  summary["semantic"] = {{"n", n_eff},
                         {"k", cfg.metrics.nway_k},
                         {"nway_topk", nway},
                         {"2way_top1", two_way}};
  summary["spatial"] = {{"r_m", r_m}};
  summary["pixel"] = {{"ssim", mean_ssim}};
  auto buckets = nlohmann::ordered_json::array();
  for (const CoverageBucket& b : table) {
    buckets.push_back({{"threshold", b.threshold},
                       {"cosine", b.mean_similarity},
                       {"n", b.n_samples}});
  }
  summary["motion"] = {{"buckets", std::move(buckets)},
                       {"masked_cosine_full", cos_full},
                       {"masked_cosine_image_only", cos_ablated},
                       {"fmri_ablation_delta", cos_full - cos_ablated}};
  summary["encoding"] = {{"p_spa_sign_agreement", sign_agreement},
                         {"judged_voxels", judged},
                         {"lambda_sem", enc.lambda_sem},
                         {"lambda_spa", enc.lambda_spa}};
  write_text_atomic(out / "summary.json", summary.dump(2) + "\n");
  write_manifest(options, cfg, "demo");

  std::cout << "== demo summary (seed " << options.seed << ") ==\n"
            << report.str();
}

}  // namespace fmridec
