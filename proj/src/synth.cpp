#include "fmridec/synth.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "fmridec/rng.hpp"
#include "fmridec/tensor.hpp"

namespace fmridec {

namespace {

// Fork indices for the dataset-level streams, far above any sample index.
constexpr std::uint64_t kSignatureStream = 0x100000000ULL;
constexpr std::uint64_t kVentralStream = 0x100000001ULL;
constexpr std::uint64_t kDorsalStream = 0x100000002ULL;
constexpr std::uint64_t kMixingStream = 0x100000003ULL;
constexpr std::uint64_t kJitterStream = 0x100000004ULL;

constexpr Eigen::Index kStreamGapRows = 4;

Eigen::MatrixXd random_normal_matrix(Eigen::Index rows, Eigen::Index cols,
                                     Rng rng, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal() * scale;
  }
  return m;
}

}  // namespace

void validate_synth_config(const SyntheticConfig& config) {
  if (config.n_samples < 1 || config.grid_h < 1 || config.grid_w < 1 ||
      config.n_classes < 1 || config.n_voxels_per_stream < 1 ||
      config.d_img < 2 || config.d_fmri < 1) {
    throw ValidationError(errc::configuration,
                          "synthetic config: all counts must be positive "
                          "(d_img needs >= 2 channels)");
  }
  if (config.noise_sigma < 0.0) {
    throw ValidationError(errc::configuration,
                          "synthetic config: noise_sigma must be >= 0");
  }
  if (!(config.speed_min > 0.0) || config.speed_max < config.speed_min) {
    throw ValidationError(errc::configuration,
                          "synthetic config: invalid speed range");
  }
  if (!(config.blob_sigma_min_frac > 0.0) ||
      config.blob_sigma_max_frac < config.blob_sigma_min_frac) {
    throw ValidationError(errc::configuration,
                          "synthetic config: invalid blob sigma range");
  }
}

SyntheticDataset generate(const SyntheticConfig& config) {
  validate_synth_config(config);
  const Eigen::Index h = config.grid_h;
  const Eigen::Index w = config.grid_w;
  const Eigen::Index cells = h * w;
  const Eigen::Index nvs = config.n_voxels_per_stream;
  const Eigen::Index n_voxels = 2 * nvs;
  const Rng base(config.seed);

  SyntheticDataset ds;
  ds.config = config;
  ds.class_signatures = random_normal_matrix(
      config.n_classes, config.d_img - 1, base.fork(kSignatureStream));
  ds.ventral_readout = random_normal_matrix(nvs, config.n_classes,
                                            base.fork(kVentralStream));
  ds.dorsal_readout =
      random_normal_matrix(nvs, 4, base.fork(kDorsalStream));
  ds.feature_mixing = random_normal_matrix(
      config.d_fmri, n_voxels, base.fork(kMixingStream),
      1.0 / std::sqrt(static_cast<double>(n_voxels)));
  ds.stream_assignment.assign(static_cast<std::size_t>(n_voxels),
                              Stream::ventral);
  for (Eigen::Index j = nvs; j < n_voxels; ++j) {
    ds.stream_assignment[static_cast<std::size_t>(j)] = Stream::dorsal;
  }

  ds.samples.reserve(static_cast<std::size_t>(config.n_samples));
  const double sigma_lo =
      config.blob_sigma_min_frac * std::min<Eigen::Index>(h, w);
  const double sigma_hi =
      config.blob_sigma_max_frac * std::min<Eigen::Index>(h, w);
  for (int i = 0; i < config.n_samples; ++i) {
    Rng rng = base.fork(static_cast<std::uint64_t>(i));
    SyntheticSample s;
    s.semantic_class = static_cast<int>(
        rng.integer(static_cast<std::uint64_t>(config.n_classes)));
    s.blob_sigma = rng.uniform(sigma_lo, sigma_hi);
    s.cx = rng.uniform(0.2, 0.8) * w;
    s.cy = rng.uniform(0.2, 0.8) * h;
    const double speed = rng.uniform(config.speed_min, config.speed_max);
    const double angle = rng.uniform(0.0, 6.283185307179586476925286766559);
    s.u = speed * std::cos(angle);
    s.v = speed * std::sin(angle);

    // Blob image, support mask, ground-truth flow.
    Eigen::ArrayXXd blob(h, w);
    s.fg_mask = BoolGrid::Constant(h, w, false);
    s.gt_flow = make_flow(h, w);
    const double support2 = 4.0 * s.blob_sigma * s.blob_sigma;
    for (Eigen::Index r = 0; r < h; ++r) {
      for (Eigen::Index c = 0; c < w; ++c) {
        const double dx = c - s.cx;
        const double dy = r - s.cy;
        const double d2 = dx * dx + dy * dy;
        blob(r, c) = std::exp(-d2 / (2.0 * s.blob_sigma * s.blob_sigma));
        if (d2 <= support2) {
          s.fg_mask(r, c) = true;
          s.gt_flow.u(r, c) = s.u;
          s.gt_flow.v(r, c) = s.v;
        }
      }
    }
    s.gt_flow.valid_mask = s.fg_mask;

    s.image_feat.height = h;
    s.image_feat.width = w;
    s.image_feat.source = FeatureGrid::Source::image;
    s.image_feat.values.resize(cells, config.d_img);
    for (Eigen::Index r = 0; r < h; ++r) {
      for (Eigen::Index c = 0; c < w; ++c) {
        const Eigen::Index cell = r * w + c;
        s.image_feat.values(cell, 0) = blob(r, c);
        for (int d = 1; d < config.d_img; ++d) {
          s.image_feat.values(cell, d) =
              blob(r, c) * ds.class_signatures(s.semantic_class, d - 1);
        }
      }
    }

    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(config.n_classes);
    onehot(s.semantic_class) = 1.0;
    const Eigen::Vector4d where(s.cx / w, s.cy / h, s.u, s.v);
    s.voxels.resize(n_voxels);
    s.voxels.head(nvs) = ds.ventral_readout * onehot;
    s.voxels.tail(nvs) = ds.dorsal_readout * where;
    for (Eigen::Index j = 0; j < n_voxels; ++j) {
      s.voxels(j) += config.noise_sigma * rng.normal();
    }

    s.fmri_feat.height = h;
    s.fmri_feat.width = w;
    s.fmri_feat.source = FeatureGrid::Source::fmri;
    const Eigen::VectorXd mixed = ds.feature_mixing * s.voxels;
    s.fmri_feat.values = mixed.transpose().replicate(cells, 1);

    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Embeddings export_embeddings(const SyntheticDataset& dataset) {
  if (dataset.samples.empty()) {
    throw ValidationError(errc::degenerate_input,
                          "export_embeddings: empty dataset");
  }
  const auto n = static_cast<Eigen::Index>(dataset.samples.size());
  const Eigen::Index d_e = std::max<Eigen::Index>(dataset.config.n_classes, 4);
  Rng jitter = Rng(dataset.config.seed).fork(kJitterStream);
  Embeddings emb;
  emb.e_sem = Eigen::MatrixXd::Zero(n, d_e);
  emb.e_spa = Eigen::MatrixXd::Zero(n, d_e);
  for (Eigen::Index i = 0; i < n; ++i) {
    const SyntheticSample& s = dataset.samples[static_cast<std::size_t>(i)];
    emb.e_sem(i, s.semantic_class) = 1.0;
    for (Eigen::Index d = 0; d < d_e; ++d) {
      emb.e_sem(i, d) += 1e-7 * jitter.uniform(-1.0, 1.0);
    }
    emb.e_spa(i, 0) = s.cx / dataset.config.grid_w;
    emb.e_spa(i, 1) = s.cy / dataset.config.grid_h;
    emb.e_spa(i, 2) = s.u;
    emb.e_spa(i, 3) = s.v;
  }
  return emb;
}

EncodingLayout encoding_layout(const SyntheticDataset& dataset) {
  const Eigen::Index nvs = dataset.config.n_voxels_per_stream;
  EncodingLayout layout;
  layout.width = static_cast<Eigen::Index>(
      std::ceil(std::sqrt(static_cast<double>(2 * nvs))));
  const Eigen::Index rows_per_stream =
      (nvs + layout.width - 1) / layout.width;
  layout.height = 2 * rows_per_stream + kStreamGapRows;
  layout.voxel_pixel.resize(static_cast<std::size_t>(2 * nvs));
  const Eigen::Index dorsal_offset =
      (rows_per_stream + kStreamGapRows) * layout.width;
  for (Eigen::Index j = 0; j < nvs; ++j) {
    layout.voxel_pixel[static_cast<std::size_t>(j)] = j;
    layout.voxel_pixel[static_cast<std::size_t>(nvs + j)] = dorsal_offset + j;
  }
  return layout;
}

FmriSeries encoding_series(const SyntheticDataset& dataset) {
  if (dataset.samples.empty()) {
    throw ValidationError(errc::degenerate_input,
                          "encoding_series: empty dataset");
  }
  const EncodingLayout layout = encoding_layout(dataset);
  FmriSeries series;
  series.height = layout.height;
  series.width = layout.width;
  series.tr_seconds = 2.0;
  series.run_id = "synthetic";
  series.data = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(dataset.samples.size()),
      layout.height * layout.width);
  for (std::size_t t = 0; t < dataset.samples.size(); ++t) {
    const Eigen::VectorXd& voxels = dataset.samples[t].voxels;
    for (Eigen::Index j = 0; j < voxels.size(); ++j) {
      series.data(static_cast<Eigen::Index>(t),
                  layout.voxel_pixel[static_cast<std::size_t>(j)]) = voxels(j);
    }
  }
  return series;
}

std::vector<FlowField> dataset_flows(const SyntheticDataset& dataset) {
  std::vector<FlowField> flows;
  flows.reserve(dataset.samples.size());
  for (const SyntheticSample& s : dataset.samples) flows.push_back(s.gt_flow);
  return flows;
}

std::vector<TrainingSample> training_samples(const SyntheticDataset& dataset,
                                             const Codebook& codebook) {
  std::vector<TrainingSample> out;
  out.reserve(dataset.samples.size());
  for (const SyntheticSample& s : dataset.samples) {
    TrainingSample t;
    t.image_feat = s.image_feat;
    t.fmri_feat = s.fmri_feat;
    t.gt_flow = s.gt_flow;
    t.labels = quantize(s.gt_flow, codebook).labels;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<TrainingSample> ablate_fmri(std::vector<TrainingSample> samples) {
  for (TrainingSample& s : samples) s.fmri_feat.values.setZero();
  return samples;
}

namespace {

Tensor stack_feature_grids(const SyntheticDataset& ds, bool image) {
  const auto& cfg = ds.config;
  const int depth = image ? cfg.d_img : cfg.d_fmri;
  Tensor t;
  t.dtype = Dtype::f64;
  t.shape = {static_cast<std::uint64_t>(ds.samples.size()),
             static_cast<std::uint64_t>(cfg.grid_h),
             static_cast<std::uint64_t>(cfg.grid_w),
             static_cast<std::uint64_t>(depth)};
  t.values.reserve(t.size());
  for (const SyntheticSample& s : ds.samples) {
    const Eigen::MatrixXd& v =
        image ? s.image_feat.values : s.fmri_feat.values;
    for (Eigen::Index cell = 0; cell < v.rows(); ++cell) {
      for (Eigen::Index d = 0; d < v.cols(); ++d) {
        t.values.push_back(v(cell, d));
      }
    }
  }
  return t;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir,
                  const SyntheticDataset& ds) {
  std::filesystem::create_directories(dir);
  const auto& cfg = ds.config;
  const auto n = static_cast<std::uint64_t>(ds.samples.size());
  const auto h = static_cast<std::uint64_t>(cfg.grid_h);
  const auto w = static_cast<std::uint64_t>(cfg.grid_w);

  write_tensor(dir / "image_feat.dftn", stack_feature_grids(ds, true));
  write_tensor(dir / "fmri_feat.dftn", stack_feature_grids(ds, false));

  Tensor flow{Dtype::f64, {n, h, w, 2}, {}};
  Tensor mask{Dtype::u8, {n, h, w}, {}};
  Tensor voxels{Dtype::f64,
                {n, static_cast<std::uint64_t>(ds.n_voxels())},
                {}};
  flow.values.reserve(flow.size());
  mask.values.reserve(mask.size());
  voxels.values.reserve(voxels.size());
  for (const SyntheticSample& s : ds.samples) {
    for (Eigen::Index r = 0; r < cfg.grid_h; ++r) {
      for (Eigen::Index c = 0; c < cfg.grid_w; ++c) {
        flow.values.push_back(s.gt_flow.u(r, c));
        flow.values.push_back(s.gt_flow.v(r, c));
        mask.values.push_back(s.fg_mask(r, c) ? 1.0 : 0.0);
      }
    }
    voxels.values.insert(voxels.values.end(), s.voxels.data(),
                         s.voxels.data() + s.voxels.size());
  }
  Tensor classes{Dtype::i32, {n}, {}};
  classes.values.reserve(classes.size());
  for (const SyntheticSample& s : ds.samples) {
    classes.values.push_back(static_cast<double>(s.semantic_class));
  }
  write_tensor(dir / "gt_flow.dftn", flow);
  write_tensor(dir / "fg_mask.dftn", mask);
  write_tensor(dir / "voxels.dftn", voxels);
  write_tensor(dir / "classes.dftn", classes);
  write_tensor(dir / "ventral_readout.dftn",
               tensor_from_matrix(ds.ventral_readout));
  write_tensor(dir / "dorsal_readout.dftn",
               tensor_from_matrix(ds.dorsal_readout));
  write_tensor(dir / "class_signatures.dftn",
               tensor_from_matrix(ds.class_signatures));
  write_tensor(dir / "feature_mixing.dftn",
               tensor_from_matrix(ds.feature_mixing));

  const Embeddings emb = export_embeddings(ds);
  write_tensor(dir / "e_sem.dftn", tensor_from_matrix(emb.e_sem));
  write_tensor(dir / "e_spa.dftn", tensor_from_matrix(emb.e_spa));

  nlohmann::ordered_json manifest;
  manifest["config"] = {
      {"n_samples", cfg.n_samples},
      {"grid", {cfg.grid_h, cfg.grid_w}},
      {"n_classes", cfg.n_classes},
      {"n_voxels_per_stream", cfg.n_voxels_per_stream},
      {"noise_sigma", cfg.noise_sigma},
      {"seed", cfg.seed},
      {"d_img", cfg.d_img},
      {"d_fmri", cfg.d_fmri},
      {"speed", {cfg.speed_min, cfg.speed_max}},
      {"blob_sigma_frac", {cfg.blob_sigma_min_frac, cfg.blob_sigma_max_frac}},
  };
  auto latents = nlohmann::ordered_json::array();
  for (const SyntheticSample& s : ds.samples) {
    latents.push_back({{"class", s.semantic_class},
                       {"cx", s.cx},
                       {"cy", s.cy},
                       {"u", s.u},
                       {"v", s.v},
                       {"blob_sigma", s.blob_sigma}});
  }
  manifest["latents"] = std::move(latents);
  auto streams = nlohmann::ordered_json::array();
  for (Stream st : ds.stream_assignment) {
    streams.push_back(static_cast<int>(st));
  }
  manifest["stream_assignment"] = std::move(streams);

  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) {
      throw ValidationError(errc::io,
                            "cannot open " + tmp.string() + " for writing");
    }
    out << manifest.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, dir / "manifest.json");
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw ValidationError(errc::io,
                          "cannot open dataset manifest in " + dir.string());
  }
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(errc::io, dir.string() +
                                        "/manifest.json: invalid JSON: " +
                                        e.what());
  }
  SyntheticConfig cfg;
  const auto& jc = manifest.at("config");
  cfg.n_samples = jc.at("n_samples").get<int>();
  cfg.grid_h = jc.at("grid").at(0).get<int>();
  cfg.grid_w = jc.at("grid").at(1).get<int>();
  cfg.n_classes = jc.at("n_classes").get<int>();
  cfg.n_voxels_per_stream = jc.at("n_voxels_per_stream").get<int>();
  cfg.noise_sigma = jc.at("noise_sigma").get<double>();
  cfg.seed = jc.at("seed").get<std::uint64_t>();
  cfg.d_img = jc.at("d_img").get<int>();
  cfg.d_fmri = jc.at("d_fmri").get<int>();
  cfg.speed_min = jc.at("speed").at(0).get<double>();
  cfg.speed_max = jc.at("speed").at(1).get<double>();
  cfg.blob_sigma_min_frac = jc.at("blob_sigma_frac").at(0).get<double>();
  cfg.blob_sigma_max_frac = jc.at("blob_sigma_frac").at(1).get<double>();
  // The generator is deterministic per config, so regeneration reproduces
  // the stored tensors bit-exactly.
  SyntheticDataset ds = generate(cfg);
  const auto& latents = manifest.at("latents");
  if (latents.size() != ds.samples.size()) {
    throw ValidationError(errc::alignment,
                          "dataset manifest latent count mismatch");
  }
  return ds;
}

}  // namespace fmridec
