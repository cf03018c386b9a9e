#include "fmridec/decoder.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fmridec/rng.hpp"
#include "fmridec/tensor.hpp"

namespace fmridec {

namespace {

constexpr double kLogClamp = 1e-12;

void fill_uniform(Eigen::MatrixXd& m, double bound, Rng& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = rng.uniform(-bound, bound);
    }
  }
}

void check_pair(const MotionDecoder& d, const FeatureGrid& image_feat,
                const FeatureGrid& fmri_feat) {
  validate_feature_grid(image_feat);
  validate_feature_grid(fmri_feat);
  if (image_feat.height != fmri_feat.height ||
      image_feat.width != fmri_feat.width) {
    throw ValidationError(errc::alignment,
                          "image and fMRI feature grids differ in shape");
  }
  if (image_feat.depth() != d.hyper.d_img ||
      fmri_feat.depth() != d.hyper.d_fmri) {
    throw ValidationError(
        errc::configuration,
        "feature depths do not match the decoder dimensions");
  }
}

struct ForwardCache {
  Eigen::MatrixXd pre_img;   // cells x d_h, pre-activation
  Eigen::MatrixXd pre_fmri;
  Eigen::MatrixXd hidden;    // cells x 2*d_h, post-ReLU concatenation
  Eigen::MatrixXd probs;     // cells x n_vec
};

ForwardCache forward_cached(const MotionDecoder& d,
                            const FeatureGrid& image_feat,
                            const FeatureGrid& fmri_feat) {
  ForwardCache cache;
  const Eigen::Index cells = image_feat.cells();
  const int d_h = d.hyper.d_h;
  cache.pre_img =
      (image_feat.values * d.w_img).rowwise() + d.b_img;
  cache.pre_fmri =
      (fmri_feat.values * d.w_fmri).rowwise() + d.b_fmri;
  cache.hidden.resize(cells, 2 * d_h);
  cache.hidden.leftCols(d_h) = cache.pre_img.cwiseMax(0.0);
  cache.hidden.rightCols(d_h) = cache.pre_fmri.cwiseMax(0.0);
  Eigen::MatrixXd logits =
      (cache.hidden * d.w_head).rowwise() + d.b_head;
  // Row-wise softmax with max subtraction.
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  cache.probs = std::move(logits);
  return cache;
}

LossTerms loss_from_probs(const Eigen::MatrixXd& probs,
                          const Eigen::ArrayXXi& labels,
                          const FlowField& gt_flow, const Codebook& codebook,
                          double lambda2, Eigen::Index height,
                          Eigen::Index width) {
  const Eigen::Index cells = height * width;
  double entropy = 0.0;
  double mse = 0.0;
  for (Eigen::Index h = 0; h < height; ++h) {
    for (Eigen::Index w = 0; w < width; ++w) {
      const Eigen::Index cell = h * width + w;
      const int label = labels(h, w);
      entropy -= std::log(std::max(probs(cell, label), kLogClamp));
      const Eigen::RowVector2d expected =
          probs.row(cell) * codebook.centroids;
      const double du = gt_flow.u(h, w) - expected(0);
      const double dv = gt_flow.v(h, w) - expected(1);
      mse += du * du + dv * dv;
    }
  }
  LossTerms terms;
  terms.entropy = entropy / static_cast<double>(cells);
  terms.mse = mse / static_cast<double>(cells);
  terms.total = terms.entropy + lambda2 * terms.mse;
  return terms;
}

void check_sample(const MotionDecoder& d, const TrainingSample& s) {
  check_pair(d, s.image_feat, s.fmri_feat);
  if (s.labels.rows() != s.image_feat.height ||
      s.labels.cols() != s.image_feat.width) {
    throw ValidationError(errc::alignment,
                          "label grid shape differs from feature grids");
  }
  if (s.gt_flow.height() != s.image_feat.height ||
      s.gt_flow.width() != s.image_feat.width) {
    throw ValidationError(errc::alignment,
                          "ground-truth flow shape differs from feature grids");
  }
}

}  // namespace

void validate_feature_grid(const FeatureGrid& grid) {
  if (grid.height < 1 || grid.width < 1 || grid.depth() < 1) {
    throw ValidationError(errc::configuration,
                          "feature grid dimensions must be positive");
  }
  if (grid.values.rows() != grid.cells()) {
    throw ValidationError(errc::alignment,
                          "feature grid row count differs from H*W");
  }
  if (!grid.values.allFinite()) {
    throw ValidationError(errc::alignment,
                          "feature grid contains non-finite values");
  }
}

MotionDecoder init_decoder(int d_img, int d_fmri, int d_h, int n_vec,
                           std::uint64_t seed) {
  if (d_img < 1 || d_fmri < 1 || d_h < 1 || n_vec < 1) {
    throw ValidationError(errc::configuration,
                          "init_decoder: all dimensions must be >= 1");
  }
  MotionDecoder d;
  d.hyper.d_img = d_img;
  d.hyper.d_fmri = d_fmri;
  d.hyper.d_h = d_h;
  d.hyper.n_vec = n_vec;
  d.hyper.seed = seed;
  Rng rng(seed);
  d.w_img.resize(d_img, d_h);
  fill_uniform(d.w_img, 1.0 / std::sqrt(static_cast<double>(d_img)), rng);
  d.b_img = Eigen::RowVectorXd::Zero(d_h);
  d.w_fmri.resize(d_fmri, d_h);
  fill_uniform(d.w_fmri, 1.0 / std::sqrt(static_cast<double>(d_fmri)), rng);
  d.b_fmri = Eigen::RowVectorXd::Zero(d_h);
  d.w_head.resize(2 * d_h, n_vec);
  fill_uniform(d.w_head, 1.0 / std::sqrt(2.0 * d_h), rng);
  d.b_head = Eigen::RowVectorXd::Zero(n_vec);
  return d;
}

ProbGrid forward(const MotionDecoder& decoder, const FeatureGrid& image_feat,
                 const FeatureGrid& fmri_feat) {
  check_pair(decoder, image_feat, fmri_feat);
  ProbGrid out;
  out.height = image_feat.height;
  out.width = image_feat.width;
  out.probs = forward_cached(decoder, image_feat, fmri_feat).probs;
  return out;
}

FlowField expected_flow(const ProbGrid& probs, const Codebook& codebook) {
  validate_codebook(codebook);
  if (probs.probs.cols() != codebook.n_vec()) {
    throw ValidationError(errc::configuration,
                          "probability grid width differs from codebook size");
  }
  FlowField flow = make_flow(probs.height, probs.width);
  const Eigen::MatrixXd expected = probs.probs * codebook.centroids;
  for (Eigen::Index h = 0; h < probs.height; ++h) {
    for (Eigen::Index w = 0; w < probs.width; ++w) {
      flow.u(h, w) = expected(h * probs.width + w, 0);
      flow.v(h, w) = expected(h * probs.width + w, 1);
    }
  }
  return flow;
}

LossTerms loss(const ProbGrid& probs, const Eigen::ArrayXXi& labels,
               const FlowField& gt_flow, const Codebook& codebook,
               double lambda2) {
  if (labels.rows() != probs.height || labels.cols() != probs.width ||
      gt_flow.height() != probs.height || gt_flow.width() != probs.width) {
    throw ValidationError(errc::alignment,
                          "loss: label/flow shapes differ from the prob grid");
  }
  if (probs.probs.cols() != codebook.n_vec()) {
    throw ValidationError(errc::configuration,
                          "loss: probability grid width differs from codebook");
  }
  return loss_from_probs(probs.probs, labels, gt_flow, codebook, lambda2,
                         probs.height, probs.width);
}

DecoderGradients gradient(const MotionDecoder& decoder,
                          const std::vector<TrainingSample>& batch,
                          const Codebook& codebook) {
  LossTerms ignored;
  return gradient(decoder, batch, codebook, ignored);
}

DecoderGradients gradient(const MotionDecoder& decoder,
                          const std::vector<TrainingSample>& batch,
                          const Codebook& codebook, LossTerms& batch_loss) {
  if (batch.empty()) {
    throw ValidationError(errc::degenerate_input, "gradient: empty batch");
  }
  validate_codebook(codebook);
  const int d_h = decoder.hyper.d_h;
  const double lambda2 = decoder.hyper.lambda2;

  DecoderGradients g;
  g.w_img = Eigen::MatrixXd::Zero(decoder.w_img.rows(), decoder.w_img.cols());
  g.b_img = Eigen::RowVectorXd::Zero(decoder.b_img.cols());
  g.w_fmri =
      Eigen::MatrixXd::Zero(decoder.w_fmri.rows(), decoder.w_fmri.cols());
  g.b_fmri = Eigen::RowVectorXd::Zero(decoder.b_fmri.cols());
  g.w_head =
      Eigen::MatrixXd::Zero(decoder.w_head.rows(), decoder.w_head.cols());
  g.b_head = Eigen::RowVectorXd::Zero(decoder.b_head.cols());
  batch_loss = LossTerms{};

  for (const TrainingSample& sample : batch) {
    check_sample(decoder, sample);
    const Eigen::Index height = sample.image_feat.height;
    const Eigen::Index width = sample.image_feat.width;
    const Eigen::Index cells = height * width;
    const double cell_norm = 1.0 / static_cast<double>(cells);

    const ForwardCache cache =
        forward_cached(decoder, sample.image_feat, sample.fmri_feat);
    const LossTerms terms =
        loss_from_probs(cache.probs, sample.labels, sample.gt_flow, codebook,
                        lambda2, height, width);
    batch_loss.entropy += terms.entropy;
    batch_loss.mse += terms.mse;
    batch_loss.total += terms.total;

    // d(loss)/d(logits), both loss terms, averaged over cells.
    Eigen::MatrixXd dlogits = cache.probs * cell_norm;
    const Eigen::MatrixXd expected = cache.probs * codebook.centroids;
    for (Eigen::Index h = 0; h < height; ++h) {
      for (Eigen::Index w = 0; w < width; ++w) {
        const Eigen::Index cell = h * width + w;
        dlogits(cell, sample.labels(h, w)) -= cell_norm;
        if (lambda2 != 0.0) {
          const Eigen::RowVector2d residual(
              expected(cell, 0) - sample.gt_flow.u(h, w),
              expected(cell, 1) - sample.gt_flow.v(h, w));
          // d(|g - PB|^2)/d(z_c) = 2 p_c (B_c - O_hat) . (O_hat - g)
          const double base = residual.dot(expected.row(cell));
          for (int c = 0; c < codebook.n_vec(); ++c) {
            const double dir = residual.dot(codebook.centroids.row(c)) - base;
            dlogits(cell, c) +=
                lambda2 * cell_norm * 2.0 * cache.probs(cell, c) * dir;
          }
        }
      }
    }

    g.w_head.noalias() += cache.hidden.transpose() * dlogits;
    g.b_head += dlogits.colwise().sum();

    const Eigen::MatrixXd dhidden = dlogits * decoder.w_head.transpose();
    const Eigen::MatrixXd dpre_img =
        (cache.pre_img.array() > 0.0)
            .select(dhidden.leftCols(d_h).array(), 0.0)
            .matrix();
    const Eigen::MatrixXd dpre_fmri =
        (cache.pre_fmri.array() > 0.0)
            .select(dhidden.rightCols(d_h).array(), 0.0)
            .matrix();
    g.w_img.noalias() += sample.image_feat.values.transpose() * dpre_img;
    g.b_img += dpre_img.colwise().sum();
    g.w_fmri.noalias() += sample.fmri_feat.values.transpose() * dpre_fmri;
    g.b_fmri += dpre_fmri.colwise().sum();
  }

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  g.w_img *= inv_n;
  g.b_img *= inv_n;
  g.w_fmri *= inv_n;
  g.b_fmri *= inv_n;
  g.w_head *= inv_n;
  g.b_head *= inv_n;
  batch_loss.entropy *= inv_n;
  batch_loss.mse *= inv_n;
  batch_loss.total *= inv_n;
  return g;
}

TrainResult train(MotionDecoder decoder,
                  const std::vector<TrainingSample>& dataset,
                  const Codebook& codebook, int epochs, int batch_size,
                  double learning_rate, std::uint64_t seed) {
  if (dataset.empty()) {
    throw ValidationError(errc::degenerate_input, "train: empty dataset");
  }
  if (epochs < 0 || batch_size < 1) {
    throw ValidationError(errc::configuration,
                          "train: epochs must be >= 0, batch_size >= 1");
  }
  decoder.hyper.learning_rate = learning_rate;
  Rng rng(seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  result.history.reserve(static_cast<std::size_t>(epochs));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    EpochLoss epoch_loss;
    epoch_loss.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      std::vector<TrainingSample> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(dataset[order[i]]);
      }
      LossTerms batch_loss;
      const DecoderGradients g =
          gradient(decoder, batch, codebook, batch_loss);
      if (!std::isfinite(batch_loss.total)) {
        throw NumericalError(errc::divergence,
                             "training diverged at epoch " +
                                 std::to_string(epoch));
      }
      const double n = static_cast<double>(batch.size());
      epoch_loss.entropy += batch_loss.entropy * n;
      epoch_loss.mse += batch_loss.mse * n;
      epoch_loss.total += batch_loss.total * n;
      seen += batch.size();

      decoder.w_img -= learning_rate * g.w_img;
      decoder.b_img -= learning_rate * g.b_img;
      decoder.w_fmri -= learning_rate * g.w_fmri;
      decoder.b_fmri -= learning_rate * g.b_fmri;
      decoder.w_head -= learning_rate * g.w_head;
      decoder.b_head -= learning_rate * g.b_head;
    }
    const double inv = 1.0 / static_cast<double>(seen);
    epoch_loss.entropy *= inv;
    epoch_loss.mse *= inv;
    epoch_loss.total *= inv;
    result.history.push_back(epoch_loss);
  }
  result.decoder = std::move(decoder);
  return result;
}

void save_decoder(const std::filesystem::path& dir,
                  const MotionDecoder& decoder) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "w_img.dftn", tensor_from_matrix(decoder.w_img));
  write_tensor(dir / "b_img.dftn",
               tensor_from_vector(decoder.b_img.transpose()));
  write_tensor(dir / "w_fmri.dftn", tensor_from_matrix(decoder.w_fmri));
  write_tensor(dir / "b_fmri.dftn",
               tensor_from_vector(decoder.b_fmri.transpose()));
  write_tensor(dir / "w_head.dftn", tensor_from_matrix(decoder.w_head));
  write_tensor(dir / "b_head.dftn",
               tensor_from_vector(decoder.b_head.transpose()));
  nlohmann::ordered_json manifest;
  manifest["d_img"] = decoder.hyper.d_img;
  manifest["d_fmri"] = decoder.hyper.d_fmri;
  manifest["d_h"] = decoder.hyper.d_h;
  manifest["n_vec"] = decoder.hyper.n_vec;
  manifest["lambda2"] = decoder.hyper.lambda2;
  manifest["learning_rate"] = decoder.hyper.learning_rate;
  manifest["seed"] = decoder.hyper.seed;
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

MotionDecoder load_decoder(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw ValidationError(errc::io, "cannot open decoder manifest in " +
                                        dir.string());
  }
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(errc::io, dir.string() +
                                        "/manifest.json: invalid JSON: " +
                                        e.what());
  }
  MotionDecoder d;
  d.hyper.d_img = manifest.at("d_img").get<int>();
  d.hyper.d_fmri = manifest.at("d_fmri").get<int>();
  d.hyper.d_h = manifest.at("d_h").get<int>();
  d.hyper.n_vec = manifest.at("n_vec").get<int>();
  d.hyper.lambda2 = manifest.at("lambda2").get<double>();
  d.hyper.learning_rate = manifest.at("learning_rate").get<double>();
  d.hyper.seed = manifest.at("seed").get<std::uint64_t>();
  d.w_img = matrix_from_tensor(read_tensor(dir / "w_img.dftn"), "w_img");
  d.b_img =
      vector_from_tensor(read_tensor(dir / "b_img.dftn"), "b_img").transpose();
  d.w_fmri = matrix_from_tensor(read_tensor(dir / "w_fmri.dftn"), "w_fmri");
  d.b_fmri = vector_from_tensor(read_tensor(dir / "b_fmri.dftn"), "b_fmri")
                 .transpose();
  d.w_head = matrix_from_tensor(read_tensor(dir / "w_head.dftn"), "w_head");
  d.b_head = vector_from_tensor(read_tensor(dir / "b_head.dftn"), "b_head")
                 .transpose();
  if (d.w_img.rows() != d.hyper.d_img || d.w_img.cols() != d.hyper.d_h ||
      d.w_fmri.rows() != d.hyper.d_fmri || d.w_fmri.cols() != d.hyper.d_h ||
      d.w_head.rows() != 2 * d.hyper.d_h ||
      d.w_head.cols() != d.hyper.n_vec) {
    throw ValidationError(errc::alignment,
                          "decoder checkpoint tensors disagree with manifest");
  }
  return d;
}

}  // namespace fmridec
