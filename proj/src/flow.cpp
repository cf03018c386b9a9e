#include "fmridec/flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fmridec/rng.hpp"

namespace fmridec {

FlowField make_flow(Eigen::Index height, Eigen::Index width) {
  FlowField f;
  f.u = Eigen::ArrayXXd::Zero(height, width);
  f.v = Eigen::ArrayXXd::Zero(height, width);
  return f;
}

void validate_flow(const FlowField& flow) {
  if (flow.u.rows() != flow.v.rows() || flow.u.cols() != flow.v.cols()) {
    throw ValidationError(errc::alignment,
                          "flow field u/v planes differ in shape");
  }
  if (!flow.u.allFinite() || !flow.v.allFinite()) {
    throw ValidationError(errc::alignment,
                          "flow field contains non-finite entries");
  }
  if (flow.valid_mask &&
      (flow.valid_mask->rows() != flow.u.rows() ||
       flow.valid_mask->cols() != flow.u.cols())) {
    throw ValidationError(errc::alignment,
                          "flow validity mask shape differs from vectors");
  }
}

Vectors2 flatten_flow(const FlowField& flow) {
  validate_flow(flow);
  Vectors2 out(flow.height() * flow.width(), 2);
  Eigen::Index row = 0;
  for (Eigen::Index h = 0; h < flow.height(); ++h) {
    for (Eigen::Index w = 0; w < flow.width(); ++w, ++row) {
      out(row, 0) = flow.u(h, w);
      out(row, 1) = flow.v(h, w);
    }
  }
  return out;
}

void validate_codebook(const Codebook& codebook) {
  const Eigen::Index n = codebook.centroids.rows();
  if (n < 2) {
    throw ValidationError(errc::degenerate_input,
                          "codebook needs at least 2 centroids");
  }
  if (codebook.zero_index < 0 || codebook.zero_index >= n) {
    throw ValidationError(errc::configuration,
                          "codebook zero_index out of range");
  }
  if (!codebook.centroids.allFinite()) {
    throw ValidationError(errc::alignment,
                          "codebook centroids contain non-finite entries");
  }
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      if (codebook.centroids.row(a) == codebook.centroids.row(b)) {
        throw ValidationError(errc::degenerate_input,
                              "codebook centroids are not pairwise distinct");
      }
    }
  }
}

namespace {

Eigen::Index count_distinct(const Vectors2& points) {
  std::vector<std::pair<double, double>> v(
      static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    v[static_cast<std::size_t>(i)] = {points(i, 0), points(i, 1)};
  }
  std::sort(v.begin(), v.end());
  return static_cast<Eigen::Index>(
      std::unique(v.begin(), v.end()) - v.begin());
}

double squared_distance(const Vectors2& points, Eigen::Index i,
                        const Eigen::RowVector2d& c) {
  const double du = points(i, 0) - c(0);
  const double dv = points(i, 1) - c(1);
  return du * du + dv * dv;
}

/// k-means++: first centroid uniform, the rest sampled with probability
/// proportional to the squared distance to the nearest chosen centroid.
Vectors2 seed_centroids(const Vectors2& points, int n_vec, Rng& rng) {
  const Eigen::Index n_points = points.rows();
  Vectors2 centroids(n_vec, 2);
  centroids.row(0) = points.row(
      static_cast<Eigen::Index>(rng.integer(static_cast<std::uint64_t>(n_points))));
  Eigen::VectorXd best_d2(n_points);
  for (Eigen::Index i = 0; i < n_points; ++i) {
    best_d2(i) = squared_distance(points, i, centroids.row(0));
  }
  for (int c = 1; c < n_vec; ++c) {
    const double total = best_d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      pick = n_points - 1;
      for (Eigen::Index i = 0; i < n_points; ++i) {
        cumulative += best_d2(i);
        if (cumulative > target) {
          pick = i;
          break;
        }
      }
    } else {
      // All remaining mass is on already-chosen points; fall back to uniform.
      pick = static_cast<Eigen::Index>(
          rng.integer(static_cast<std::uint64_t>(n_points)));
    }
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n_points; ++i) {
      best_d2(i) =
          std::min(best_d2(i), squared_distance(points, i, centroids.row(c)));
    }
  }
  return centroids;
}

}  // namespace

Codebook fit_codebook(const std::vector<FlowField>& flows, int n_vec,
                      std::uint64_t seed, int max_iters, double tol,
                      KMeansTrace* trace) {
  if (n_vec < 2) {
    throw ValidationError(errc::configuration,
                          "fit_codebook: n_vec must be at least 2");
  }
  if (max_iters < 1) {
    throw ValidationError(errc::configuration,
                          "fit_codebook: max_iters must be at least 1");
  }
  Eigen::Index total = 0;
  for (const FlowField& f : flows) {
    validate_flow(f);
    total += f.height() * f.width();
  }
  if (total < n_vec) {
    throw ValidationError(errc::degenerate_input,
                          "fit_codebook: fewer vectors than clusters");
  }
  Vectors2 points(total, 2);
  Eigen::Index row = 0;
  for (const FlowField& f : flows) {
    const Eigen::Index n = f.height() * f.width();
    points.middleRows(row, n) = flatten_flow(f);
    row += n;
  }
  if (count_distinct(points) < n_vec) {
    throw ValidationError(
        errc::degenerate_input,
        "fit_codebook: fewer distinct vectors than the requested " +
            std::to_string(n_vec) + " clusters");
  }

  Rng rng(seed);
  Vectors2 centroids = seed_centroids(points, n_vec, rng);
  const Eigen::Index n_points = points.rows();
  std::vector<Eigen::Index> assignment(static_cast<std::size_t>(n_points), 0);

  double prev_inertia = std::numeric_limits<double>::infinity();
  KMeansTrace local_trace;
  KMeansTrace& tr = trace ? *trace : local_trace;
  tr = KMeansTrace{};

  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment step; ties go to the lowest centroid index.
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n_points; ++i) {
      double best = squared_distance(points, i, centroids.row(0));
      Eigen::Index best_c = 0;
      for (int c = 1; c < n_vec; ++c) {
        const double d2 = squared_distance(points, i, centroids.row(c));
        if (d2 < best) {
          best = d2;
          best_c = c;
        }
      }
      assignment[static_cast<std::size_t>(i)] = best_c;
      inertia += best;
    }
    if (inertia > prev_inertia * (1.0 + 1e-12) + 1e-12) {
      throw NumericalError(errc::solver_failure,
                           "fit_codebook: inertia increased across a Lloyd "
                           "iteration");
    }
    tr.inertia.push_back(inertia);
    tr.iterations = iter + 1;

    // Update step.
    Vectors2 sums = Vectors2::Zero(n_vec, 2);
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_vec);
    for (Eigen::Index i = 0; i < n_points; ++i) {
      const Eigen::Index c = assignment[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      counts(c) += 1;
    }
    for (int c = 0; c < n_vec; ++c) {
      if (counts(c) > 0) {
        centroids.row(c) = sums.row(c) / counts(c);
      } else {
        // Reseed an emptied cluster at the point farthest from its current
        // centroid.
        double worst = -1.0;
        Eigen::Index worst_i = 0;
        for (Eigen::Index i = 0; i < n_points; ++i) {
          const double d2 = squared_distance(
              points, i,
              centroids.row(assignment[static_cast<std::size_t>(i)]));
          if (d2 > worst) {
            worst = d2;
            worst_i = i;
          }
        }
        centroids.row(c) = points.row(worst_i);
      }
    }

    if (prev_inertia < std::numeric_limits<double>::infinity()) {
      const double denom = std::max(prev_inertia, 1e-300);
      if (std::abs(prev_inertia - inertia) / denom < tol) {
        tr.converged = true;
        prev_inertia = inertia;
        break;
      }
    }
    prev_inertia = inertia;
  }

  // Stable norm-ascending order keeps the zero cluster at a predictable
  // index across runs.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_vec));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) {
              const double na = centroids.row(a).squaredNorm();
              const double nb = centroids.row(b).squaredNorm();
              if (na != nb) return na < nb;
              if (centroids(a, 0) != centroids(b, 0)) {
                return centroids(a, 0) < centroids(b, 0);
              }
              return centroids(a, 1) < centroids(b, 1);
            });
  Codebook cb;
  cb.centroids.resize(n_vec, 2);
  for (int c = 0; c < n_vec; ++c) {
    cb.centroids.row(c) = centroids.row(order[static_cast<std::size_t>(c)]);
  }
  cb.zero_index = 0;
  cb.seed = seed;
  validate_codebook(cb);
  return cb;
}

Codebook zero_snap(Codebook codebook) {
  validate_codebook(codebook);
  Eigen::Index shortest = 0;
  double best = codebook.centroids.row(0).squaredNorm();
  for (Eigen::Index c = 1; c < codebook.centroids.rows(); ++c) {
    const double n = codebook.centroids.row(c).squaredNorm();
    if (n < best) {
      best = n;
      shortest = c;
    }
  }
  codebook.centroids.row(shortest) = Eigen::RowVector2d::Zero();
  codebook.zero_index = static_cast<int>(shortest);
  return codebook;
}

QuantizeResult quantize(const FlowField& flow, const Codebook& codebook) {
  validate_flow(flow);
  validate_codebook(codebook);
  QuantizeResult result;
  result.labels.resize(flow.height(), flow.width());
  result.quantized = flow;
  const int n_vec = codebook.n_vec();
  for (Eigen::Index h = 0; h < flow.height(); ++h) {
    for (Eigen::Index w = 0; w < flow.width(); ++w) {
      const double ou = flow.u(h, w);
      const double ov = flow.v(h, w);
      double best = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (int c = 0; c < n_vec; ++c) {
        const double du = ou - codebook.centroids(c, 0);
        const double dv = ov - codebook.centroids(c, 1);
        const double d2 = du * du + dv * dv;
        if (d2 < best) {
          best = d2;
          best_c = c;
        }
      }
      result.labels(h, w) = best_c;
      result.quantized.u(h, w) = codebook.centroids(best_c, 0);
      result.quantized.v(h, w) = codebook.centroids(best_c, 1);
    }
  }
  return result;
}

std::vector<FlowField> extend_flow(const FlowField& flow, int n_frames) {
  validate_flow(flow);
  if (n_frames < 2) {
    throw ValidationError(errc::configuration,
                          "extend_flow: n_frames must be at least 2");
  }
  FlowField sub = flow;
  const double scale = 1.0 / (n_frames - 1);
  sub.u *= scale;
  sub.v *= scale;
  return std::vector<FlowField>(static_cast<std::size_t>(n_frames - 1), sub);
}

FlowField mask_flow(const FlowField& flow, const BoolGrid& foreground) {
  validate_flow(flow);
  if (foreground.rows() != flow.height() ||
      foreground.cols() != flow.width()) {
    throw ValidationError(errc::alignment,
                          "mask_flow: foreground mask shape differs from flow");
  }
  FlowField masked = flow;
  masked.u = foreground.select(flow.u, 0.0);
  masked.v = foreground.select(flow.v, 0.0);
  masked.valid_mask = foreground;
  return masked;
}

FlowField resample_flow(const FlowField& flow, Eigen::Index out_height,
                        Eigen::Index out_width) {
  validate_flow(flow);
  if (out_height < 1 || out_width < 1) {
    throw ValidationError(errc::configuration,
                          "resample_flow: output grid must be non-empty");
  }
  const Eigen::Index in_h = flow.height();
  const Eigen::Index in_w = flow.width();
  const double sy = static_cast<double>(in_h) / out_height;
  const double sx = static_cast<double>(in_w) / out_width;
  FlowField out = make_flow(out_height, out_width);
  const bool masked = flow.valid_mask.has_value();
  if (masked) out.valid_mask = BoolGrid::Constant(out_height, out_width, false);
  for (Eigen::Index oh = 0; oh < out_height; ++oh) {
    const double y0 = oh * sy;
    const double y1 = (oh + 1) * sy;
    for (Eigen::Index ow = 0; ow < out_width; ++ow) {
      const double x0 = ow * sx;
      const double x1 = (ow + 1) * sx;
      double wsum = 0.0, usum = 0.0, vsum = 0.0, mask_weight = 0.0;
      for (Eigen::Index ih = static_cast<Eigen::Index>(std::floor(y0));
           ih < in_h && ih < static_cast<Eigen::Index>(std::ceil(y1)); ++ih) {
        const double oy = std::min<double>(y1, ih + 1) - std::max<double>(y0, ih);
        if (oy <= 0.0) continue;
        for (Eigen::Index iw = static_cast<Eigen::Index>(std::floor(x0));
             iw < in_w && iw < static_cast<Eigen::Index>(std::ceil(x1)); ++iw) {
          const double ox =
              std::min<double>(x1, iw + 1) - std::max<double>(x0, iw);
          if (ox <= 0.0) continue;
          const double weight = oy * ox;
          wsum += weight;
          usum += weight * flow.u(ih, iw);
          vsum += weight * flow.v(ih, iw);
          if (masked && (*flow.valid_mask)(ih, iw)) mask_weight += weight;
        }
      }
      if (wsum > 0.0) {
        out.u(oh, ow) = usum / wsum;
        out.v(oh, ow) = vsum / wsum;
        if (masked) (*out.valid_mask)(oh, ow) = mask_weight >= 0.5 * wsum;
      }
    }
  }
  return out;
}

nlohmann::ordered_json codebook_to_json(const Codebook& codebook) {
  nlohmann::ordered_json j;
  auto centroids = nlohmann::ordered_json::array();
  for (Eigen::Index c = 0; c < codebook.centroids.rows(); ++c) {
    centroids.push_back({codebook.centroids(c, 0), codebook.centroids(c, 1)});
  }
  j["centroids"] = std::move(centroids);
  j["zero_index"] = codebook.zero_index;
  j["n_vec"] = codebook.n_vec();
  j["seed"] = codebook.seed;
  return j;
}

Codebook codebook_from_json(const nlohmann::json& j) {
  Codebook cb;
  const auto& centroids = j.at("centroids");
  cb.centroids.resize(static_cast<Eigen::Index>(centroids.size()), 2);
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    cb.centroids(static_cast<Eigen::Index>(c), 0) =
        centroids[c].at(0).get<double>();
    cb.centroids(static_cast<Eigen::Index>(c), 1) =
        centroids[c].at(1).get<double>();
  }
  cb.zero_index = j.at("zero_index").get<int>();
  cb.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("n_vec") && j.at("n_vec").get<int>() != cb.n_vec()) {
    throw ValidationError(errc::alignment,
                          "codebook JSON n_vec disagrees with centroid count");
  }
  validate_codebook(cb);
  return cb;
}

void save_codebook(const std::filesystem::path& path,
                   const Codebook& codebook) {
  const auto tmp =
      path.parent_path() / (path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) {
      throw ValidationError(errc::io,
                            "cannot open " + tmp.string() + " for writing");
    }
    out << codebook_to_json(codebook).dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError(errc::io,
                          "cannot open codebook file " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(errc::io,
                          path.string() + ": invalid JSON: " + e.what());
  }
  return codebook_from_json(j);
}

}  // namespace fmridec
