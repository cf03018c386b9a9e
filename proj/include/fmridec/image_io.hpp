#pragma once

#include <Eigen/Dense>
#include <filesystem>

namespace fmridec {

/// Binary PGM (P5), 8-bit. Values are clamped to [lo, hi] then scaled.
void write_pgm(const std::filesystem::path& path, const Eigen::ArrayXXd& img,
               double lo = 0.0, double hi = 1.0);

/// Binary PPM (P6) with a blue-white-red diverging palette over
/// [-limit, +limit]. NaN entries render mid-gray.
void write_diverging_ppm(const std::filesystem::path& path,
                         const Eigen::ArrayXXd& img, double limit);

}  // namespace fmridec
