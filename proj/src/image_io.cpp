#include "fmridec/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "fmridec/errors.hpp"

namespace fmridec {

namespace {

void write_binary_atomic(const std::filesystem::path& path,
                         const std::string& header,
                         const std::vector<std::uint8_t>& payload) {
  const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw ValidationError(errc::io,
                            "cannot open " + tmp.string() + " for writing");
    }
    out << header;
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
  }
  std::filesystem::rename(tmp, path);
}

std::uint8_t to_byte(double x) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Eigen::ArrayXXd& img,
               double lo, double hi) {
  if (!(hi > lo)) {
    throw ValidationError(errc::configuration, "write_pgm: hi must exceed lo");
  }
  std::vector<std::uint8_t> payload;
  payload.reserve(static_cast<std::size_t>(img.size()));
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      const double x = img(r, c);
      payload.push_back(std::isnan(x) ? 0
                                      : to_byte((x - lo) / (hi - lo)));
    }
  }
  const std::string header = "P5\n" + std::to_string(img.cols()) + " " +
                             std::to_string(img.rows()) + "\n255\n";
  write_binary_atomic(path, header, payload);
}

void write_diverging_ppm(const std::filesystem::path& path,
                         const Eigen::ArrayXXd& img, double limit) {
  if (!(limit > 0.0)) {
    throw ValidationError(errc::configuration,
                          "write_diverging_ppm: limit must be positive");
  }
  std::vector<std::uint8_t> payload;
  payload.reserve(static_cast<std::size_t>(img.size()) * 3);
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      const double x = img(r, c);
      if (std::isnan(x)) {
        payload.insert(payload.end(), {128, 128, 128});
        continue;
      }
      const double t = std::clamp(x / limit, -1.0, 1.0);
      if (t >= 0.0) {  // white -> red
        payload.push_back(255);
        payload.push_back(to_byte(1.0 - t));
        payload.push_back(to_byte(1.0 - t));
      } else {  // white -> blue
        payload.push_back(to_byte(1.0 + t));
        payload.push_back(to_byte(1.0 + t));
        payload.push_back(255);
      }
    }
  }
  const std::string header = "P6\n" + std::to_string(img.cols()) + " " +
                             std::to_string(img.rows()) + "\n255\n";
  write_binary_atomic(path, header, payload);
}

}  // namespace fmridec
