#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fmridec/errors.hpp"

namespace fmridec {

/// Element types of the on-disk tensor container. The u8 value is the wire
/// code.
enum class Dtype : std::uint8_t { f64 = 0, f32 = 1, i32 = 2, u8 = 3 };

std::size_t dtype_size(Dtype d);
std::string dtype_name(Dtype d);

/// N-dimensional row-major array. Values are held as doubles in memory
/// (every supported dtype embeds exactly into f64); `dtype` is what gets
/// written back out, so read(write(x)) round-trips bit-exactly.
struct Tensor {
  Dtype dtype = Dtype::f64;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  std::uint64_t size() const {
    std::uint64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
  std::uint64_t dim(std::size_t i) const { return shape.at(i); }
};

/// Reads a container file. Header is validated before any payload byte is
/// interpreted; failures carry errc::bad_magic, errc::unsupported_version,
/// errc::dtype_mismatch or errc::truncated_payload.
Tensor read_tensor(const std::filesystem::path& path);

/// Writes atomically (temp file in the same directory, then rename).
void write_tensor(const std::filesystem::path& path, const Tensor& tensor);

/// Serialize/parse against an in-memory byte buffer (the file functions are
/// thin wrappers over these).
std::vector<std::uint8_t> serialize_tensor(const Tensor& tensor);
Tensor parse_tensor(const std::uint8_t* data, std::size_t size,
                    const std::string& origin = "<memory>");

void require_dtype(const Tensor& t, Dtype d, const std::string& what);
void require_ndim(const Tensor& t, std::size_t ndim, const std::string& what);

// Eigen adapters. Matrices serialize row-major regardless of Eigen's
// in-memory storage order.

Tensor tensor_from_matrix(const Eigen::MatrixXd& m, Dtype dtype = Dtype::f64);
Eigen::MatrixXd matrix_from_tensor(const Tensor& t, const std::string& what);

Tensor tensor_from_vector(const Eigen::VectorXd& v, Dtype dtype = Dtype::f64);
Eigen::VectorXd vector_from_tensor(const Tensor& t, const std::string& what);

}  // namespace fmridec
