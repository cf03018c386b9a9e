#include "fmridec/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace fmridec {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'T', 'N'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

template <typename T>
void append_raw(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_raw(const std::uint8_t* data, std::size_t& offset) {
  T value;
  std::memcpy(&value, data + offset, sizeof(T));
  offset += sizeof(T);
  return value;
}

template <typename T>
void append_payload(std::vector<std::uint8_t>& out,
                    const std::vector<double>& values) {
  for (double v : values) append_raw(out, static_cast<T>(v));
}

template <typename T>
void parse_payload(const std::uint8_t* data, std::size_t& offset,
                   std::uint64_t count, std::vector<double>& values) {
  values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    values[i] = static_cast<double>(read_raw<T>(data, offset));
  }
}

}  // namespace

std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f64: return 8;
    case Dtype::f32: return 4;
    case Dtype::i32: return 4;
    case Dtype::u8: return 1;
  }
  throw ValidationError(errc::dtype_mismatch, "unknown dtype code");
}

std::string dtype_name(Dtype d) {
  switch (d) {
    case Dtype::f64: return "float64";
    case Dtype::f32: return "float32";
    case Dtype::i32: return "int32";
    case Dtype::u8: return "uint8";
  }
  return "unknown";
}

std::vector<std::uint8_t> serialize_tensor(const Tensor& tensor) {
  if (tensor.values.size() != tensor.size()) {
    throw ValidationError(errc::alignment,
                          "tensor value count does not match its shape");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + 8 * tensor.shape.size() +
              tensor.values.size() * dtype_size(tensor.dtype));
  out.insert(out.end(), kMagic, kMagic + 4);
  append_raw(out, kVersion);
  append_raw(out, static_cast<std::uint8_t>(tensor.dtype));
  append_raw(out, static_cast<std::uint8_t>(tensor.shape.size()));
  for (auto s : tensor.shape) append_raw(out, s);
  switch (tensor.dtype) {
    case Dtype::f64: append_payload<double>(out, tensor.values); break;
    case Dtype::f32: append_payload<float>(out, tensor.values); break;
    case Dtype::i32: append_payload<std::int32_t>(out, tensor.values); break;
    case Dtype::u8: append_payload<std::uint8_t>(out, tensor.values); break;
  }
  return out;
}

Tensor parse_tensor(const std::uint8_t* data, std::size_t size,
                    const std::string& origin) {
  if (size < 8) {
    throw ValidationError(errc::truncated_payload,
                          origin + ": file shorter than the 8-byte header");
  }
  if (std::memcmp(data, kMagic, 4) != 0) {
    throw ValidationError(errc::bad_magic,
                          origin + ": bad magic, not a tensor container");
  }
  std::size_t offset = 4;
  const auto version = read_raw<std::uint16_t>(data, offset);
  if (version != kVersion) {
    throw ValidationError(errc::unsupported_version,
                          origin + ": unsupported container version " +
                              std::to_string(version));
  }
  const auto dtype_code = read_raw<std::uint8_t>(data, offset);
  if (dtype_code > 3) {
    throw ValidationError(errc::dtype_mismatch,
                          origin + ": unknown dtype code " +
                              std::to_string(dtype_code));
  }
  const auto dtype = static_cast<Dtype>(dtype_code);
  const auto ndim = read_raw<std::uint8_t>(data, offset);
  if (size < offset + 8u * ndim) {
    throw ValidationError(errc::truncated_payload,
                          origin + ": file ends inside the shape header");
  }
  Tensor t;
  t.dtype = dtype;
  t.shape.resize(ndim);
  for (std::uint8_t i = 0; i < ndim; ++i) {
    t.shape[i] = read_raw<std::uint64_t>(data, offset);
  }
  const std::uint64_t count = t.size();
  const std::uint64_t expected = offset + count * dtype_size(dtype);
  if (size != expected) {
    throw ValidationError(
        errc::truncated_payload,
        origin + ": payload size mismatch, expected " +
            std::to_string(expected) + " bytes but file has " +
            std::to_string(size));
  }
  switch (dtype) {
    case Dtype::f64: parse_payload<double>(data, offset, count, t.values); break;
    case Dtype::f32: parse_payload<float>(data, offset, count, t.values); break;
    case Dtype::i32:
      parse_payload<std::int32_t>(data, offset, count, t.values);
      break;
    case Dtype::u8:
      parse_payload<std::uint8_t>(data, offset, count, t.values);
      break;
  }
  return t;
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError(errc::io, "cannot open tensor file " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_tensor(bytes.data(), bytes.size(), path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  const auto bytes = serialize_tensor(tensor);
  const auto tmp = path.parent_path() /
                   (path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw ValidationError(errc::io,
                            "cannot open " + tmp.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw ValidationError(errc::io, "short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

void require_dtype(const Tensor& t, Dtype d, const std::string& what) {
  if (t.dtype != d) {
    throw ValidationError(errc::dtype_mismatch,
                          what + ": expected dtype " + dtype_name(d) +
                              " but found " + dtype_name(t.dtype));
  }
}

void require_ndim(const Tensor& t, std::size_t ndim, const std::string& what) {
  if (t.shape.size() != ndim) {
    throw ValidationError(errc::alignment,
                          what + ": expected " + std::to_string(ndim) +
                              "-d tensor, found " +
                              std::to_string(t.shape.size()) + "-d");
  }
}

Tensor tensor_from_matrix(const Eigen::MatrixXd& m, Dtype dtype) {
  Tensor t;
  t.dtype = dtype;
  t.shape = {static_cast<std::uint64_t>(m.rows()),
             static_cast<std::uint64_t>(m.cols())};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(m(r, c));
  }
  return t;
}

Eigen::MatrixXd matrix_from_tensor(const Tensor& t, const std::string& what) {
  require_ndim(t, 2, what);
  const auto rows = static_cast<Eigen::Index>(t.shape[0]);
  const auto cols = static_cast<Eigen::Index>(t.shape[1]);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = t.values[static_cast<std::size_t>(r * cols + c)];
    }
  }
  return m;
}

Tensor tensor_from_vector(const Eigen::VectorXd& v, Dtype dtype) {
  Tensor t;
  t.dtype = dtype;
  t.shape = {static_cast<std::uint64_t>(v.size())};
  t.values.assign(v.data(), v.data() + v.size());
  return t;
}

Eigen::VectorXd vector_from_tensor(const Tensor& t, const std::string& what) {
  require_ndim(t, 1, what);
  return Eigen::Map<const Eigen::VectorXd>(
      t.values.data(), static_cast<Eigen::Index>(t.values.size()));
}

}  // namespace fmridec
