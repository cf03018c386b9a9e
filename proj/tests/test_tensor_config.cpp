#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fmridec/config.hpp"
#include "fmridec/rng.hpp"
#include "fmridec/tensor.hpp"

using namespace fmridec;

namespace {

std::filesystem::path temp_dir() {
  const auto dir =
      std::filesystem::temp_directory_path() / "fmridec_tensor_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("float64 matrix round-trips bit-exactly") {
  Eigen::MatrixXd m(3, 4);
  Rng rng(11);
  for (Eigen::Index r = 0; r < 3; ++r) {
    for (Eigen::Index c = 0; c < 4; ++c) m(r, c) = rng.normal();
  }
  const auto path = temp_dir() / "roundtrip.dftn";
  write_tensor(path, tensor_from_matrix(m));
  const Eigen::MatrixXd back = matrix_from_tensor(read_tensor(path), "m");
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 4);
  CHECK(back == m);
}

TEST_CASE("zero-dimensional scalar holds a single value") {
  Tensor t;
  t.shape = {};
  t.values = {42.5};
  const auto path = temp_dir() / "scalar.dftn";
  write_tensor(path, t);
  const Tensor back = read_tensor(path);
  CHECK(back.shape.empty());
  REQUIRE(back.values.size() == 1);
  CHECK(back.values[0] == 42.5);
}

TEST_CASE("every dtype round-trips") {
  Tensor t;
  t.shape = {5};
  t.values = {0.0, 1.0, 2.0, 3.0, 255.0};
  for (Dtype d : {Dtype::f64, Dtype::f32, Dtype::i32, Dtype::u8}) {
    t.dtype = d;
    const auto path = temp_dir() / "dtypes.dftn";
    write_tensor(path, t);
    const Tensor back = read_tensor(path);
    CHECK(back.dtype == d);
    CHECK(back.values == t.values);
  }
}

TEST_CASE("random tensors round-trip through the byte serializer") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t;
    t.shape = {1 + rng.integer(4), 1 + rng.integer(6)};
    t.values.resize(t.size());
    for (double& v : t.values) v = rng.normal();
    const auto bytes = serialize_tensor(t);
    const Tensor back = parse_tensor(bytes.data(), bytes.size());
    CHECK(back.shape == t.shape);
    CHECK(back.values == t.values);
  }
}

TEST_CASE("truncated payload names expected and actual byte counts") {
  Tensor t;
  t.shape = {4, 4};
  t.values.assign(16, 1.5);
  auto bytes = serialize_tensor(t);
  const std::size_t full = bytes.size();
  bytes.resize(bytes.size() - 13);
  try {
    parse_tensor(bytes.data(), bytes.size(), "payload");
    FAIL("expected truncation error");
  } catch (const ValidationError& e) {
    CHECK(e.code() == errc::truncated_payload);
    const std::string what = e.what();
    CHECK(what.find(std::to_string(full)) != std::string::npos);
    CHECK(what.find(std::to_string(full - 13)) != std::string::npos);
  }
}

TEST_CASE("bad magic, version and dtype are rejected with distinct codes") {
  Tensor t;
  t.shape = {2};
  t.values = {1.0, 2.0};
  const auto bytes = serialize_tensor(t);

  auto corrupted = bytes;
  corrupted[0] = 'X';
  try {
    parse_tensor(corrupted.data(), corrupted.size());
    FAIL("expected magic error");
  } catch (const ValidationError& e) {
    CHECK(e.code() == errc::bad_magic);
  }

  corrupted = bytes;
  corrupted[4] = 9;  // version
  try {
    parse_tensor(corrupted.data(), corrupted.size());
    FAIL("expected version error");
  } catch (const ValidationError& e) {
    CHECK(e.code() == errc::unsupported_version);
  }

  corrupted = bytes;
  corrupted[6] = 200;  // dtype code
  try {
    parse_tensor(corrupted.data(), corrupted.size());
    FAIL("expected dtype error");
  } catch (const ValidationError& e) {
    CHECK(e.code() == errc::dtype_mismatch);
  }
}

TEST_CASE("require_dtype reports both dtypes") {
  Tensor t;
  t.dtype = Dtype::f32;
  t.shape = {1};
  t.values = {0.0};
  try {
    require_dtype(t, Dtype::u8, "mask");
    FAIL("expected dtype mismatch");
  } catch (const ValidationError& e) {
    CHECK(e.code() == errc::dtype_mismatch);
    CHECK(std::string(e.what()).find("uint8") != std::string::npos);
    CHECK(std::string(e.what()).find("float32") != std::string::npos);
  }
}

TEST_CASE("config defaults apply when keys are absent") {
  const PipelineConfig cfg = parse_config(nlohmann::json::object());
  CHECK(cfg.synth.n_samples == 500);
  CHECK(cfg.codebook.n_vec == 40);
  CHECK(cfg.decoder.lambda2 == 1.0);
  CHECK(cfg.decoder.learning_rate == 0.01);
  CHECK(cfg.metrics.coverage_thresholds ==
        std::vector<double>{0.2, 0.3, 0.4, 0.5, 0.6});
  CHECK(cfg.encoding.params.pca_components == 128);
  CHECK(cfg.encoding.params.t_window == 30);
  CHECK(cfg.preprocess.stride() == cfg.preprocess.t_video_seconds);
}

TEST_CASE("unknown keys are rejected with their path") {
  const auto j = nlohmann::json::parse(R"({"preprocess": {"foo": 1}})");
  CHECK_THROWS_WITH_AS(parse_config(j),
                       doctest::Contains("preprocess.foo"), ValidationError);
  const auto top = nlohmann::json::parse(R"({"nonsense": {}})");
  CHECK_THROWS_WITH_AS(parse_config(top), doctest::Contains("nonsense"),
                       ValidationError);
}

TEST_CASE("type errors carry the offending path") {
  const auto j = nlohmann::json::parse(R"({"codebook": {"n_vec": "forty"}})");
  CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains("codebook.n_vec"),
                       ValidationError);
}

TEST_CASE("nested values parse into their sections") {
  const auto j = nlohmann::json::parse(R"({
    "synth": {"n_samples": 32, "grid": [8, 10], "noise_sigma": 0.0},
    "encoding": {"lambda_grid": [0.5, 2.0], "t_window": 5},
    "preprocess": {"stride_seconds": 1.0, "fmri_runs": "one.dftn"}
  })");
  const PipelineConfig cfg = parse_config(j);
  CHECK(cfg.synth.n_samples == 32);
  CHECK(cfg.synth.grid_h == 8);
  CHECK(cfg.synth.grid_w == 10);
  CHECK(cfg.synth.noise_sigma == 0.0);
  CHECK(cfg.encoding.params.lambda_grid == std::vector<double>{0.5, 2.0});
  CHECK(cfg.encoding.params.t_window == 5);
  CHECK(cfg.preprocess.stride() == 1.0);
  REQUIRE(cfg.preprocess.fmri_runs.size() == 1);
  CHECK(cfg.preprocess.fmri_runs[0] == "one.dftn");
}
