#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "fmridec/flow.hpp"
#include "fmridec/pipeline.hpp"
#include "fmridec/rng.hpp"
#include "fmridec/tensor.hpp"

using namespace fmridec;

namespace {

const std::filesystem::path kWork =
    std::filesystem::temp_directory_path() / "fmridec_cli_test";

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CommandResult run_cli(const std::string& args) {
  std::filesystem::create_directories(kWork);
  const auto log = kWork / "last_output.txt";
  const std::string cmd = std::string(FMRIDEC_BIN) + " " + args + " > " +
                          log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CommandResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::ostringstream text;
  text << in.rdbuf();
  result.output = text.str();
  return result;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2);
}

Tensor random_run_tensor(Eigen::Index frames, std::uint64_t seed) {
  Tensor t;
  t.shape = {static_cast<std::uint64_t>(frames), 2, 2};
  t.values.resize(t.size());
  Rng rng(seed);
  for (double& v : t.values) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("synth writes a dataset directory and a manifest") {
  const auto out = kWork / "synth_out";
  std::filesystem::remove_all(out);
  const auto cfg = kWork / "synth.json";
  write_json(cfg, nlohmann::json::parse(R"({"synth": {
      "n_samples": 24, "grid": [8, 8], "n_classes": 3,
      "n_voxels_per_stream": 20, "noise_sigma": 0.1}})"));
  const CommandResult r = run_cli("synth --config " + cfg.string() +
                                  " --seed 3 --out " + out.string());
  CHECK(r.exit_code == 0);
  CHECK(std::filesystem::exists(out / "dataset" / "manifest.json"));
  CHECK(std::filesystem::exists(out / "dataset" / "gt_flow.dftn"));
  CHECK(std::filesystem::exists(out / "manifest.json"));
  std::ifstream in(out / "manifest.json");
  nlohmann::json manifest;
  in >> manifest;
  CHECK(manifest.at("command") == "synth");
  CHECK(manifest.at("seed") == 3);
  CHECK(manifest.at("artifacts").size() > 0);
}

TEST_CASE("preprocess averages runs and emits the window manifest") {
  std::filesystem::create_directories(kWork);
  // Two 5-frame runs at TR 2 s: a 10 s recording paired with an 80-frame
  // 8 fps video and 2 s non-overlapping windows gives 5 samples.
  write_tensor(kWork / "run0.dftn", random_run_tensor(5, 11));
  write_tensor(kWork / "run1.dftn", random_run_tensor(5, 12));
  nlohmann::json cfg;
  cfg["preprocess"] = {
      {"fmri_runs", {(kWork / "run0.dftn").string(),
                     (kWork / "run1.dftn").string()}},
      {"shift_seconds", 0.0},
      {"video_n_frames", 80},
  };
  const auto cfg_path = kWork / "preprocess.json";
  write_json(cfg_path, cfg);
  const auto out = kWork / "preprocess_out";
  std::filesystem::remove_all(out);
  const CommandResult r = run_cli("preprocess --config " + cfg_path.string() +
                                  " --out " + out.string());
  CHECK(r.exit_code == 0);
  std::ifstream in(out / "windows.json");
  nlohmann::json windows;
  in >> windows;
  REQUIRE(windows.size() == 5);
  CHECK(windows[0].at("fmri_range")[0] == 0);
  CHECK(windows[0].at("video_range")[1] == 16);
  CHECK(windows[4].at("video_range")[0] == 64);
  CHECK(windows[0].at("valid") == true);
  CHECK(std::filesystem::exists(out / "series.dftn"));
}

TEST_CASE("fit-codebook emits a loadable zero-snapped codebook") {
  std::filesystem::create_directories(kWork);
  Tensor flows;
  flows.shape = {6, 8, 8, 2};
  flows.values.resize(flows.size());
  Rng rng(13);
  for (double& v : flows.values) v = rng.uniform(-4.0, 4.0);
  write_tensor(kWork / "flows.dftn", flows);
  nlohmann::json cfg;
  cfg["codebook"] = {{"flows", (kWork / "flows.dftn").string()},
                     {"n_vec", 6}};
  const auto cfg_path = kWork / "codebook.json";
  write_json(cfg_path, cfg);
  const auto out = kWork / "codebook_out";
  std::filesystem::remove_all(out);
  const CommandResult r = run_cli("fit-codebook --config " +
                                  cfg_path.string() + " --seed 5 --out " +
                                  out.string());
  CHECK(r.exit_code == 0);
  const Codebook cb = load_codebook(out / "codebook.json");
  CHECK(cb.n_vec() == 6);
  CHECK(cb.centroids.row(cb.zero_index).norm() == 0.0);
  CHECK(cb.seed == 5);
}

TEST_CASE("the synthetic chain runs through eval-motion and encode") {
  const auto base = kWork / "chain";
  std::filesystem::remove_all(base);
  nlohmann::json cfg;
  cfg["synth"] = {{"n_samples", 60},     {"grid", {8, 8}},
                  {"n_classes", 3},      {"n_voxels_per_stream", 30},
                  {"noise_sigma", 0.1}};
  cfg["codebook"] = {{"n_vec", 8},
                     {"dataset", (base / "data" / "dataset").string()}};
  cfg["decoder"] = {{"epochs", 4},
                    {"dataset", (base / "data" / "dataset").string()},
                    {"codebook", (base / "cb" / "codebook.json").string()}};
  cfg["metrics"] = {{"dataset", (base / "data" / "dataset").string()},
                    {"codebook", (base / "cb" / "codebook.json").string()},
                    {"decoder", (base / "train" / "decoder").string()}};
  cfg["encoding"] = {
      {"fmri", (base / "data" / "dataset" / "fmri_series.dftn").string()},
      {"e_sem", (base / "data" / "dataset" / "e_sem.dftn").string()},
      {"e_spa", (base / "data" / "dataset" / "e_spa.dftn").string()},
      {"pca_components", 3},
      {"t_window", 4},
      {"smooth_sigma", 0.0}};
  const auto cfg_path = base / "chain.json";
  write_json(cfg_path, cfg);
  const std::string common = " --config " + cfg_path.string() + " --seed 2";

  CHECK(run_cli("synth" + common + " --out " + (base / "data").string())
            .exit_code == 0);
  CHECK(run_cli("fit-codebook" + common + " --out " + (base / "cb").string())
            .exit_code == 0);
  CHECK(run_cli("train-motion" + common + " --out " +
                (base / "train").string())
            .exit_code == 0);
  CHECK(std::filesystem::exists(base / "train" / "loss_history.csv"));
  CHECK(std::filesystem::exists(base / "train" / "decoder" / "w_head.dftn"));

  const CommandResult em = run_cli("eval-motion" + common + " --out " +
                                   (base / "motion").string());
  CHECK(em.exit_code == 0);
  // One CSV row per coverage threshold, after the header.
  std::ifstream csv(base / "motion" / "motion_metrics.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "metric,subject,param,value,n");
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  REQUIRE(rows.size() == 5);
  const std::vector<std::string> thresholds = {"0.2", "0.3", "0.4", "0.5",
                                               "0.6"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].find("masked_cosine,synthetic," + thresholds[i] + ",") ==
          0);
  }

  const CommandResult enc = run_cli("encode" + common + " --out " +
                                    (base / "enc").string());
  CHECK(enc.exit_code == 0);
  CHECK(std::filesystem::exists(base / "enc" / "encoding.csv"));
  std::ifstream pgm(base / "enc" / "p_spa.pgm", std::ios::binary);
  std::string magic(2, '\0');
  pgm.read(magic.data(), 2);
  CHECK(magic == "P5");
  std::ifstream ppm(base / "enc" / "p_spa.ppm", std::ios::binary);
  ppm.read(magic.data(), 2);
  CHECK(magic == "P6");
}

TEST_CASE("a missing required key exits 2 and names the JSON path") {
  const CommandResult r =
      run_cli("eval-image --out " + (kWork / "missing_out").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("metrics.scores") != std::string::npos);
}

TEST_CASE("an unknown config key exits 2 and names the path") {
  const auto cfg_path = kWork / "unknown.json";
  write_json(cfg_path, nlohmann::json::parse(R"({"decoder": {"lr": 0.1}})"));
  const CommandResult r = run_cli("synth --config " + cfg_path.string() +
                                  " --out " + (kWork / "u_out").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("decoder.lr") != std::string::npos);
}

TEST_CASE("a corrupt tensor input exits 2") {
  std::filesystem::create_directories(kWork);
  {
    std::ofstream bad(kWork / "bad.dftn", std::ios::binary);
    bad << "not a tensor";
  }
  nlohmann::json cfg;
  cfg["preprocess"] = {{"fmri_runs", (kWork / "bad.dftn").string()},
                       {"video_n_frames", 16}};
  const auto cfg_path = kWork / "bad_config.json";
  write_json(cfg_path, cfg);
  const CommandResult r = run_cli("preprocess --config " + cfg_path.string() +
                                  " --out " + (kWork / "bad_out").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("bad magic") != std::string::npos);
}

TEST_CASE("invalid JSON in the config exits 2") {
  const auto cfg_path = kWork / "invalid.json";
  {
    std::ofstream out(cfg_path, std::ios::trunc);
    out << "{ not json";
  }
  const CommandResult r = run_cli("synth --config " + cfg_path.string() +
                                  " --out " + (kWork / "i_out").string());
  CHECK(r.exit_code == 2);
}
