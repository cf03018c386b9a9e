#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "fmridec/config.hpp"
#include "fmridec/preprocess.hpp"
#include "fmridec/tensor.hpp"

namespace fmridec {

struct RunOptions {
  std::filesystem::path config_path;  // empty -> defaults
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
};

// Subcommand entry points. Each writes its artifacts plus a manifest.json
// (config echo, seed, artifact hashes) under out_dir. Validation problems
// throw ValidationError, numerical failures NumericalError; the CLI front
// end maps those to exit codes 2 and 3.

void run_synth(const RunOptions& options);
void run_preprocess(const RunOptions& options);
void run_fit_codebook(const RunOptions& options);
void run_train_motion(const RunOptions& options);
void run_eval_image(const RunOptions& options);
void run_eval_motion(const RunOptions& options);
void run_encode(const RunOptions& options);
void run_demo(const RunOptions& options);

// Shared plumbing, exposed for tests.

/// Shortest round-trip decimal formatting (std::to_chars).
std::string fmt_double(double x);

/// FNV-1a 64-bit digest of a file's bytes, rendered as "fnv64:<hex>".
std::string fnv1a64_file(const std::filesystem::path& path);

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& text);

Tensor series_to_tensor(const FmriSeries& series);
FmriSeries series_from_tensor(const Tensor& t, double tr_seconds,
                              const std::string& what);

}  // namespace fmridec
