#include <cstdint>
#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fmridec/errors.hpp"
#include "fmridec/pipeline.hpp"

namespace {

using Runner = std::function<void(const fmridec::RunOptions&)>;

void add_command(CLI::App& app, const std::string& name,
                 const std::string& description, Runner runner, int& exit_code) {
  auto options = std::make_shared<fmridec::RunOptions>();
  auto config = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>("out");
  CLI::App* cmd = app.add_subcommand(name, description);
  cmd->add_option("--config", *config, "pipeline config JSON");
  cmd->add_option("--seed", options->seed, "master seed (default 0)");
  cmd->add_option("--out", *out, "output directory (default ./out)");
  cmd->callback([options, config, out, runner, &exit_code]() {
    options->config_path = *config;
    options->out_dir = *out;
    try {
      runner(*options);
    } catch (const fmridec::ValidationError& e) {
      std::cerr << "error: " << e.what() << "\n";
      exit_code = 2;
    } catch (const fmridec::NumericalError& e) {
      std::cerr << "numerical failure: " << e.what() << "\n";
      exit_code = 3;
    } catch (const std::exception& e) {
      std::cerr << "internal error: " << e.what() << "\n";
      exit_code = 3;
    }
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmridec: decomposed fMRI-to-video decoding toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;
  add_command(app, "synth", "generate a synthetic dataset with planted truth",
              fmridec::run_synth, exit_code);
  add_command(app, "preprocess",
              "z-transform, run averaging, hemodynamic shift, windowing",
              fmridec::run_preprocess, exit_code);
  add_command(app, "fit-codebook", "fit the flow quantization codebook",
              fmridec::run_fit_codebook, exit_code);
  add_command(app, "train-motion", "train the motion decoder",
              fmridec::run_train_motion, exit_code);
  add_command(app, "eval-image",
              "semantic/spatial/pixel metrics from score and image files",
              fmridec::run_eval_image, exit_code);
  add_command(app, "eval-motion", "coverage-bucketed flow cosine table",
              fmridec::run_eval_motion, exit_code);
  add_command(app, "encode", "differential neural encoding report and maps",
              fmridec::run_encode, exit_code);
  add_command(app, "demo", "synthetic end-to-end run with summary",
              fmridec::run_demo, exit_code);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are validation errors
  }
  return exit_code;
}
