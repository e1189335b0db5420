// deepfpft: command-line driver for the staged surrogate workflow.
//
//   deepfpft <simulate|train|predict|evaluate|fpft|pipeline> --config run.json
//            [--workspace DIR] [--force]
//
// Errors are reported as one JSON object on stderr, e.g.
//   {"error":"MissingArtifactError","message":"...","stage":"train"}

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "deepfpft/io.hpp"
#include "deepfpft/pipeline.hpp"

namespace {

using deepfpft::RunConfig;
namespace fs = std::filesystem;

void report_error(const std::string& kind, const std::string& message, const std::string& stage = {}) {
  nlohmann::json line{{"error", kind}, {"message", message}};
  if (!stage.empty()) line["stage"] = stage;
  std::cerr << line.dump() << std::endl;
}

fs::path resolve_workspace(const RunConfig& cfg, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (cfg.workspace) return *cfg.workspace;
  throw deepfpft::ConfigError("no workspace: pass --workspace or set 'workspace' in the config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeepONet surrogate and first-passage reliability workflow"};
  app.require_subcommand(1);

  std::string config_path, workspace_flag;
  bool force = false;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration (JSON, comments allowed)")->required();
    cmd->add_option("--workspace", workspace_flag, "artifact directory (overrides the config)");
    cmd->add_flag("--force", force, "rerun even when artifacts match the configuration");
  };

  auto* simulate = app.add_subcommand("simulate", "draw forces and integrate train/test trajectories");
  auto* train = app.add_subcommand("train", "train one operator network per configured DOF");
  auto* predict = app.add_subcommand("predict", "predict displacement ensembles with the trained models");
  auto* evaluate = app.add_subcommand("evaluate", "MSE, NMSE and mean/variance curves against simulation");
  auto* fpft = app.add_subcommand("fpft", "first-passage failure times, densities and KS distances");
  auto* pipeline = app.add_subcommand("pipeline", "run every stage, skipping those already up to date");
  for (auto* c : {simulate, train, predict, evaluate, fpft, pipeline}) add_common(c);

  bool resume = false;
  train->add_flag("--resume", resume, "continue training saved models from their optimizer state");

  std::string test_forcing, tag = "zsl";
  std::size_t n_samples = 1000;
  bool simulate_truth = false;
  predict->add_option("--test-forcing", test_forcing, "JSON file with a forcing spec to predict on instead");
  predict->add_option("--tag", tag, "output name under predictions/ for --test-forcing runs");
  predict->add_option("--n-samples", n_samples, "number of forces for --test-forcing runs");
  predict->add_flag("--simulate-truth", simulate_truth, "also integrate the system and report MSE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("UsageError", e.what());
    return 2;
  }

  std::string stage;
  try {
    const RunConfig cfg = RunConfig::load(config_path);
    const fs::path ws = resolve_workspace(cfg, workspace_flag);
    deepfpft::CommandOptions opts{force, &std::cout};
    if (simulate->parsed()) {
      stage = "simulate";
      deepfpft::cmd_simulate(cfg, ws, opts);
    } else if (train->parsed()) {
      stage = "train";
      deepfpft::cmd_train(cfg, ws, opts, resume);
    } else if (predict->parsed()) {
      stage = "predict";
      if (test_forcing.empty()) {
        deepfpft::cmd_predict(cfg, ws, opts);
      } else {
        deepfpft::PredictOverride spec;
        spec.tag = tag;
        spec.forcing = deepfpft::forcing_from_json(deepfpft::read_json(test_forcing));
        spec.n_samples = n_samples;
        spec.simulate_truth = simulate_truth;
        deepfpft::cmd_predict_override(cfg, ws, spec, opts);
      }
    } else if (evaluate->parsed()) {
      stage = "evaluate";
      deepfpft::cmd_evaluate(cfg, ws, opts);
    } else if (fpft->parsed()) {
      stage = "fpft";
      deepfpft::cmd_fpft(cfg, ws, opts);
    } else if (pipeline->parsed()) {
      deepfpft::cmd_pipeline(cfg, ws, opts);
    }
  } catch (const deepfpft::StageError& e) {
    report_error(e.kind(), e.what(), e.stage());
    return 1;
  } catch (const deepfpft::Error& e) {
    report_error(e.kind(), e.what(), stage);
    return 1;
  } catch (const std::exception& e) {
    report_error("InternalError", e.what(), stage);
    return 1;
  }
  return 0;
}
