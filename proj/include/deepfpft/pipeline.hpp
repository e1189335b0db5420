#pragma once

// Run configuration and the staged workflow behind the command-line tool:
// simulate -> train -> predict -> evaluate -> fpft.  Every stage writes into
// its own workspace directory and records a manifest of content hashes
// keyed by a hash of the configuration it depends on.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepfpft/deeponet.hpp"
#include "deepfpft/dynamics.hpp"
#include "deepfpft/errors.hpp"
#include "deepfpft/forcing.hpp"
#include "deepfpft/reliability.hpp"

namespace deepfpft {

struct SimulationSection {
  double dt_out = 0.01;
  std::size_t substeps = 1;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::vector<std::size_t> store_dofs;  // 0-based; defaults to the training DOFs
  bool store_velocity = false;
};

struct TrainingSection {
  std::vector<std::size_t> dofs;  // 0-based
  TrainConfig train;
  OperatorConfig architecture;
};

/// Extra prediction runs, e.g. the same models on a wider forcing band.
struct Scenario {
  std::string tag;
  ForcingSpec forcing;
  std::size_t n_samples = 0;
  bool simulate_truth = true;
};

struct GpSurface {
  std::vector<double> sigmas;
  std::vector<double> length_scales;
  std::size_t n_samples = 200;
};

struct PredictionSection {
  std::vector<Scenario> scenarios;
  std::optional<GpSurface> gp_surface;
};

struct ReliabilitySection {
  CrossingMode mode = CrossingMode::abs;
  double quantile = 0.95;
  std::vector<double> thresholds;  // empty: quantile rule over the training ensemble
};

struct RunConfig {
  std::string name;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> workspace;
  std::optional<SystemModel> system;  // always set by from_json
  ForcingSpec forcing;
  SimulationSection simulation;
  TrainingSection training;
  PredictionSection prediction;
  ReliabilitySection reliability;

  /// Paths inside the document resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);

  /// Canonical form of each section with defaults filled in; the basis of
  /// the stage hashes, so comments and key order never matter.
  nlohmann::json canonical() const;
};

std::string stage_hash(const RunConfig& config, const std::string& stage);

enum class StageStatus { ran, skipped };

struct CommandOptions {
  bool force = false;
  std::ostream* log = nullptr;
};

/// Ad-hoc prediction on a forcing spec the models were not trained on.
struct PredictOverride {
  std::string tag = "zsl";
  ForcingSpec forcing;
  std::size_t n_samples = 1000;
  bool simulate_truth = false;
};

/// Excludes concurrent invocations on one workspace.  The lock file is
/// created exclusively and removed on destruction.
class WorkspaceLock {
 public:
  explicit WorkspaceLock(const std::filesystem::path& workspace);
  ~WorkspaceLock();
  WorkspaceLock(const WorkspaceLock&) = delete;
  WorkspaceLock& operator=(const WorkspaceLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// A stage failure inside the pipeline; kind() is the underlying error's.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), "stage '" + stage + "': " + cause.what()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

StageStatus cmd_simulate(const RunConfig& config, const std::filesystem::path& workspace,
                         const CommandOptions& options = {});
/// With `resume`, existing models continue from their saved optimizer state
/// for another `training.steps` steps.
StageStatus cmd_train(const RunConfig& config, const std::filesystem::path& workspace,
                      const CommandOptions& options = {}, bool resume = false);
StageStatus cmd_predict(const RunConfig& config, const std::filesystem::path& workspace,
                        const CommandOptions& options = {});
/// Writes predictions/<tag>/ outside the stage manifest; always runs.
void cmd_predict_override(const RunConfig& config, const std::filesystem::path& workspace,
                          const PredictOverride& spec, const CommandOptions& options = {});
StageStatus cmd_evaluate(const RunConfig& config, const std::filesystem::path& workspace,
                         const CommandOptions& options = {});
StageStatus cmd_fpft(const RunConfig& config, const std::filesystem::path& workspace,
                     const CommandOptions& options = {});
void cmd_pipeline(const RunConfig& config, const std::filesystem::path& workspace,
                  const CommandOptions& options = {});

}  // namespace deepfpft
