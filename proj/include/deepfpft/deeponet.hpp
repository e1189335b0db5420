#pragma once

// Unstacked DeepONet: a branch MLP encodes the discretized forcing history,
// a trunk MLP encodes the query time, and their inner product is the
// predicted displacement of one DOF.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "deepfpft/forcing.hpp"
#include "deepfpft/neuralnet.hpp"
#include "deepfpft/trajectory.hpp"

namespace deepfpft {

/// Rows of (force vector, time, displacement).  Each group of `pps`
/// consecutive rows belongs to one sample and repeats its force vector.
struct TripletDataset {
  RowMatrix branch_inputs;             // n_rows x branch width
  Eigen::VectorXd trunk_inputs;        // n_rows, seconds
  Eigen::VectorXd targets;             // n_rows, meters
  std::vector<std::size_t> sample_ids; // n_rows
  std::vector<std::size_t> time_indices;
  double t_end = 0.0;
  std::size_t pps = 0;
  std::size_t dof = 0;

  std::size_t size() const { return static_cast<std::size_t>(targets.size()); }
};

/// For every sample draws `pps` grid times uniformly at random (distinct
/// while pps does not exceed the grid size) and pairs them with the
/// simulated displacement of `dof` at those times.
TripletDataset assemble_triplets(const ForceEnsemble& forces, const TrajectoryEnsemble& trajectories,
                                 std::size_t dof, std::size_t pps, Rng& rng,
                                 std::size_t branch_width = 100);

struct OperatorConfig {
  std::vector<std::size_t> branch_widths{100, 40, 40};
  std::vector<std::size_t> trunk_widths{1, 40, 40};
  /// The branch's last layer is linear so the inner product can take either
  /// sign; the trunk's last layer keeps ReLU.
  Activation branch_output = Activation::identity;
  Activation trunk_output = Activation::relu;
  bool output_bias = false;

  nlohmann::json to_json() const;
  static OperatorConfig from_json(const nlohmann::json& j);
};

struct LossPoint {
  std::uint64_t step = 0;
  double loss = 0.0;
};

struct OperatorNet {
  Mlp branch;
  Mlp trunk;
  std::size_t output_dof = 0;
  bool use_output_bias = false;
  double output_bias = 0.0;
  double t_end = 0.0;
  std::vector<LossPoint> loss_history;
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::optional<AdamState> optimizer;

  static OperatorNet create(const OperatorConfig& config, std::size_t output_dof, Rng& rng);

  std::vector<std::span<double>> parameter_spans();
};

double deeponet_forward(const OperatorNet& model, const Eigen::VectorXd& force, double t);

struct OperatorGradients {
  MlpGradients branch;
  MlpGradients trunk;
  double bias = 0.0;
  double loss = 0.0;

  std::vector<std::span<const double>> spans() const;
};

/// MSE over the given rows and its exact gradient.  Rows are processed in
/// fixed 64-row chunks (in parallel) and the chunk sums are reduced in chunk
/// order, so the result is independent of the thread count.
OperatorGradients deeponet_gradients(const OperatorNet& model, const TripletDataset& data,
                                     std::span<const std::size_t> rows);
/// Row-by-row reference built from the single-sample forward/backward.
OperatorGradients deeponet_gradients_reference(const OperatorNet& model, const TripletDataset& data,
                                               std::span<const std::size_t> rows);

struct TrainConfig {
  std::uint64_t steps = 50000;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t pps = 100;
  std::uint64_t eval_every = 500;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainResult {
  OperatorNet model;
  std::vector<double> step_losses;  // minibatch loss of every step run
};

/// Adam on minibatches drawn by a per-epoch seeded shuffle.  A model without
/// optimizer state first gets its standardizers fit on the whole dataset; a
/// model carrying optimizer state resumes where it stopped, so training in
/// two legs is bitwise identical to one run of the combined length.
TrainResult train(OperatorNet model, const TripletDataset& data, const TrainConfig& config);

/// Predicted displacement-only ensemble for every model's DOF over t_grid.
TrajectoryEnsemble predict_ensemble(std::span<const OperatorNet> models, const ForceEnsemble& forces,
                                    const std::vector<double>& t_grid);
/// Single-threaded reference: one deeponet_forward per (sample, time).
TrajectoryEnsemble predict_ensemble_serial(std::span<const OperatorNet> models, const ForceEnsemble& forces,
                                           const std::vector<double>& t_grid);

nlohmann::json operator_to_json(const OperatorNet& model);
OperatorNet operator_from_json(const nlohmann::json& j);
void save_operator(const OperatorNet& model, const std::filesystem::path& path);
OperatorNet load_operator(const std::filesystem::path& path);
void write_loss_history(const OperatorNet& model, const std::filesystem::path& path);

}  // namespace deepfpft
