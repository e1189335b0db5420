#pragma once

// Dense feed-forward networks written out by hand: Glorot initialization,
// fixed input standardization, forward pass, reverse-mode gradients, MSE
// loss and the Adam optimizer.
//
// Two forward/backward paths exist.  The single-sample path works on one
// input vector at a time and is the reference; the batched path pushes a
// whole minibatch through as matrix products (one column per sample) and is
// what training uses.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "deepfpft/rng.hpp"

namespace deepfpft {

enum class Activation { relu, identity };

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DenseLayer {
  Eigen::MatrixXd weights;  // fan_out x fan_in
  Eigen::VectorXd biases;   // fan_out
  Activation activation = Activation::relu;

  std::size_t fan_in() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t fan_out() const { return static_cast<std::size_t>(weights.rows()); }
};

/// x -> (x - mean) / stddev, per feature.  Fit once, never trained.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  static Standardizer identity(std::size_t width);
  std::size_t width() const { return static_cast<std::size_t>(mean.size()); }
};

/// Per-column mean and population standard deviation of `rows` (one sample
/// per row).  Columns whose deviation is below 1e-12 get stddev 1.
Standardizer standardizer_fit(const RowMatrix& rows);
Standardizer standardizer_fit(const Eigen::MatrixXd& rows);

/// fan_out x fan_in matrix of N(0, 2 / (fan_in + fan_out)) entries.
Eigen::MatrixXd glorot_normal_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<DenseLayer> layers, Standardizer standardizer);

  /// Layers of widths[0] -> widths[1] -> ... with Glorot-normal weights and
  /// zero biases; `hidden` on every layer but the last, `output` on the last.
  static Mlp glorot(std::span<const std::size_t> widths, Activation hidden, Activation output,
                    Rng& rng);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const Standardizer& standardizer() const { return standardizer_; }
  void set_standardizer(Standardizer s);

  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t parameter_count() const;

  /// Mutable views of every weight matrix and bias vector, layer by layer.
  std::vector<std::span<double>> parameter_spans();

 private:
  std::vector<DenseLayer> layers_;
  Standardizer standardizer_;
};

struct MlpCache {
  std::vector<Eigen::VectorXd> activations;  // standardized input, then each layer output
  std::vector<Eigen::VectorXd> pre;          // pre-activation of each layer
};

struct MlpForward {
  Eigen::VectorXd output;
  MlpCache cache;
};

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::VectorXd input;  // w.r.t. the raw (unstandardized) input

  static MlpGradients zeros_like(const Mlp& net);
  std::vector<std::span<const double>> spans() const;
  MlpGradients& operator+=(const MlpGradients& other);
};

MlpForward mlp_forward(const Mlp& net, const Eigen::VectorXd& x);
/// ReLU's derivative at exactly 0 is taken as 0.
MlpGradients mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::VectorXd& output_gradient);

struct MlpBatchCache {
  std::vector<Eigen::MatrixXd> activations;
  std::vector<Eigen::MatrixXd> pre;
};

/// x holds one sample per column; returns one output per column.
Eigen::MatrixXd mlp_forward_batch(const Mlp& net, const Eigen::MatrixXd& x, MlpBatchCache* cache = nullptr);
/// Adds the parameter gradients of the batch to `grads` (input gradient untouched).
void mlp_backward_batch(const Mlp& net, const MlpBatchCache& cache, Eigen::MatrixXd output_gradient,
                        MlpGradients& grads);

struct LossResult {
  double value = 0.0;
  Eigen::VectorXd gradient;  // d loss / d predicted
};

/// (1/N) sum (target - predicted)^2 and its gradient 2 (predicted - target) / N.
LossResult mse_loss(const Eigen::VectorXd& predicted, const Eigen::VectorXd& target);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update.  Moments are allocated on first use.
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state);

nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);
nlohmann::json adam_to_json(const AdamState& state);
AdamState adam_from_json(const nlohmann::json& j);

}  // namespace deepfpft
