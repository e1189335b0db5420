#pragma once

// Post-processing of displacement ensembles: mean/variance curves, MSE and
// NMSE against a reference ensemble, first-passage failure times and their
// kernel density, and the two-sample Kolmogorov-Smirnov distance.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "deepfpft/trajectory.hpp"

namespace deepfpft {

enum class CrossingMode { abs, signed_upper };

CrossingMode crossing_mode_from(const std::string& name);
const char* crossing_mode_name(CrossingMode mode);

struct MeanVar {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // unbiased
};

/// Column-wise statistics of a samples x times matrix.
MeanVar mean_var(const Eigen::MatrixXd& samples);
MeanVar ensemble_mean_var(const TrajectoryEnsemble& ens, std::size_t dof);

double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& actual);
double ensemble_mse(const TrajectoryEnsemble& pred, const TrajectoryEnsemble& actual, std::size_t dof);

/// 100 * mean over samples of |pred_s - actual_s|^2 / |actual_s|^2.
double nmse_percent(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& actual);
double nmse_percent(const TrajectoryEnsemble& pred, const TrajectoryEnsemble& actual, std::size_t dof);

struct Passage {
  double time = 0.0;
  bool censored = false;
};

/// First grid time at which the series reaches the threshold.  A series
/// that never does is censored at the last grid time.
Passage first_passage_time(std::span<const double> series, std::span<const double> t_grid, double threshold,
                           CrossingMode mode = CrossingMode::abs);

struct KdeOptions {
  std::optional<double> lower;  // reflect kernel mass at these bounds
  std::optional<double> upper;
  double min_bandwidth = 0.0;
};

/// 0.9 * min(std, IQR/1.34) * n^(-1/5); std alone when the IQR is 0.
double silverman_bandwidth(std::span<const double> samples);

std::vector<double> kde_pdf(std::span<const double> samples, std::span<const double> grid,
                            const KdeOptions& options = {}, double* bandwidth_used = nullptr);

struct FpftResult {
  std::size_t dof = 0;
  double threshold = 0.0;
  CrossingMode mode = CrossingMode::abs;
  double t_end = 0.0;
  std::vector<double> failure_times;
  std::size_t censored_count = 0;
  double bandwidth = 0.0;
  std::vector<double> kde_grid;
  std::vector<double> kde_density;
};

inline constexpr std::size_t kKdePoints = 512;

FpftResult fpft_distribution(const TrajectoryEnsemble& ens, std::size_t dof, double threshold,
                             CrossingMode mode = CrossingMode::abs);
/// Same result computed on one thread.
FpftResult fpft_distribution_serial(const TrajectoryEnsemble& ens, std::size_t dof, double threshold,
                                    CrossingMode mode = CrossingMode::abs);

double ks_distance(std::span<const double> a, std::span<const double> b);

/// Linear-interpolation quantile (R type 7) of an unsorted sample.
double quantile(std::vector<double> values, double q);

/// q-quantile of the per-sample peak |displacement|.
double peak_quantile_threshold(const Eigen::MatrixXd& displacement, double q);

struct EvalReport {
  std::vector<double> t_grid;
  std::vector<std::size_t> dofs;
  std::vector<double> mse;
  std::vector<double> nmse_percent;
  std::vector<MeanVar> predicted;
  std::vector<MeanVar> actual;

  nlohmann::json summary() const;
};

/// Every DOF of `pred` is compared with the same DOF of `actual`.
EvalReport evaluate(const TrajectoryEnsemble& pred, const TrajectoryEnsemble& actual);

/// reports/eval.json plus mean_var_dof_NNN.csv per DOF under `dir`.
void write_eval_report(const EvalReport& report, const std::filesystem::path& dir);

/// `<prefix>_dof_NNN_times.csv` and `<prefix>_dof_NNN_kde.csv` under `dir`.
void write_fpft_result(const FpftResult& result, const std::filesystem::path& dir, const std::string& prefix);
nlohmann::json fpft_summary(const FpftResult& result);

}  // namespace deepfpft
