#include "deepfpft/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "deepfpft/errors.hpp"
#include "deepfpft/io.hpp"

namespace deepfpft {

using nlohmann::json;

CrossingMode crossing_mode_from(const std::string& name) {
  if (name == "abs") return CrossingMode::abs;
  if (name == "signed_upper") return CrossingMode::signed_upper;
  throw ConfigError("crossing mode must be 'abs' or 'signed_upper', got '" + name + "'");
}

const char* crossing_mode_name(CrossingMode mode) { return mode == CrossingMode::abs ? "abs" : "signed_upper"; }

MeanVar mean_var(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 2)
    throw InsufficientSamplesError("mean/variance needs at least 2 samples, got " + std::to_string(samples.rows()));
  MeanVar out;
  out.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - out.mean.transpose();
  out.variance = centered.colwise().squaredNorm().transpose() / static_cast<double>(samples.rows() - 1);
  return out;
}

MeanVar ensemble_mean_var(const TrajectoryEnsemble& ens, std::size_t dof) {
  return mean_var(ens.displacement_of(dof));
}

namespace {

void check_aligned(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& actual) {
  if (pred.rows() != actual.rows() || pred.cols() != actual.cols())
    throw ShapeError("predicted ensemble is " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     ", actual is " + std::to_string(actual.rows()) + "x" + std::to_string(actual.cols()));
}

}  // namespace

double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& actual) {
  check_aligned(pred, actual);
  if (pred.size() == 0) throw EmptyDataError("MSE of an empty ensemble");
  return (pred - actual).squaredNorm() / static_cast<double>(pred.size());
}

double ensemble_mse(const TrajectoryEnsemble& pred, const TrajectoryEnsemble& actual, std::size_t dof) {
  return mse(pred.displacement_of(dof), actual.displacement_of(dof));
}

double nmse_percent(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& actual) {
  check_aligned(pred, actual);
  if (pred.rows() == 0) throw EmptyDataError("NMSE of an empty ensemble");
  double sum = 0.0;
  for (Eigen::Index s = 0; s < actual.rows(); ++s) {
    const double norm = actual.row(s).squaredNorm();
    if (norm == 0.0) throw ZeroNormError("actual sample " + std::to_string(s) + " has zero norm");
    sum += (pred.row(s) - actual.row(s)).squaredNorm() / norm;
  }
  return 100.0 * sum / static_cast<double>(actual.rows());
}

double nmse_percent(const TrajectoryEnsemble& pred, const TrajectoryEnsemble& actual, std::size_t dof) {
  return nmse_percent(pred.displacement_of(dof), actual.displacement_of(dof));
}

Passage first_passage_time(std::span<const double> series, std::span<const double> t_grid, double threshold,
                           CrossingMode mode) {
  if (series.size() != t_grid.size()) throw LengthMismatchError("series and time grid lengths differ");
  if (t_grid.empty()) throw EmptyDataError("first passage on an empty series");
  if (mode == CrossingMode::abs && !(threshold > 0.0))
    throw ConfigError("abs-mode threshold must be > 0, got " + format_double(threshold));
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = mode == CrossingMode::abs ? std::abs(series[i]) : series[i];
    if (y >= threshold) return {t_grid[i], false};
  }
  return {t_grid.back(), true};
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw EmptySampleError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double silverman_bandwidth(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw InsufficientSamplesError("bandwidth needs at least 2 samples");
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  std::vector<double> v(samples.begin(), samples.end());
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

namespace {

double kde_at(std::span<const double> samples, double x, double h, const KdeOptions& opt) {
  const double inv = 1.0 / h;
  double sum = 0.0;
  for (double s : samples) {
    double u = (x - s) * inv;
    sum += std::exp(-0.5 * u * u);
    if (opt.lower) {
      u = (x - (2.0 * *opt.lower - s)) * inv;
      sum += std::exp(-0.5 * u * u);
    }
    if (opt.upper) {
      u = (x - (2.0 * *opt.upper - s)) * inv;
      sum += std::exp(-0.5 * u * u);
    }
  }
  return sum * inv / (static_cast<double>(samples.size()) * std::sqrt(2.0 * std::numbers::pi));
}

std::vector<double> kde_impl(std::span<const double> samples, std::span<const double> grid, const KdeOptions& opt,
                             double* bandwidth_used, bool parallel) {
  const double h = std::max(silverman_bandwidth(samples), opt.min_bandwidth);
  if (!(h > 0.0)) throw InsufficientSamplesError("samples have zero spread and no bandwidth floor was given");
  if (bandwidth_used) *bandwidth_used = h;
  std::vector<double> out(grid.size());
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(grid.size()); ++i)
    out[static_cast<std::size_t>(i)] = kde_at(samples, grid[static_cast<std::size_t>(i)], h, opt);
  return out;
}

FpftResult fpft_impl(const TrajectoryEnsemble& ens, std::size_t dof, double threshold, CrossingMode mode,
                     bool parallel) {
  const Eigen::MatrixXd& disp = ens.displacement_of(dof);
  const auto n = static_cast<std::ptrdiff_t>(disp.rows());
  if (n < 2) throw InsufficientSamplesError("FPFT distribution needs at least 2 samples");
  if (ens.t_grid.empty()) throw EmptyDataError("FPFT on an empty time grid");

  FpftResult r;
  r.dof = dof;
  r.threshold = threshold;
  r.mode = mode;
  r.t_end = ens.t_grid.back();
  r.failure_times.resize(static_cast<std::size_t>(n));
  std::vector<char> censored(static_cast<std::size_t>(n), 0);
  // Row-major copy so each sample's series is contiguous.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = disp;
  if (mode == CrossingMode::abs && !(threshold > 0.0))
    throw ConfigError("abs-mode threshold must be > 0, got " + format_double(threshold));
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    const std::span<const double> series(rows.data() + s * rows.cols(), static_cast<std::size_t>(rows.cols()));
    const Passage p = first_passage_time(series, ens.t_grid, threshold, mode);
    r.failure_times[static_cast<std::size_t>(s)] = p.time;
    censored[static_cast<std::size_t>(s)] = p.censored ? 1 : 0;
  }
  r.censored_count = static_cast<std::size_t>(std::count(censored.begin(), censored.end(), 1));

  r.kde_grid.resize(kKdePoints);
  for (std::size_t i = 0; i < kKdePoints; ++i)
    r.kde_grid[i] = r.t_end * static_cast<double>(i) / static_cast<double>(kKdePoints - 1);
  r.kde_grid.back() = r.t_end;
  KdeOptions opt;
  opt.lower = 0.0;
  opt.upper = r.t_end;
  opt.min_bandwidth = 1e-6 * r.t_end;
  r.kde_density = kde_impl(r.failure_times, r.kde_grid, opt, &r.bandwidth, parallel);
  return r;
}

}  // namespace

std::vector<double> kde_pdf(std::span<const double> samples, std::span<const double> grid, const KdeOptions& options,
                            double* bandwidth_used) {
  return kde_impl(samples, grid, options, bandwidth_used, true);
}

FpftResult fpft_distribution(const TrajectoryEnsemble& ens, std::size_t dof, double threshold, CrossingMode mode) {
  return fpft_impl(ens, dof, threshold, mode, true);
}

FpftResult fpft_distribution_serial(const TrajectoryEnsemble& ens, std::size_t dof, double threshold,
                                    CrossingMode mode) {
  return fpft_impl(ens, dof, threshold, mode, false);
}

double ks_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw EmptySampleError("KS distance needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return d;
}

double peak_quantile_threshold(const Eigen::MatrixXd& displacement, double q) {
  if (displacement.rows() == 0) throw EmptySampleError("threshold from an empty ensemble");
  std::vector<double> peaks(static_cast<std::size_t>(displacement.rows()));
  for (Eigen::Index s = 0; s < displacement.rows(); ++s)
    peaks[static_cast<std::size_t>(s)] = displacement.row(s).cwiseAbs().maxCoeff();
  return quantile(std::move(peaks), q);
}

EvalReport evaluate(const TrajectoryEnsemble& pred, const TrajectoryEnsemble& actual) {
  if (pred.t_grid.size() != actual.t_grid.size())
    throw ShapeError("predicted and actual ensembles use different time grids");
  EvalReport r;
  r.t_grid = actual.t_grid;
  for (std::size_t k = 0; k < pred.dofs.size(); ++k) {
    const std::size_t dof = pred.dofs[k];
    const auto& p = pred.displacement[k];
    const auto& a = actual.displacement_of(dof);
    r.dofs.push_back(dof);
    r.mse.push_back(mse(p, a));
    r.nmse_percent.push_back(nmse_percent(p, a));
    r.predicted.push_back(mean_var(p));
    r.actual.push_back(mean_var(a));
  }
  return r;
}

json EvalReport::summary() const {
  json per_dof = json::array();
  for (std::size_t k = 0; k < dofs.size(); ++k)
    per_dof.push_back({{"dof", dofs[k] + 1}, {"mse", mse[k]}, {"nmse_percent", nmse_percent[k]}});
  double mean_mse = 0.0;
  for (double m : mse) mean_mse += m;
  if (!mse.empty()) mean_mse /= static_cast<double>(mse.size());
  return {{"format", "deepfpft.eval"}, {"version", 1}, {"mse", mean_mse}, {"per_dof", per_dof}};
}

void write_eval_report(const EvalReport& report, const std::filesystem::path& dir) {
  write_json(dir / "eval.json", report.summary());
  const std::vector<std::string> header{"t", "mean_pred", "mean_actual", "var_pred", "var_actual"};
  for (std::size_t k = 0; k < report.dofs.size(); ++k) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(report.t_grid.size()), 5);
    m.col(0) = Eigen::Map<const Eigen::VectorXd>(report.t_grid.data(), m.rows());
    m.col(1) = report.predicted[k].mean;
    m.col(2) = report.actual[k].mean;
    m.col(3) = report.predicted[k].variance;
    m.col(4) = report.actual[k].variance;
    write_matrix_csv(dir / ("mean_var_" + dof_file_tag(report.dofs[k]) + ".csv"), header, m);
  }
}

json fpft_summary(const FpftResult& r) {
  return {{"dof", r.dof + 1},
          {"threshold", r.threshold},
          {"mode", crossing_mode_name(r.mode)},
          {"t_end", r.t_end},
          {"n_samples", r.failure_times.size()},
          {"censored_count", r.censored_count},
          {"fully_censored", r.censored_count == r.failure_times.size()},
          {"bandwidth", r.bandwidth}};
}

void write_fpft_result(const FpftResult& r, const std::filesystem::path& dir, const std::string& prefix) {
  const std::string stem = prefix + "_" + dof_file_tag(r.dof);
  const std::vector<std::string> times_header{"failure_time"};
  write_matrix_csv(dir / (stem + "_times.csv"), times_header,
                   Eigen::Map<const Eigen::VectorXd>(r.failure_times.data(),
                                                     static_cast<Eigen::Index>(r.failure_times.size())));
  Eigen::MatrixXd kde(static_cast<Eigen::Index>(r.kde_grid.size()), 2);
  kde.col(0) = Eigen::Map<const Eigen::VectorXd>(r.kde_grid.data(), kde.rows());
  kde.col(1) = Eigen::Map<const Eigen::VectorXd>(r.kde_density.data(), kde.rows());
  const std::vector<std::string> kde_header{"t", "density"};
  write_matrix_csv(dir / (stem + "_kde.csv"), kde_header, kde);
}

}  // namespace deepfpft
