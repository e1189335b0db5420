#pragma once

// Random forcing functions: truncated random Fourier series and zero-mean
// Gaussian-process realizations with a squared-exponential kernel.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "deepfpft/rng.hpp"

namespace deepfpft {

/// Random Fourier series f(t) = sum a_s sin(f_s t) + sum a_c cos(f_c t) with
/// amplitudes and (angular) frequencies drawn uniformly.
struct FourierSpec {
  std::size_t n_terms = 20;
  double amp_low = -50.0;
  double amp_high = 50.0;
  double freq_low = 0.0;
  double freq_high = 10.0;
  double t_end = 2.0;
  std::size_t n_grid = 100;

  void validate() const;
};

/// Zero-mean Gaussian process with kernel sigma^2 exp(-(t-t')^2 / (2 l^2)).
/// `jitter` is the starting diagonal regularizer, relative to sigma^2.
struct GpSpec {
  double sigma = 50.0;
  double length_scale = 0.10;
  double t_end = 2.0;
  std::size_t n_grid = 100;
  double jitter = 1e-10;

  void validate() const;
};

using ForcingSpec = std::variant<FourierSpec, GpSpec>;

struct FourierParams {
  std::vector<double> sin_amp, sin_freq;
  std::vector<double> cos_amp, cos_freq;
};

struct ForceRealization {
  std::vector<double> t_grid;
  std::vector<double> values;
  std::optional<FourierParams> params;

  /// Force at arbitrary t: exact series evaluation when the Fourier
  /// parameters are known, linear interpolation of the grid otherwise
  /// (clamped outside the grid).
  double at(double t) const;
};

struct ForceEnsemble {
  std::vector<ForceRealization> realizations;
  ForcingSpec spec;
  std::uint64_t seed = 0;
  std::string stream;

  std::size_t size() const { return realizations.size(); }
  bool empty() const { return realizations.empty(); }
  /// Shared time grid (empty for an empty ensemble).
  const std::vector<double>& t_grid() const;
};

/// (n_s, n_c) with n_s + n_c == n and n_s == n_c or n_s == n_c + 1.
std::pair<std::size_t, std::size_t> split_fourier_terms(std::size_t n);

FourierParams sample_fourier_params(const FourierSpec& spec, Rng& rng);
double eval_fourier_force(const FourierParams& params, double t);
ForceRealization sample_fourier_force(const FourierSpec& spec, Rng& rng);

double se_kernel(double t, double t_prime, double sigma, double length_scale);

/// n points from 0 to t_end inclusive.
std::vector<double> uniform_grid(double t_end, std::size_t n);

/// Factors the GP kernel once so that many realizations can be drawn.
///
/// The kernel matrix gets jitter * sigma^2 on its diagonal.  Starting from
/// the spec's jitter, the jitter is raised tenfold until the Cholesky
/// factorization succeeds; past 1e-6 a FactorizationError is thrown.
class GpSampler {
 public:
  explicit GpSampler(const GpSpec& spec);

  const GpSpec& spec() const { return spec_; }
  const std::vector<double>& t_grid() const { return t_grid_; }
  /// Kernel matrix including the diagonal jitter that was used.
  const Eigen::MatrixXd& kernel() const { return kernel_; }
  const Eigen::MatrixXd& lower_factor() const { return lower_; }
  double jitter_used() const { return jitter_used_; }

  ForceRealization sample(Rng& rng) const;

 private:
  GpSpec spec_;
  std::vector<double> t_grid_;
  Eigen::MatrixXd kernel_;
  Eigen::MatrixXd lower_;
  double jitter_used_ = 0.0;
};

ForceRealization sample_gp_force(const GpSpec& spec, Rng& rng);

/// n_samples realizations; realization i is drawn from
/// derive_seed(seed, stream, i), so the result does not depend on the
/// number of threads.
ForceEnsemble force_ensemble(const ForcingSpec& spec, std::size_t n_samples,
                             std::uint64_t seed, const std::string& stream);
/// Single-threaded reference for force_ensemble.
ForceEnsemble force_ensemble_serial(const ForcingSpec& spec,
                                    std::size_t n_samples, std::uint64_t seed,
                                    const std::string& stream);

/// Force values on `width` points spanning [0, t_end]; the stored values
/// themselves when the realization grid already has that width.
std::vector<double> branch_input(const ForceRealization& force,
                                 std::size_t width);

double forcing_t_end(const ForcingSpec& spec);
std::size_t forcing_n_grid(const ForcingSpec& spec);

nlohmann::json forcing_to_json(const ForcingSpec& spec);
ForcingSpec forcing_from_json(const nlohmann::json& j);

/// CSV: header row of grid times, then one row per realization.  The JSON
/// sidecar records the spec, master seed and stream name.
void write_force_ensemble(const ForceEnsemble& ens,
                          const std::filesystem::path& csv_path,
                          const std::filesystem::path& json_path);
/// Fourier parameters are regenerated from the sidecar's seed lineage and
/// re-attached when they reproduce the stored values exactly.
ForceEnsemble read_force_ensemble(const std::filesystem::path& csv_path,
                                  const std::filesystem::path& json_path);

}  // namespace deepfpft
