#pragma once

// Benchmark structural systems and their fixed-step RK4 integration under
// sampled forcing.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "deepfpft/forcing.hpp"
#include "deepfpft/trajectory.hpp"

namespace deepfpft {

inline constexpr double kGravity = 9.81;

/// Bouc-Wen hysteresis parameters; `eta` is the exponent n.
struct BoucWenParams {
  double q_y = 0.0;
  double k_r = 1.0 / 6.0;
  double alpha = 1.0;
  double beta = 0.5;
  double gamma = 0.5;
  double d_y = 0.0013;
  double eta = 2.0;

  void validate() const;
  /// Parameters of the SDOF benchmark oscillator, Q_y = 0.05 m g.
  static BoucWenParams benchmark(double mass);
};

/// dz/dt = (alpha ydot - gamma z |ydot| |z|^(eta-1) - beta ydot |z|^eta) / D_y
double bouc_wen_aux_rate(double z, double ydot, const BoucWenParams& p);

/// State (y, ydot, z) of m y'' + c y' + k y + (1 - k_r) Q_y z = f.
std::array<double, 3> sdof_bouc_wen_rhs(const std::array<double, 3>& state, double f, double m,
                                        double c, double k, const BoucWenParams& p);

struct Duffing5Params {
  std::array<double, 5> m{10.0, 10.0, 9.0, 9.0, 7.5};
  std::array<double, 5> c{100.0, 100.0, 90.0, 90.0, 75.0};
  std::array<double, 5> k{10000.0, 10000.0, 9000.0, 9000.0, 7500.0};
  double alpha = 100.0;
};

/// Base-excited 5-DOF chain with a cubic spring alpha x1^3 on the first DOF.
/// State is (x1..x5, v1..v5); f is the ground acceleration.
std::array<double, 10> duffing5_rhs(const std::array<double, 10>& state, double f,
                                    const Duffing5Params& p);

struct NoDevice {};
struct DuffingDevice {
  double alpha = 0.0;
  std::size_t dof = 0;
};
struct BoucWenDevice {
  BoucWenParams params;
  std::size_t dof = 0;
};
using NonlinearDevice = std::variant<NoDevice, DuffingDevice, BoucWenDevice>;

enum class Excitation { direct_force, base_acceleration };

/// M X'' + C X' + K X + N(X, X') = F with F = I_f f (direct force) or
/// F = -M I_f f (ground acceleration).
///
/// Immutable after construction.  The mass matrix is factorized once;
/// stiffness and damping are kept sparse for the right-hand side.
class SystemModel {
 public:
  struct Definition {
    Eigen::MatrixXd mass;
    Eigen::MatrixXd damping;
    Eigen::MatrixXd stiffness;
    NonlinearDevice device = NoDevice{};
    Eigen::VectorXd influence;
    Excitation excitation = Excitation::direct_force;
    Eigen::VectorXd x0;
    Eigen::VectorXd v0;
  };

  static SystemModel create(Definition def);

  const Definition& definition() const { return def_; }
  std::size_t n_dof() const { return static_cast<std::size_t>(def_.mass.rows()); }
  bool has_hysteresis() const { return std::holds_alternative<BoucWenDevice>(def_.device); }
  /// 2 n_dof, plus one hysteretic variable for a Bouc-Wen device.
  std::size_t state_size() const { return 2 * n_dof() + (has_hysteresis() ? 1 : 0); }
  Eigen::VectorXd initial_state() const;

  /// Writes d(state)/dt.  `scratch` must hold n_dof doubles.
  void rhs(std::span<const double> state, double f, std::span<double> out,
           std::span<double> scratch) const;

 private:
  explicit SystemModel(Definition def);

  Definition def_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> damping_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> stiffness_;
  std::optional<Eigen::VectorXd> inverse_mass_diagonal_;
  Eigen::LLT<Eigen::MatrixXd> mass_factor_;
};

/// Derivative of the 2N (+1) state of a chain model; identical to
/// model.rhs, returned by value.
Eigen::VectorXd chain_building_rhs(const Eigen::VectorXd& state, double f_ground,
                                   const SystemModel& model);

/// Per-story properties of a fixed-base shear building (story 1 at the
/// base).  Story j couples DOF j-1 and DOF j, with story 1 tied to ground.
struct ShearChainSpec {
  std::vector<double> story_mass;
  std::vector<double> story_stiffness;
  std::vector<double> story_damping;
  NonlinearDevice device = NoDevice{};
  Excitation excitation = Excitation::base_acceleration;
  double x0 = 0.0;
  double v0 = 0.0;
};

SystemModel make_shear_chain(const ShearChainSpec& spec);

SystemModel make_sdof_bouc_wen(double m, double c, double k, const BoucWenParams& p, double x0,
                               double v0);
SystemModel make_duffing5(const Duffing5Params& p = {}, double x0 = 0.01, double v0 = 0.05);

/// Uniform 76-story shear building used as the default tall-building model.
/// It is a parametric stand-in, not a published benchmark's matrices.
ShearChainSpec default_chain76_spec(bool with_bouc_wen);

struct Trajectory {
  std::vector<double> t_grid;
  Eigen::MatrixXd displacement;  // (n_steps + 1) x n_dof
  Eigen::MatrixXd velocity;      // (n_steps + 1) x n_dof
  std::optional<Eigen::VectorXd> aux;
};

/// 0, dt_out, 2 dt_out, ..., t_end; dt_out must divide t_end.
std::vector<double> output_grid(double t_end, double dt_out);

/// Classical RK4 with internal step dt_out / substeps over [0, t_end of the
/// force grid]; output stored every dt_out.
Trajectory rk4_integrate(const SystemModel& model, const ForceRealization& force, double dt_out,
                         std::size_t substeps);

struct SimulationOptions {
  double dt_out = 0.01;
  std::size_t substeps = 1;
  /// 0-based DOFs to keep; empty keeps all.
  std::vector<std::size_t> store_dofs;
  bool store_velocity = false;
};

/// One trajectory per realization, sample-parallel.
TrajectoryEnsemble simulate_ensemble(const SystemModel& model, const ForceEnsemble& forces,
                                     const SimulationOptions& options);
/// Single-threaded reference for simulate_ensemble.
TrajectoryEnsemble simulate_ensemble_serial(const SystemModel& model, const ForceEnsemble& forces,
                                            const SimulationOptions& options);

}  // namespace deepfpft
