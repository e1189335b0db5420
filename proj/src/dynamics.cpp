#include "deepfpft/dynamics.hpp"

#include <cmath>
#include <exception>
#include <string>

#include "deepfpft/errors.hpp"
#include "deepfpft/io.hpp"

namespace deepfpft {

void BoucWenParams::validate() const {
  if (!(d_y > 0.0)) throw ConfigError("Bouc-Wen D_y must be > 0");
  if (!(eta >= 1.0)) throw ConfigError("Bouc-Wen exponent eta must be >= 1");
}

BoucWenParams BoucWenParams::benchmark(double mass) {
  BoucWenParams p;
  p.q_y = 0.05 * mass * kGravity;
  return p;
}

double bouc_wen_aux_rate(double z, double ydot, const BoucWenParams& p) {
  const double az = std::abs(z);
  return (p.alpha * ydot - p.gamma * z * std::abs(ydot) * std::pow(az, p.eta - 1.0) -
          p.beta * ydot * std::pow(az, p.eta)) /
         p.d_y;
}

std::array<double, 3> sdof_bouc_wen_rhs(const std::array<double, 3>& state, double f, double m,
                                        double c, double k, const BoucWenParams& p) {
  const auto [y, ydot, z] = state;
  const double yddot = (f - c * ydot - k * y - (1.0 - p.k_r) * p.q_y * z) / m;
  return {ydot, yddot, bouc_wen_aux_rate(z, ydot, p)};
}

std::array<double, 10> duffing5_rhs(const std::array<double, 10>& s, double f,
                                    const Duffing5Params& p) {
  const double* x = s.data();
  const double* v = s.data() + 5;
  std::array<double, 10> d{};
  for (int i = 0; i < 5; ++i) d[i] = v[i];
  // Story i (0-based) connects DOF i-1 (or ground) to DOF i.
  for (int i = 0; i < 5; ++i) {
    double r = -p.m[i] * f;
    r -= p.c[i] * (v[i] - (i > 0 ? v[i - 1] : 0.0));
    r -= p.k[i] * (x[i] - (i > 0 ? x[i - 1] : 0.0));
    if (i + 1 < 5) {
      r -= p.c[i + 1] * (v[i] - v[i + 1]);
      r -= p.k[i + 1] * (x[i] - x[i + 1]);
    }
    if (i == 0) r -= p.alpha * x[0] * x[0] * x[0];
    d[5 + i] = r / p.m[i];
  }
  return d;
}

SystemModel::SystemModel(Definition def) : def_(std::move(def)) {}

SystemModel SystemModel::create(Definition def) {
  const auto n = def.mass.rows();
  if (n < 1) throw ConfigError("system needs at least one DOF");
  auto check_square = [n](const Eigen::MatrixXd& m, const char* name) {
    if (m.rows() != n || m.cols() != n)
      throw ConfigError(std::string("system ") + name + " matrix must be " + std::to_string(n) + "x" +
                        std::to_string(n));
    if (!m.allFinite()) throw ConfigError(std::string("system ") + name + " matrix has non-finite entries");
  };
  check_square(def.mass, "mass");
  check_square(def.damping, "damping");
  check_square(def.stiffness, "stiffness");
  if (def.influence.size() == 0) def.influence = Eigen::VectorXd::Ones(n);
  if (def.x0.size() == 0) def.x0 = Eigen::VectorXd::Zero(n);
  if (def.v0.size() == 0) def.v0 = Eigen::VectorXd::Zero(n);
  if (def.influence.size() != n || def.x0.size() != n || def.v0.size() != n)
    throw ConfigError("influence, x0 and v0 must have one entry per DOF");
  if ((def.mass - def.mass.transpose()).cwiseAbs().maxCoeff() > 1e-12 * def.mass.cwiseAbs().maxCoeff())
    throw SingularMassError("mass matrix is not symmetric");

  std::visit(
      [n](const auto& dev) {
        using T = std::decay_t<decltype(dev)>;
        if constexpr (!std::is_same_v<T, NoDevice>) {
          if (dev.dof >= static_cast<std::size_t>(n))
            throw ConfigError("nonlinear device DOF index out of range");
        }
        if constexpr (std::is_same_v<T, BoucWenDevice>) dev.params.validate();
      },
      def.device);

  SystemModel model(std::move(def));
  const auto& m = model.def_.mass;
  const bool diagonal = (m - Eigen::MatrixXd(m.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
  if (diagonal) {
    if ((m.diagonal().array() <= 0.0).any()) throw SingularMassError("mass matrix is not positive definite");
    model.inverse_mass_diagonal_ = m.diagonal().cwiseInverse();
  } else {
    model.mass_factor_.compute(m);
    if (model.mass_factor_.info() != Eigen::Success)
      throw SingularMassError("mass matrix is not positive definite");
  }
  model.damping_ = model.def_.damping.sparseView();
  model.stiffness_ = model.def_.stiffness.sparseView();
  return model;
}

Eigen::VectorXd SystemModel::initial_state() const {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(state_size()));
  const auto n = static_cast<Eigen::Index>(n_dof());
  s.head(n) = def_.x0;
  s.segment(n, n) = def_.v0;
  return s;
}

void SystemModel::rhs(std::span<const double> state, double f, std::span<double> out,
                      std::span<double> scratch) const {
  const auto n = static_cast<Eigen::Index>(n_dof());
  Eigen::Map<const Eigen::VectorXd> x(state.data(), n);
  Eigen::Map<const Eigen::VectorXd> v(state.data() + n, n);
  Eigen::Map<Eigen::VectorXd> dx(out.data(), n);
  Eigen::Map<Eigen::VectorXd> dv(out.data() + n, n);
  Eigen::Map<Eigen::VectorXd> r(scratch.data(), n);

  dx = v;
  r.noalias() = -(damping_ * v);
  r.noalias() -= stiffness_ * x;
  if (def_.excitation == Excitation::direct_force) r += f * def_.influence;

  if (const auto* duffing = std::get_if<DuffingDevice>(&def_.device)) {
    const double xd = x[static_cast<Eigen::Index>(duffing->dof)];
    r[static_cast<Eigen::Index>(duffing->dof)] -= duffing->alpha * xd * xd * xd;
  } else if (const auto* bw = std::get_if<BoucWenDevice>(&def_.device)) {
    const double z = state[static_cast<std::size_t>(2 * n)];
    const auto d = static_cast<Eigen::Index>(bw->dof);
    r[d] -= (1.0 - bw->params.k_r) * bw->params.q_y * z;
    out[static_cast<std::size_t>(2 * n)] = bouc_wen_aux_rate(z, v[d], bw->params);
  }

  if (inverse_mass_diagonal_)
    dv = r.cwiseProduct(*inverse_mass_diagonal_);
  else
    dv = mass_factor_.solve(r);
  // -M^-1 M I_f f == -I_f f; added after the solve so the mass cancels exactly.
  if (def_.excitation == Excitation::base_acceleration) dv -= f * def_.influence;
}

Eigen::VectorXd chain_building_rhs(const Eigen::VectorXd& state, double f_ground,
                                   const SystemModel& model) {
  Eigen::VectorXd out(state.size());
  Eigen::VectorXd scratch(static_cast<Eigen::Index>(model.n_dof()));
  model.rhs({state.data(), static_cast<std::size_t>(state.size())}, f_ground,
            {out.data(), static_cast<std::size_t>(out.size())},
            {scratch.data(), static_cast<std::size_t>(scratch.size())});
  return out;
}

SystemModel make_shear_chain(const ShearChainSpec& spec) {
  const std::size_t n = spec.story_mass.size();
  if (n == 0 || spec.story_stiffness.size() != n || spec.story_damping.size() != n)
    throw ConfigError("shear chain needs equal-length story mass, stiffness and damping vectors");
  SystemModel::Definition def;
  const auto ni = static_cast<Eigen::Index>(n);
  def.mass = Eigen::MatrixXd::Zero(ni, ni);
  def.damping = Eigen::MatrixXd::Zero(ni, ni);
  def.stiffness = Eigen::MatrixXd::Zero(ni, ni);
  for (Eigen::Index i = 0; i < ni; ++i) {
    def.mass(i, i) = spec.story_mass[static_cast<std::size_t>(i)];
    // Story i ties DOF i to DOF i-1 (ground for i = 0).
    const double k = spec.story_stiffness[static_cast<std::size_t>(i)];
    const double c = spec.story_damping[static_cast<std::size_t>(i)];
    def.stiffness(i, i) += k;
    def.damping(i, i) += c;
    if (i > 0) {
      def.stiffness(i - 1, i - 1) += k;
      def.stiffness(i, i - 1) -= k;
      def.stiffness(i - 1, i) -= k;
      def.damping(i - 1, i - 1) += c;
      def.damping(i, i - 1) -= c;
      def.damping(i - 1, i) -= c;
    }
  }
  def.device = spec.device;
  def.excitation = spec.excitation;
  def.influence = Eigen::VectorXd::Ones(ni);
  def.x0 = Eigen::VectorXd::Constant(ni, spec.x0);
  def.v0 = Eigen::VectorXd::Constant(ni, spec.v0);
  return SystemModel::create(std::move(def));
}

SystemModel make_sdof_bouc_wen(double m, double c, double k, const BoucWenParams& p, double x0,
                               double v0) {
  SystemModel::Definition def;
  def.mass = Eigen::MatrixXd::Constant(1, 1, m);
  def.damping = Eigen::MatrixXd::Constant(1, 1, c);
  def.stiffness = Eigen::MatrixXd::Constant(1, 1, k);
  def.device = BoucWenDevice{p, 0};
  def.excitation = Excitation::direct_force;
  def.influence = Eigen::VectorXd::Ones(1);
  def.x0 = Eigen::VectorXd::Constant(1, x0);
  def.v0 = Eigen::VectorXd::Constant(1, v0);
  return SystemModel::create(std::move(def));
}

SystemModel make_duffing5(const Duffing5Params& p, double x0, double v0) {
  ShearChainSpec spec;
  spec.story_mass.assign(p.m.begin(), p.m.end());
  spec.story_stiffness.assign(p.k.begin(), p.k.end());
  spec.story_damping.assign(p.c.begin(), p.c.end());
  spec.device = DuffingDevice{p.alpha, 0};
  spec.excitation = Excitation::base_acceleration;
  spec.x0 = x0;
  spec.v0 = v0;
  return make_shear_chain(spec);
}

ShearChainSpec default_chain76_spec(bool with_bouc_wen) {
  constexpr std::size_t kStories = 76;
  constexpr double kMass = 1.0e6;        // kg per floor
  constexpr double kStiffness = 3.75e9;  // N/m per story, T1 ~ 5 s
  // C = a K with a = 2 zeta / omega1, zeta = 2 % in the first mode.
  const double omega_scale = std::sqrt(kStiffness / kMass);
  const double omega1 = 2.0 * omega_scale * std::sin(M_PI / (2.0 * (2.0 * kStories + 1.0)));
  const double a = 2.0 * 0.02 / omega1;

  ShearChainSpec spec;
  spec.story_mass.assign(kStories, kMass);
  spec.story_stiffness.assign(kStories, kStiffness);
  spec.story_damping.assign(kStories, a * kStiffness);
  spec.excitation = Excitation::base_acceleration;
  spec.x0 = 0.001;
  spec.v0 = 0.005;
  if (with_bouc_wen) spec.device = BoucWenDevice{BoucWenParams::benchmark(kMass), 0};
  return spec;
}

std::vector<double> output_grid(double t_end, double dt_out) {
  if (!(dt_out > 0.0)) throw ConfigError("dt_out must be > 0");
  const auto n_steps = static_cast<std::size_t>(std::llround(t_end / dt_out));
  if (n_steps == 0 || std::abs(static_cast<double>(n_steps) * dt_out - t_end) > 1e-9 * t_end)
    throw GridMismatchError("dt_out " + format_double(dt_out) + " does not divide the force horizon " +
                            format_double(t_end));
  std::vector<double> grid(n_steps + 1);
  for (std::size_t i = 0; i <= n_steps; ++i) grid[i] = dt_out * static_cast<double>(i);
  grid.back() = t_end;
  return grid;
}

Trajectory rk4_integrate(const SystemModel& model, const ForceRealization& force, double dt_out,
                         std::size_t substeps) {
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (!(dt_out > 0.0)) throw ConfigError("dt_out must be > 0");
  if (force.t_grid.empty()) throw ConfigError("force realization has an empty grid");
  const double t_end = force.t_grid.back();
  const auto grid = output_grid(t_end, dt_out);
  const std::size_t n_steps = grid.size() - 1;

  const std::size_t n = model.n_dof();
  const std::size_t size = model.state_size();
  const double h = dt_out / static_cast<double>(substeps);

  Trajectory traj;
  traj.t_grid = grid;
  const auto rows = static_cast<Eigen::Index>(n_steps + 1);
  const auto cols = static_cast<Eigen::Index>(n);
  traj.displacement.resize(rows, cols);
  traj.velocity.resize(rows, cols);
  if (model.has_hysteresis()) traj.aux = Eigen::VectorXd(rows);

  std::vector<double> y(size), k1(size), k2(size), k3(size), k4(size), tmp(size), scratch(n);
  {
    const Eigen::VectorXd y0 = model.initial_state();
    std::copy(y0.data(), y0.data() + y0.size(), y.begin());
  }
  auto record = [&](std::size_t step) {
    const auto r = static_cast<Eigen::Index>(step);
    for (std::size_t j = 0; j < n; ++j) {
      traj.displacement(r, static_cast<Eigen::Index>(j)) = y[j];
      traj.velocity(r, static_cast<Eigen::Index>(j)) = y[n + j];
    }
    if (traj.aux) (*traj.aux)[r] = y[2 * n];
  };
  record(0);

  for (std::size_t step = 0; step < n_steps; ++step) {
    for (std::size_t sub = 0; sub < substeps; ++sub) {
      const double t = h * static_cast<double>(step * substeps + sub);
      const double f0 = force.at(t);
      const double fh = force.at(t + 0.5 * h);
      const double f1 = force.at(t + h);
      model.rhs(y, f0, k1, scratch);
      for (std::size_t i = 0; i < size; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
      model.rhs(tmp, fh, k2, scratch);
      for (std::size_t i = 0; i < size; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
      model.rhs(tmp, fh, k3, scratch);
      for (std::size_t i = 0; i < size; ++i) tmp[i] = y[i] + h * k3[i];
      model.rhs(tmp, f1, k4, scratch);
      for (std::size_t i = 0; i < size; ++i)
        y[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    for (double value : y)
      if (!std::isfinite(value))
        throw NonFiniteStateError(step + 1, "state became non-finite at output step " + std::to_string(step + 1));
    record(step + 1);
  }
  return traj;
}

namespace {

TrajectoryEnsemble run_ensemble(const SystemModel& model, const ForceEnsemble& forces,
                                const SimulationOptions& options, bool parallel) {
  TrajectoryEnsemble ens;
  if (options.store_dofs.empty()) {
    for (std::size_t d = 0; d < model.n_dof(); ++d) ens.dofs.push_back(d);
  } else {
    for (auto d : options.store_dofs)
      if (d >= model.n_dof()) throw ConfigError("stored DOF " + std::to_string(d + 1) + " is out of range");
    ens.dofs = options.store_dofs;
  }
  if (forces.empty()) {
    ens.displacement.assign(ens.dofs.size(), Eigen::MatrixXd(0, 0));
    if (options.store_velocity) ens.velocity.assign(ens.dofs.size(), Eigen::MatrixXd(0, 0));
    return ens;
  }

  const double t_end = forces.t_grid().back();
  const auto n_times = static_cast<Eigen::Index>(std::llround(t_end / options.dt_out)) + 1;
  const auto n_samples = static_cast<std::ptrdiff_t>(forces.size());
  ens.displacement.assign(ens.dofs.size(), Eigen::MatrixXd(n_samples, n_times));
  if (options.store_velocity) ens.velocity.assign(ens.dofs.size(), Eigen::MatrixXd(n_samples, n_times));

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_samples));
  std::vector<double> grid;
#pragma omp parallel for schedule(dynamic, 4) if (parallel)
  for (std::ptrdiff_t s = 0; s < n_samples; ++s) {
    try {
      const Trajectory traj =
          rk4_integrate(model, forces.realizations[static_cast<std::size_t>(s)], options.dt_out, options.substeps);
      if (traj.displacement.rows() != n_times)
        throw GridMismatchError("realizations do not share one time horizon");
      for (std::size_t i = 0; i < ens.dofs.size(); ++i) {
        const auto col = static_cast<Eigen::Index>(ens.dofs[i]);
        ens.displacement[i].row(s) = traj.displacement.col(col).transpose();
        if (options.store_velocity) ens.velocity[i].row(s) = traj.velocity.col(col).transpose();
      }
      if (s == 0) grid = traj.t_grid;
    } catch (...) {
      errors[static_cast<std::size_t>(s)] = std::current_exception();
    }
  }
  for (std::size_t s = 0; s < errors.size(); ++s) {
    if (!errors[s]) continue;
    try {
      std::rethrow_exception(errors[s]);
    } catch (const NonFiniteStateError& e) {
      throw NonFiniteStateError(e.step(), "sample " + std::to_string(s) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), "sample " + std::to_string(s) + ": " + e.what());
    }
  }
  ens.t_grid = std::move(grid);
  ens.metadata["dt_out"] = options.dt_out;
  ens.metadata["substeps"] = options.substeps;
  return ens;
}

}  // namespace

TrajectoryEnsemble simulate_ensemble(const SystemModel& model, const ForceEnsemble& forces,
                                     const SimulationOptions& options) {
  return run_ensemble(model, forces, options, true);
}

TrajectoryEnsemble simulate_ensemble_serial(const SystemModel& model, const ForceEnsemble& forces,
                                            const SimulationOptions& options) {
  return run_ensemble(model, forces, options, false);
}

}  // namespace deepfpft
