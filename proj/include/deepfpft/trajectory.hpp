#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace deepfpft {

/// Displacement (and optionally velocity) histories of many samples on one
/// uniform time grid, stored per DOF as a samples x times matrix.
struct TrajectoryEnsemble {
  std::vector<double> t_grid;
  std::vector<std::size_t> dofs;             // 0-based, parallel to `displacement`
  std::vector<Eigen::MatrixXd> displacement;
  std::vector<Eigen::MatrixXd> velocity;     // empty in displacement-only mode
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t n_samples() const;
  bool has_dof(std::size_t dof) const;
  /// Throws ShapeError when the DOF is not stored.
  const Eigen::MatrixXd& displacement_of(std::size_t dof) const;
};

/// Files are `<prefix>_dof_NNN.csv` (1-based NNN; rows = samples, columns
/// = time grid), `<prefix>_vel_dof_NNN.csv` when velocities are stored, and
/// the sidecar `<prefix>.json`.
void write_trajectory_ensemble(const TrajectoryEnsemble& ens, const std::filesystem::path& dir,
                               const std::string& prefix);
TrajectoryEnsemble read_trajectory_ensemble(const std::filesystem::path& dir,
                                            const std::string& prefix);

std::string dof_file_tag(std::size_t dof);  // "dof_001" for 0-based dof 0

}  // namespace deepfpft
