#include "deepfpft/trajectory.hpp"

#include <algorithm>
#include <cstdio>

#include "deepfpft/errors.hpp"
#include "deepfpft/io.hpp"

namespace deepfpft {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t TrajectoryEnsemble::n_samples() const {
  return displacement.empty() ? 0 : static_cast<std::size_t>(displacement.front().rows());
}

bool TrajectoryEnsemble::has_dof(std::size_t dof) const {
  return std::find(dofs.begin(), dofs.end(), dof) != dofs.end();
}

const Eigen::MatrixXd& TrajectoryEnsemble::displacement_of(std::size_t dof) const {
  auto it = std::find(dofs.begin(), dofs.end(), dof);
  if (it == dofs.end())
    throw ShapeError("DOF " + std::to_string(dof + 1) + " is not stored in this ensemble");
  return displacement[static_cast<std::size_t>(it - dofs.begin())];
}

std::string dof_file_tag(std::size_t dof) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "dof_%03zu", dof + 1);
  return buf;
}

void write_trajectory_ensemble(const TrajectoryEnsemble& ens, const fs::path& dir,
                               const std::string& prefix) {
  const auto header = format_header(ens.t_grid);
  for (std::size_t i = 0; i < ens.dofs.size(); ++i) {
    write_matrix_csv(dir / (prefix + "_" + dof_file_tag(ens.dofs[i]) + ".csv"), header,
                     ens.displacement[i]);
    if (!ens.velocity.empty())
      write_matrix_csv(dir / (prefix + "_vel_" + dof_file_tag(ens.dofs[i]) + ".csv"), header,
                       ens.velocity[i]);
  }
  json meta = ens.metadata;
  meta["format"] = "deepfpft.trajectories";
  meta["version"] = 1;
  meta["n_samples"] = ens.n_samples();
  meta["n_times"] = ens.t_grid.size();
  json dofs = json::array();
  for (auto d : ens.dofs) dofs.push_back(d + 1);
  meta["dofs"] = dofs;
  meta["has_velocity"] = !ens.velocity.empty();
  write_json(dir / (prefix + ".json"), meta);
}

TrajectoryEnsemble read_trajectory_ensemble(const fs::path& dir, const std::string& prefix) {
  const fs::path sidecar = dir / (prefix + ".json");
  if (!fs::exists(sidecar)) throw MissingArtifactError("missing trajectory sidecar " + sidecar.string());
  json meta = read_json(sidecar);
  TrajectoryEnsemble ens;
  const bool has_velocity = meta.value("has_velocity", false);
  for (const auto& d : meta.at("dofs")) {
    const std::size_t dof = d.get<std::size_t>() - 1;
    auto table = read_matrix_csv(dir / (prefix + "_" + dof_file_tag(dof) + ".csv"));
    if (ens.t_grid.empty())
      for (const auto& h : table.header) ens.t_grid.push_back(parse_double(h));
    if (static_cast<std::size_t>(table.data.cols()) != ens.t_grid.size())
      throw GridMismatchError("trajectory files under prefix " + prefix + " disagree on the grid");
    ens.dofs.push_back(dof);
    ens.displacement.push_back(std::move(table.data));
    if (has_velocity)
      ens.velocity.push_back(read_matrix_csv(dir / (prefix + "_vel_" + dof_file_tag(dof) + ".csv")).data);
  }
  for (const char* key : {"format", "version", "n_samples", "n_times", "dofs", "has_velocity"}) meta.erase(key);
  ens.metadata = std::move(meta);
  return ens;
}

}  // namespace deepfpft
