#pragma once

// Loading SystemModel from JSON configuration.
//
// Accepted forms of the "system" object (DOF numbers are 1-based):
//
//   {"preset": "sdof_bouc_wen" | "duffing5" | "chain76" | "chain76_bouc_wen",
//    "x0": <number>, "v0": <number>}                   -- x0/v0 optional
//   {"file": "relative/or/absolute/path.json"}         -- any other form, on disk
//   {"kind": "shear_chain", "n_stories": N,
//    "story_mass": <number | [N]>, "story_stiffness": ..., "story_damping": ...,
//    "excitation": "base_acceleration" | "direct_force",
//    "x0": <number>, "v0": <number>, "device": <device>}
//   {"kind": "matrices", "mass": [[..]], "damping": [[..]], "stiffness": [[..]],
//    "influence": [..], "excitation": ..., "x0": [..], "v0": [..], "device": <device>}
//
// <device> is {"kind": "none"}, {"kind": "duffing", "dof": d, "alpha": a} or
// {"kind": "bouc_wen", "dof": d, "q_y", "k_r", "alpha", "beta", "gamma", "d_y", "eta"}.

#include <filesystem>

#include <json.hpp>

#include "deepfpft/dynamics.hpp"

namespace deepfpft {

SystemModel system_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Canonical "matrices" form; two models with equal JSON behave identically.
nlohmann::json system_to_json(const SystemModel& model);

nlohmann::json device_to_json(const NonlinearDevice& device);
NonlinearDevice device_from_json(const nlohmann::json& j);

}  // namespace deepfpft
