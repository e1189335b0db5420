#include "deepfpft/system_config.hpp"

#include "deepfpft/errors.hpp"
#include "deepfpft/io.hpp"

namespace deepfpft {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Excitation excitation_from(const json& j, Excitation fallback) {
  if (!j.contains("excitation")) return fallback;
  const auto s = j.at("excitation").get<std::string>();
  if (s == "direct_force") return Excitation::direct_force;
  if (s == "base_acceleration") return Excitation::base_acceleration;
  throw ConfigError("system.excitation must be 'direct_force' or 'base_acceleration'");
}

const char* excitation_name(Excitation e) {
  return e == Excitation::direct_force ? "direct_force" : "base_acceleration";
}

std::vector<double> per_story(const json& j, const char* key, std::size_t n) {
  if (!j.contains(key)) throw ConfigError(std::string("shear_chain needs '") + key + "'");
  const auto& v = j.at(key);
  if (v.is_number()) return std::vector<double>(n, v.get<double>());
  auto out = v.get<std::vector<double>>();
  if (out.size() != n) throw ConfigError(std::string("shear_chain '") + key + "' must have n_stories entries");
  return out;
}

Eigen::MatrixXd matrix_from(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("system needs '") + key + "'");
  const auto rows = j.at(key).get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.empty() ? 0 : rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<std::size_t>(m.cols())) throw ConfigError(std::string("ragged matrix '") + key + "'");
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}

Eigen::VectorXd vector_from(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  const auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

SystemModel from_preset(const json& j) {
  const auto name = j.at("preset").get<std::string>();
  if (name == "sdof_bouc_wen") {
    constexpr double m = 6800.0, k = 232000.0, c = 3750.0;
    return make_sdof_bouc_wen(m, c, k, BoucWenParams::benchmark(m), j.value("x0", 0.01), j.value("v0", 0.05));
  }
  if (name == "duffing5") return make_duffing5(Duffing5Params{}, j.value("x0", 0.01), j.value("v0", 0.05));
  if (name == "chain76" || name == "chain76_bouc_wen") {
    auto spec = default_chain76_spec(name == "chain76_bouc_wen");
    spec.x0 = j.value("x0", spec.x0);
    spec.v0 = j.value("v0", spec.v0);
    if (j.contains("device")) spec.device = device_from_json(j.at("device"));
    return make_shear_chain(spec);
  }
  throw ConfigError("unknown system preset '" + name + "'");
}

}  // namespace

json device_to_json(const NonlinearDevice& device) {
  if (const auto* d = std::get_if<DuffingDevice>(&device))
    return json{{"kind", "duffing"}, {"dof", d->dof + 1}, {"alpha", d->alpha}};
  if (const auto* b = std::get_if<BoucWenDevice>(&device)) {
    const auto& p = b->params;
    return json{{"kind", "bouc_wen"}, {"dof", b->dof + 1}, {"q_y", p.q_y},     {"k_r", p.k_r},
                {"alpha", p.alpha},   {"beta", p.beta},    {"gamma", p.gamma}, {"d_y", p.d_y},
                {"eta", p.eta}};
  }
  return json{{"kind", "none"}};
}

NonlinearDevice device_from_json(const json& j) {
  const auto kind = j.value("kind", "none");
  if (kind == "none") return NoDevice{};
  const auto dof = j.value("dof", std::size_t{1});
  if (dof < 1) throw ConfigError("device dof is 1-based");
  if (kind == "duffing") return DuffingDevice{j.at("alpha").get<double>(), dof - 1};
  if (kind == "bouc_wen") {
    BoucWenParams p;
    p.q_y = j.at("q_y").get<double>();
    p.k_r = j.value("k_r", p.k_r);
    p.alpha = j.value("alpha", p.alpha);
    p.beta = j.value("beta", p.beta);
    p.gamma = j.value("gamma", p.gamma);
    p.d_y = j.value("d_y", p.d_y);
    p.eta = j.value("eta", p.eta);
    return BoucWenDevice{p, dof - 1};
  }
  throw ConfigError("unknown device kind '" + kind + "'");
}

SystemModel system_from_json(const json& j, const fs::path& base_dir) {
  try {
    if (j.contains("preset")) return from_preset(j);
    if (j.contains("file")) {
      fs::path p = j.at("file").get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      if (!fs::exists(p)) throw MissingArtifactError("system file not found: " + p.string());
      return system_from_json(read_json(p), p.parent_path());
    }
    const auto kind = j.value("kind", "matrices");
    if (kind == "shear_chain") {
      const auto n = j.at("n_stories").get<std::size_t>();
      ShearChainSpec spec;
      spec.story_mass = per_story(j, "story_mass", n);
      spec.story_stiffness = per_story(j, "story_stiffness", n);
      spec.story_damping = per_story(j, "story_damping", n);
      spec.excitation = excitation_from(j, Excitation::base_acceleration);
      spec.x0 = j.value("x0", 0.0);
      spec.v0 = j.value("v0", 0.0);
      if (j.contains("device")) spec.device = device_from_json(j.at("device"));
      return make_shear_chain(spec);
    }
    if (kind == "matrices") {
      SystemModel::Definition def;
      def.mass = matrix_from(j, "mass");
      def.damping = matrix_from(j, "damping");
      def.stiffness = matrix_from(j, "stiffness");
      def.influence = vector_from(j, "influence");
      def.x0 = vector_from(j, "x0");
      def.v0 = vector_from(j, "v0");
      def.excitation = excitation_from(j, Excitation::direct_force);
      if (j.contains("device")) def.device = device_from_json(j.at("device"));
      return SystemModel::create(std::move(def));
    }
    throw ConfigError("unknown system kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
}

json system_to_json(const SystemModel& model) {
  const auto& d = model.definition();
  return json{{"kind", "matrices"},
              {"mass", matrix_to_json(d.mass)},
              {"damping", matrix_to_json(d.damping)},
              {"stiffness", matrix_to_json(d.stiffness)},
              {"influence", vector_to_json(d.influence)},
              {"excitation", excitation_name(d.excitation)},
              {"x0", vector_to_json(d.x0)},
              {"v0", vector_to_json(d.v0)},
              {"device", device_to_json(d.device)}};
}

}  // namespace deepfpft
