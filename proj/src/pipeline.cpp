#include "deepfpft/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <functional>
#include <map>
#include <set>

#include "deepfpft/io.hpp"
#include "deepfpft/system_config.hpp"
#include "deepfpft/trajectory.hpp"

namespace deepfpft {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::size_t> one_based_list(const json& j, const char* key, std::size_t n_dof) {
  std::vector<std::size_t> out;
  for (const auto& v : j.at(key)) {
    const auto d = v.get<std::int64_t>();
    if (d < 1 || static_cast<std::size_t>(d) > n_dof)
      throw ConfigError(std::string(key) + ": DOF " + std::to_string(d) + " outside 1.." + std::to_string(n_dof));
    out.push_back(static_cast<std::size_t>(d - 1));
  }
  return out;
}

json one_based(const std::vector<std::size_t>& dofs) {
  json out = json::array();
  for (auto d : dofs) out.push_back(d + 1);
  return out;
}

bool valid_tag(const std::string& tag) {
  if (tag.empty() || tag == "test") return false;
  return std::all_of(tag.begin(), tag.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

SimulationSection simulation_from(const json& j, std::size_t n_dof) {
  SimulationSection s;
  s.dt_out = j.value("dt_out", s.dt_out);
  s.substeps = j.value("substeps", s.substeps);
  s.n_train = j.value("n_train", std::size_t{0});
  s.n_test = j.value("n_test", std::size_t{0});
  s.store_velocity = j.value("store_velocity", false);
  if (j.contains("store_dofs")) s.store_dofs = one_based_list(j, "store_dofs", n_dof);
  if (s.n_train < 1) throw ConfigError("simulation.n_train must be >= 1");
  if (s.n_test < 1) throw ConfigError("simulation.n_test must be >= 1");
  if (s.substeps < 1) throw ConfigError("simulation.substeps must be >= 1");
  if (!(s.dt_out > 0.0)) throw ConfigError("simulation.dt_out must be > 0");
  return s;
}

Scenario scenario_from(const json& j) {
  Scenario sc;
  sc.tag = j.at("tag").get<std::string>();
  if (!valid_tag(sc.tag))
    throw ConfigError("scenario tag '" + sc.tag + "' must be lowercase [a-z0-9_-] and not 'test'");
  sc.forcing = forcing_from_json(j.at("forcing"));
  sc.n_samples = j.at("n_samples").get<std::size_t>();
  if (sc.n_samples < 1) throw ConfigError("scenario '" + sc.tag + "': n_samples must be >= 1");
  sc.simulate_truth = j.value("simulate_truth", true);
  return sc;
}

json scenario_to_json(const Scenario& sc) {
  return {{"tag", sc.tag},
          {"forcing", forcing_to_json(sc.forcing)},
          {"n_samples", sc.n_samples},
          {"simulate_truth", sc.simulate_truth}};
}

// ---- manifests --------------------------------------------------------------

json load_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) return json{{"format", "deepfpft.manifest"}, {"version", 1}, {"stages", json::object()}};
  return read_json(p);
}

/// Files a stage wrote, grouped by workspace subdirectory.
class StageFiles {
 public:
  explicit StageFiles(fs::path workspace) : workspace_(std::move(workspace)) {}
  void add(const fs::path& path) {
    const fs::path rel = fs::relative(path, workspace_);
    const fs::path top = *rel.begin();
    files_[top.string()].insert(fs::relative(path, workspace_ / top).generic_string());
  }
  const std::map<std::string, std::set<std::string>>& by_dir() const { return files_; }

 private:
  fs::path workspace_;
  std::map<std::string, std::set<std::string>> files_;
};

void record_stage(const fs::path& ws, const std::string& stage, const std::string& hash, const StageFiles& files,
                  const std::vector<std::string>& dirs) {
  for (const auto& dir : dirs) {
    json m = load_manifest(ws / dir);
    json entry{{"config_hash", hash}, {"files", json::object()}};
    if (auto it = files.by_dir().find(dir); it != files.by_dir().end())
      for (const auto& f : it->second) entry["files"][f] = sha256_file(ws / dir / f);
    m["stages"][stage] = entry;
    write_json(ws / dir / "manifest.json", m);
  }
}

/// Empty when the stage is current; otherwise the reason it is not.
std::string stage_problem(const fs::path& ws, const std::string& stage, const std::string& hash,
                          const std::vector<std::string>& dirs) {
  for (const auto& dir : dirs) {
    const fs::path mp = ws / dir / "manifest.json";
    if (!fs::exists(mp)) return mp.string() + " not found";
    const json m = read_json(mp);
    if (!m.contains("stages") || !m["stages"].contains(stage)) return mp.string() + " has no '" + stage + "' entry";
    const json& e = m["stages"][stage];
    if (e.value("config_hash", "") != hash) return mp.string() + " was written for a different configuration";
    for (const auto& [name, sha] : e.at("files").items()) {
      const fs::path f = ws / dir / name;
      if (!fs::exists(f)) return f.string() + " not found";
      if (sha256_file(f) != sha.get<std::string>()) return f.string() + " does not match its manifest hash";
    }
  }
  return {};
}

void log_line(const CommandOptions& opts, const std::string& text) {
  if (opts.log) *opts.log << text << '\n' << std::flush;
}

StageStatus run_stage(const fs::path& ws, const std::string& stage, const std::string& hash,
                      const std::vector<std::string>& dirs, const CommandOptions& opts,
                      const std::function<void(StageFiles&)>& body) {
  if (!opts.force && stage_problem(ws, stage, hash, dirs).empty()) {
    log_line(opts, stage + ": up to date, skipped");
    return StageStatus::skipped;
  }
  log_line(opts, stage + ": running");
  StageFiles files(ws);
  body(files);
  record_stage(ws, stage, hash, files, dirs);
  log_line(opts, stage + ": done");
  return StageStatus::ran;
}

void require_stage(const fs::path& ws, const RunConfig& cfg, const std::string& stage,
                   const std::vector<std::string>& dirs) {
  const auto problem = stage_problem(ws, stage, stage_hash(cfg, stage), dirs);
  if (!problem.empty())
    throw MissingArtifactError("'" + stage + "' artifacts are not usable (" + problem + "); run '" + stage + "' first");
}

// ---- artifact helpers -------------------------------------------------------

void save_forces(const ForceEnsemble& ens, const fs::path& dir, const std::string& stem, StageFiles& files) {
  write_force_ensemble(ens, dir / (stem + ".csv"), dir / (stem + ".json"));
  files.add(dir / (stem + ".csv"));
  files.add(dir / (stem + ".json"));
}

ForceEnsemble load_forces(const fs::path& dir, const std::string& stem) {
  const fs::path csv = dir / (stem + ".csv");
  if (!fs::exists(csv)) throw MissingArtifactError("force file not found: " + csv.string());
  return read_force_ensemble(csv, dir / (stem + ".json"));
}

void save_trajectories(const TrajectoryEnsemble& ens, const fs::path& dir, const std::string& prefix,
                       StageFiles& files) {
  write_trajectory_ensemble(ens, dir, prefix);
  for (auto d : ens.dofs) {
    files.add(dir / (prefix + "_" + dof_file_tag(d) + ".csv"));
    if (!ens.velocity.empty()) files.add(dir / (prefix + "_vel_" + dof_file_tag(d) + ".csv"));
  }
  files.add(dir / (prefix + ".json"));
}

TrajectoryEnsemble load_trajectories(const fs::path& dir, const std::string& prefix) {
  if (!fs::exists(dir / (prefix + ".json")))
    throw MissingArtifactError("trajectory sidecar not found: " + (dir / (prefix + ".json")).string());
  return read_trajectory_ensemble(dir, prefix);
}

fs::path model_path(const fs::path& ws, std::size_t dof) { return ws / "models" / (dof_file_tag(dof) + ".json"); }

std::vector<OperatorNet> load_models(const fs::path& ws, const RunConfig& cfg) {
  std::vector<OperatorNet> models;
  for (auto d : cfg.training.dofs) models.push_back(load_operator(model_path(ws, d)));
  return models;
}

SimulationOptions simulation_options(const RunConfig& cfg) {
  SimulationOptions o;
  o.dt_out = cfg.simulation.dt_out;
  o.substeps = cfg.simulation.substeps;
  o.store_dofs = cfg.simulation.store_dofs;
  o.store_velocity = cfg.simulation.store_velocity;
  return o;
}

SimulationOptions truth_options(const RunConfig& cfg) {
  SimulationOptions o = simulation_options(cfg);
  o.store_dofs = cfg.training.dofs;
  o.store_velocity = false;
  return o;
}

std::vector<double> thresholds_for(const RunConfig& cfg, const TrajectoryEnsemble& train) {
  const auto& dofs = cfg.training.dofs;
  const auto& given = cfg.reliability.thresholds;
  std::vector<double> out;
  if (given.empty()) {
    for (auto d : dofs) out.push_back(peak_quantile_threshold(train.displacement_of(d), cfg.reliability.quantile));
  } else if (given.size() == 1) {
    out.assign(dofs.size(), given.front());
  } else {
    out = given;
  }
  return out;
}

// ---- stages -----------------------------------------------------------------

StageStatus run_simulate(const RunConfig& cfg, const fs::path& ws, const CommandOptions& opts) {
  return run_stage(ws, "simulate", stage_hash(cfg, "simulate"), {"forces", "trajectories"}, opts, [&](StageFiles& files) {
    const auto options = simulation_options(cfg);
    const auto train_forces = force_ensemble(cfg.forcing, cfg.simulation.n_train, cfg.seed, "forces/train");
    const auto test_forces = force_ensemble(cfg.forcing, cfg.simulation.n_test, cfg.seed, "forces/test");
    auto train = simulate_ensemble(*cfg.system, train_forces, options);
    auto test = simulate_ensemble(*cfg.system, test_forces, options);
    log_line(opts, "simulate: " + std::to_string(train_forces.size()) + " train + " +
                       std::to_string(test_forces.size()) + " test trajectories");
    save_forces(train_forces, ws / "forces", "train", files);
    save_forces(test_forces, ws / "forces", "test", files);
    save_trajectories(train, ws / "trajectories", "train", files);
    save_trajectories(test, ws / "trajectories", "test", files);
  });
}

void train_models(const RunConfig& cfg, const fs::path& ws, const CommandOptions& opts, bool resume,
                  StageFiles& files) {
  const auto forces = load_forces(ws / "forces", "train");
  const auto traj = load_trajectories(ws / "trajectories", "train");
  for (auto dof : cfg.training.dofs) {
    TrainConfig tc = cfg.training.train;
    tc.seed = derive_seed(cfg.seed, "batches", dof);
    Rng triplet_rng(derive_seed(cfg.seed, "triplets", dof));
    const auto data =
        assemble_triplets(forces, traj, dof, tc.pps, triplet_rng, cfg.training.architecture.branch_widths.front());
    OperatorNet net;
    if (resume) {
      net = load_operator(model_path(ws, dof));
      if (!net.optimizer) throw ConfigError("model for DOF " + std::to_string(dof + 1) + " has no optimizer state");
    } else {
      Rng init_rng(derive_seed(cfg.seed, "init", dof));
      net = OperatorNet::create(cfg.training.architecture, dof, init_rng);
    }
    auto result = train(std::move(net), data, tc);
    const auto& h = result.model.loss_history;
    log_line(opts, "train: DOF " + std::to_string(dof + 1) + " " + std::to_string(data.size()) + " triplets" +
                       (h.empty() ? std::string() : ", training MSE " + format_double(h.back().loss)));
    save_operator(result.model, model_path(ws, dof));
    files.add(model_path(ws, dof));
    const fs::path loss = ws / "models" / (dof_file_tag(dof) + "_loss.csv");
    write_loss_history(result.model, loss);
    files.add(loss);
  }
}

StageStatus run_train(const RunConfig& cfg, const fs::path& ws, const CommandOptions& opts, bool resume) {
  require_stage(ws, cfg, "simulate", {"forces", "trajectories"});
  if (!resume) {
    return run_stage(ws, "train", stage_hash(cfg, "train"), {"models"}, opts,
                     [&](StageFiles& files) { train_models(cfg, ws, opts, false, files); });
  }
  // A resumed model no longer matches any configuration hash on its own;
  // chain the previous model hashes into the recorded one.
  std::string lineage = stage_hash(cfg, "train");
  for (auto d : cfg.training.dofs) {
    const fs::path p = model_path(ws, d);
    if (!fs::exists(p)) throw MissingArtifactError("cannot resume, model file not found: " + p.string());
    lineage += sha256_file(p);
  }
  CommandOptions forced = opts;
  forced.force = true;
  return run_stage(ws, "train", sha256_hex("resume:" + lineage), {"models"}, forced,
                   [&](StageFiles& files) { train_models(cfg, ws, opts, true, files); });
}

json mse_by_dof(const std::vector<std::size_t>& dofs, const TrajectoryEnsemble& pred, const TrajectoryEnsemble& truth) {
  json out = json::array();
  for (std::size_t k = 0; k < dofs.size(); ++k)
    out.push_back({{"dof", dofs[k] + 1}, {"mse", mse(pred.displacement[k], truth.displacement_of(dofs[k]))}});
  return out;
}

void predict_tag(const RunConfig& cfg, const fs::path& ws, const std::vector<OperatorNet>& models,
                 const std::string& tag, const ForcingSpec& forcing, std::size_t n, bool simulate_truth,
                 StageFiles* files) {
  StageFiles scratch(ws);
  StageFiles& out = files ? *files : scratch;
  const fs::path dir = ws / "predictions" / tag;
  const auto forces = force_ensemble(forcing, n, cfg.seed, "forces/" + tag);
  save_forces(forces, dir, "forces", out);
  const auto grid = output_grid(forcing_t_end(forcing), cfg.simulation.dt_out);
  const auto pred = predict_ensemble(models, forces, grid);
  save_trajectories(pred, dir, "pred", out);
  if (simulate_truth) {
    const auto truth = simulate_ensemble(*cfg.system, forces, truth_options(cfg));
    save_trajectories(truth, dir, "truth", out);
  }
}

void gp_surface(const RunConfig& cfg, const fs::path& ws, const std::vector<OperatorNet>& models,
                const GpSurface& surface, StageFiles& files) {
  GpSpec base;
  if (const auto* g = std::get_if<GpSpec>(&cfg.forcing)) base = *g;
  base.t_end = forcing_t_end(cfg.forcing);
  base.n_grid = forcing_n_grid(cfg.forcing);
  const auto grid = output_grid(base.t_end, cfg.simulation.dt_out);
  const auto& dofs = cfg.training.dofs;
  Eigen::MatrixXd table(static_cast<Eigen::Index>(surface.sigmas.size() * surface.length_scales.size()),
                        static_cast<Eigen::Index>(2 + dofs.size()));
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < surface.sigmas.size(); ++i) {
    for (std::size_t k = 0; k < surface.length_scales.size(); ++k, ++row) {
      GpSpec g = base;
      g.sigma = surface.sigmas[i];
      g.length_scale = surface.length_scales[k];
      g.validate();
      const auto forces = force_ensemble(g, surface.n_samples, cfg.seed,
                                         "forces/gp_surface/" + std::to_string(i) + "/" + std::to_string(k));
      const auto truth = simulate_ensemble(*cfg.system, forces, truth_options(cfg));
      const auto pred = predict_ensemble(models, forces, grid);
      table(row, 0) = g.sigma;
      table(row, 1) = g.length_scale;
      for (std::size_t d = 0; d < dofs.size(); ++d)
        table(row, static_cast<Eigen::Index>(2 + d)) = mse(pred.displacement[d], truth.displacement_of(dofs[d]));
    }
  }
  std::vector<std::string> header{"sigma", "length_scale"};
  for (auto d : dofs) header.push_back("mse_" + dof_file_tag(d));
  const fs::path p = ws / "predictions" / "mse_surface.csv";
  write_matrix_csv(p, header, table);
  files.add(p);
}

StageStatus run_predict(const RunConfig& cfg, const fs::path& ws, const CommandOptions& opts) {
  require_stage(ws, cfg, "simulate", {"forces", "trajectories"});
  require_stage(ws, cfg, "train", {"models"});
  return run_stage(ws, "predict", stage_hash(cfg, "predict"), {"predictions"}, opts, [&](StageFiles& files) {
    const auto models = load_models(ws, cfg);
    const auto test_forces = load_forces(ws / "forces", "test");
    const auto grid = output_grid(test_forces.t_grid().back(), cfg.simulation.dt_out);
    save_trajectories(predict_ensemble(models, test_forces, grid), ws / "predictions" / "test", "pred", files);
    for (const auto& sc : cfg.prediction.scenarios) {
      predict_tag(cfg, ws, models, sc.tag, sc.forcing, sc.n_samples, sc.simulate_truth, &files);
      log_line(opts, "predict: scenario '" + sc.tag + "' done");
    }
    if (cfg.prediction.gp_surface) gp_surface(cfg, ws, models, *cfg.prediction.gp_surface, files);
  });
}

StageStatus run_evaluate(const RunConfig& cfg, const fs::path& ws, const CommandOptions& opts) {
  require_stage(ws, cfg, "predict", {"predictions"});
  return run_stage(ws, "evaluate", stage_hash(cfg, "evaluate"), {"reports"}, opts, [&](StageFiles& files) {
    std::vector<std::pair<std::string, fs::path>> tags{{"test", ws / "trajectories"}};
    for (const auto& sc : cfg.prediction.scenarios)
      if (sc.simulate_truth) tags.emplace_back(sc.tag, ws / "predictions" / sc.tag);
    json summary{{"format", "deepfpft.evaluation"}, {"version", 1}, {"tags", json::object()}};
    for (const auto& [tag, truth_dir] : tags) {
      const auto pred = load_trajectories(ws / "predictions" / tag, "pred");
      const auto truth = load_trajectories(truth_dir, tag == "test" ? "test" : "truth");
      const auto report = evaluate(pred, truth);
      const fs::path dir = ws / "reports" / tag;
      write_eval_report(report, dir);
      files.add(dir / "eval.json");
      for (auto d : report.dofs) files.add(dir / ("mean_var_" + dof_file_tag(d) + ".csv"));
      summary["tags"][tag] = report.summary();
      for (std::size_t k = 0; k < report.dofs.size(); ++k)
        log_line(opts, "evaluate: " + tag + " DOF " + std::to_string(report.dofs[k] + 1) + " MSE " +
                           format_double(report.mse[k]) + " NMSE% " + format_double(report.nmse_percent[k]));
    }
    write_json(ws / "reports" / "evaluation.json", summary);
    files.add(ws / "reports" / "evaluation.json");
  });
}

StageStatus run_fpft(const RunConfig& cfg, const fs::path& ws, const CommandOptions& opts) {
  require_stage(ws, cfg, "simulate", {"forces", "trajectories"});
  require_stage(ws, cfg, "predict", {"predictions"});
  return run_stage(ws, "fpft", stage_hash(cfg, "fpft"), {"reports"}, opts, [&](StageFiles& files) {
    const auto train = load_trajectories(ws / "trajectories", "train");
    const auto truth = load_trajectories(ws / "trajectories", "test");
    const auto pred = load_trajectories(ws / "predictions" / "test", "pred");
    const auto thresholds = thresholds_for(cfg, train);
    const auto& dofs = cfg.training.dofs;
    const bool quantile_rule = cfg.reliability.thresholds.empty();
    json values = json::array();
    json per_dof = json::array();
    const fs::path dir = ws / "reports" / "fpft";
    for (std::size_t k = 0; k < dofs.size(); ++k) {
      const auto a = fpft_distribution(truth, dofs[k], thresholds[k], cfg.reliability.mode);
      const auto p = fpft_distribution(pred, dofs[k], thresholds[k], cfg.reliability.mode);
      const double ks = ks_distance(p.failure_times, a.failure_times);
      for (const auto* r : {&a, &p}) {
        const std::string prefix = r == &a ? "actual" : "predicted";
        write_fpft_result(*r, dir, prefix);
        files.add(dir / (prefix + "_" + dof_file_tag(dofs[k]) + "_times.csv"));
        files.add(dir / (prefix + "_" + dof_file_tag(dofs[k]) + "_kde.csv"));
      }
      values.push_back({{"dof", dofs[k] + 1}, {"threshold", thresholds[k]}});
      per_dof.push_back({{"dof", dofs[k] + 1},
                         {"threshold", thresholds[k]},
                         {"ks_distance", ks},
                         {"actual", fpft_summary(a)},
                         {"predicted", fpft_summary(p)}});
      log_line(opts, "fpft: DOF " + std::to_string(dofs[k] + 1) + " threshold " + format_double(thresholds[k]) +
                         " KS " + format_double(ks) + " censored " + std::to_string(a.censored_count) + "/" +
                         std::to_string(p.censored_count) + " of " + std::to_string(a.failure_times.size()));
    }
    json rule = quantile_rule ? json{{"rule", "quantile"},
                                     {"quantile", cfg.reliability.quantile},
                                     {"statistic", "per-sample peak |displacement|"},
                                     {"source", "trajectories/train"}}
                              : json{{"rule", "explicit"}};
    rule["values"] = values;
    const json summary{{"format", "deepfpft.fpft"},
                       {"version", 1},
                       {"mode", crossing_mode_name(cfg.reliability.mode)},
                       {"thresholds", rule},
                       {"per_dof", per_dof}};
    write_json(ws / "reports" / "fpft_summary.json", summary);
    files.add(ws / "reports" / "fpft_summary.json");
  });
}

}  // namespace

// ---- configuration ----------------------------------------------------------

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  try {
    RunConfig c;
    c.name = j.value("name", std::string("run"));
    if (!j.contains("seed")) throw ConfigError("config must set 'seed'");
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("workspace")) {
      fs::path w = j.at("workspace").get<std::string>();
      c.workspace = w.is_relative() ? base_dir / w : w;
    }
    if (!j.contains("system")) throw ConfigError("config must define 'system'");
    c.system = system_from_json(j.at("system"), base_dir);
    if (!j.contains("forcing")) throw ConfigError("config must define 'forcing'");
    c.forcing = forcing_from_json(j.at("forcing"));
    const std::size_t n_dof = c.system->n_dof();

    const json& tr = j.at("training");
    if (!tr.contains("dofs") || tr.at("dofs").empty()) throw ConfigError("training.dofs must list at least one DOF");
    c.training.dofs = one_based_list(tr, "dofs", n_dof);
    c.training.train = TrainConfig::from_json(tr);
    if (tr.contains("architecture")) c.training.architecture = OperatorConfig::from_json(tr.at("architecture"));

    c.simulation = simulation_from(j.at("simulation"), n_dof);
    if (c.simulation.store_dofs.empty()) c.simulation.store_dofs = c.training.dofs;
    for (auto d : c.training.dofs)
      if (std::find(c.simulation.store_dofs.begin(), c.simulation.store_dofs.end(), d) == c.simulation.store_dofs.end())
        throw ConfigError("training DOF " + std::to_string(d + 1) + " is not in simulation.store_dofs");
    output_grid(forcing_t_end(c.forcing), c.simulation.dt_out);

    if (j.contains("prediction")) {
      const json& p = j.at("prediction");
      std::set<std::string> seen;
      for (const auto& s : p.value("scenarios", json::array())) {
        c.prediction.scenarios.push_back(scenario_from(s));
        if (!seen.insert(c.prediction.scenarios.back().tag).second)
          throw ConfigError("duplicate scenario tag '" + c.prediction.scenarios.back().tag + "'");
      }
      if (p.contains("gp_surface")) {
        GpSurface g;
        g.sigmas = p.at("gp_surface").at("sigmas").get<std::vector<double>>();
        g.length_scales = p.at("gp_surface").at("length_scales").get<std::vector<double>>();
        g.n_samples = p.at("gp_surface").value("n_samples", g.n_samples);
        if (g.sigmas.empty() || g.length_scales.empty()) throw ConfigError("gp_surface needs sigmas and length_scales");
        if (g.n_samples < 1) throw ConfigError("gp_surface.n_samples must be >= 1");
        c.prediction.gp_surface = g;
      }
    }

    if (j.contains("reliability")) {
      const json& r = j.at("reliability");
      c.reliability.mode = crossing_mode_from(r.value("mode", std::string("abs")));
      c.reliability.quantile = r.value("quantile", c.reliability.quantile);
      if (!(c.reliability.quantile > 0.0 && c.reliability.quantile <= 1.0))
        throw ConfigError("reliability.quantile must lie in (0, 1]");
      if (r.contains("thresholds")) {
        const auto& t = r.at("thresholds");
        c.reliability.thresholds = t.is_number() ? std::vector<double>{t.get<double>()} : t.get<std::vector<double>>();
        if (c.reliability.thresholds.size() != 1 && c.reliability.thresholds.size() != c.training.dofs.size())
          throw ConfigError("reliability.thresholds needs one value or one per training DOF");
        if (c.reliability.mode == CrossingMode::abs)
          for (double v : c.reliability.thresholds)
            if (!(v > 0.0)) throw ConfigError("abs-mode thresholds must be > 0");
      }
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("config file not found: " + path.string());
  return from_json(read_json(path), path.parent_path());
}

json RunConfig::canonical() const {
  json scenarios = json::array();
  for (const auto& s : prediction.scenarios) scenarios.push_back(scenario_to_json(s));
  json prediction_json{{"scenarios", scenarios}};
  if (prediction.gp_surface)
    prediction_json["gp_surface"] = {{"sigmas", prediction.gp_surface->sigmas},
                                     {"length_scales", prediction.gp_surface->length_scales},
                                     {"n_samples", prediction.gp_surface->n_samples}};
  json train_json = training.train.to_json();
  train_json.erase("seed");  // derived from the master seed
  return {{"seed", seed},
          {"system", system_to_json(*system)},
          {"forcing", forcing_to_json(forcing)},
          {"simulation",
           {{"dt_out", simulation.dt_out},
            {"substeps", simulation.substeps},
            {"n_train", simulation.n_train},
            {"n_test", simulation.n_test},
            {"store_dofs", one_based(simulation.store_dofs)},
            {"store_velocity", simulation.store_velocity}}},
          {"training",
           {{"dofs", one_based(training.dofs)}, {"train", train_json}, {"architecture", training.architecture.to_json()}}},
          {"prediction", prediction_json},
          {"reliability",
           {{"mode", crossing_mode_name(reliability.mode)},
            {"quantile", reliability.quantile},
            {"thresholds", reliability.thresholds}}}};
}

std::string stage_hash(const RunConfig& config, const std::string& stage) {
  const json c = config.canonical();
  json basis;
  if (stage == "simulate") {
    basis = {{"seed", c["seed"]}, {"system", c["system"]}, {"forcing", c["forcing"]}, {"simulation", c["simulation"]}};
  } else if (stage == "train") {
    basis = {{"upstream", stage_hash(config, "simulate")}, {"training", c["training"]}};
  } else if (stage == "predict") {
    basis = {{"upstream", stage_hash(config, "train")}, {"prediction", c["prediction"]}};
  } else if (stage == "evaluate") {
    basis = {{"upstream", stage_hash(config, "predict")}};
  } else if (stage == "fpft") {
    basis = {{"upstream", stage_hash(config, "predict")}, {"reliability", c["reliability"]}};
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  basis["stage"] = stage;
  return sha256_hex(basis.dump());
}

// ---- workspace lock ---------------------------------------------------------

WorkspaceLock::WorkspaceLock(const fs::path& workspace) : path_(workspace / ".lock") {
  fs::create_directories(workspace);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw WorkspaceLockedError("workspace " + workspace.string() + " is in use (lock file " + path_.string() +
                                 "; delete it if no other run is active)");
    throw IoError("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

WorkspaceLock::~WorkspaceLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---- commands ---------------------------------------------------------------

StageStatus cmd_simulate(const RunConfig& config, const fs::path& workspace, const CommandOptions& options) {
  WorkspaceLock lock(workspace);
  return run_simulate(config, workspace, options);
}

StageStatus cmd_train(const RunConfig& config, const fs::path& workspace, const CommandOptions& options, bool resume) {
  WorkspaceLock lock(workspace);
  return run_train(config, workspace, options, resume);
}

StageStatus cmd_predict(const RunConfig& config, const fs::path& workspace, const CommandOptions& options) {
  WorkspaceLock lock(workspace);
  return run_predict(config, workspace, options);
}

void cmd_predict_override(const RunConfig& config, const fs::path& workspace, const PredictOverride& spec,
                          const CommandOptions& options) {
  if (!valid_tag(spec.tag)) throw ConfigError("tag '" + spec.tag + "' must be lowercase [a-z0-9_-] and not 'test'");
  for (const auto& sc : config.prediction.scenarios)
    if (sc.tag == spec.tag) throw ConfigError("tag '" + spec.tag + "' is already a configured scenario");
  if (spec.n_samples < 1) throw ConfigError("n_samples must be >= 1");
  WorkspaceLock lock(workspace);
  require_stage(workspace, config, "train", {"models"});
  const auto models = load_models(workspace, config);
  predict_tag(config, workspace, models, spec.tag, spec.forcing, spec.n_samples, spec.simulate_truth, nullptr);
  const fs::path dir = workspace / "predictions" / spec.tag;
  json summary{{"format", "deepfpft.prediction"},
               {"version", 1},
               {"tag", spec.tag},
               {"forcing", forcing_to_json(spec.forcing)},
               {"n_samples", spec.n_samples}};
  if (spec.simulate_truth) {
    const auto pred = load_trajectories(dir, "pred");
    const auto truth = load_trajectories(dir, "truth");
    summary["per_dof"] = mse_by_dof(config.training.dofs, pred, truth);
    for (const auto& e : summary["per_dof"])
      log_line(options, "predict: " + spec.tag + " DOF " + std::to_string(e["dof"].get<std::size_t>()) + " MSE " +
                            format_double(e["mse"].get<double>()));
  }
  write_json(dir / "summary.json", summary);
  log_line(options, "predict: wrote " + dir.string());
}

StageStatus cmd_evaluate(const RunConfig& config, const fs::path& workspace, const CommandOptions& options) {
  WorkspaceLock lock(workspace);
  return run_evaluate(config, workspace, options);
}

StageStatus cmd_fpft(const RunConfig& config, const fs::path& workspace, const CommandOptions& options) {
  WorkspaceLock lock(workspace);
  return run_fpft(config, workspace, options);
}

void cmd_pipeline(const RunConfig& config, const fs::path& workspace, const CommandOptions& options) {
  WorkspaceLock lock(workspace);
  const std::vector<std::pair<std::string, std::function<void()>>> stages{
      {"simulate", [&] { run_simulate(config, workspace, options); }},
      {"train", [&] { run_train(config, workspace, options, false); }},
      {"predict", [&] { run_predict(config, workspace, options); }},
      {"evaluate", [&] { run_evaluate(config, workspace, options); }},
      {"fpft", [&] { run_fpft(config, workspace, options); }},
  };
  for (const auto& [name, run] : stages) {
    try {
      run();
    } catch (const Error& e) {
      throw StageError(name, e);
    }
  }
}

}  // namespace deepfpft
