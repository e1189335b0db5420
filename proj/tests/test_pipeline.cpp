#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "deepfpft/io.hpp"
#include "deepfpft/pipeline.hpp"
#include "deepfpft/system_config.hpp"
#include "oracles.hpp"

using namespace deepfpft;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_config() {
  return json::parse(R"({
    "name": "tiny",
    "seed": 5,
    "system": {"kind": "shear_chain", "n_stories": 3, "story_mass": 1.0,
               "story_stiffness": [400, 300, 200], "story_damping": 1.0, "x0": 0.001, "v0": 0.0},
    "forcing": {"kind": "fourier", "n_terms": 6, "amp_low": -1, "amp_high": 1,
                "freq_low": 0, "freq_high": 10, "t_end": 1, "n_grid": 100},
    "simulation": {"dt_out": 0.01, "n_train": 12, "n_test": 10},
    "training": {"dofs": [1, 3], "steps": 40, "batch_size": 32, "pps": 10, "eval_every": 20,
                 "architecture": {"branch_widths": [100, 8, 8], "trunk_widths": [1, 8, 8]}},
    "prediction": {"scenarios": [
      {"tag": "wide", "n_samples": 6,
       "forcing": {"kind": "fourier", "n_terms": 12, "amp_low": -1, "amp_high": 1,
                   "freq_low": 0, "freq_high": 10, "t_end": 1, "n_grid": 100}}]},
    "reliability": {"quantile": 0.9}
  })");
}

RunConfig parse(const json& j) { return RunConfig::from_json(j, fs::current_path()); }

// Every regular file under `root` except manifests and the lock, by
// relative path, with its content hash.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == "manifest.json" || name == ".lock") continue;
    out[fs::relative(e.path(), root).generic_string()] = sha256_file(e.path());
  }
  return out;
}

std::string run_logged(const RunConfig& cfg, const fs::path& ws, bool force = false) {
  std::ostringstream log;
  cmd_pipeline(cfg, ws, CommandOptions{force, &log});
  return log.str();
}

int count(const std::string& hay, const std::string& needle) {
  int n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(DEEPFPFT_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config parsing and validation") {
    const auto cfg = parse(tiny_config());
    CHECK(cfg.seed == 5);
    CHECK(cfg.system->n_dof() == 3);
    CHECK(cfg.training.dofs == std::vector<std::size_t>{0, 2});
    CHECK(cfg.simulation.store_dofs == cfg.training.dofs);
    CHECK(cfg.training.train.steps == 40);
    CHECK(cfg.training.architecture.branch_widths == std::vector<std::size_t>{100, 8, 8});
    CHECK(cfg.prediction.scenarios.size() == 1);
    CHECK(cfg.reliability.mode == CrossingMode::abs);
    CHECK(cfg.reliability.quantile == 0.9);
    CHECK(cfg.reliability.thresholds.empty());

    auto bad = tiny_config();
    bad.erase("seed");
    CHECK_THROWS_AS(parse(bad), ConfigError);
    bad = tiny_config();
    bad["simulation"]["n_train"] = 0;
    CHECK_THROWS_AS(parse(bad), ConfigError);
    bad = tiny_config();
    bad["training"]["dofs"] = {4};
    CHECK_THROWS_AS(parse(bad), ConfigError);
    bad = tiny_config();
    bad["simulation"]["dt_out"] = 0.03;
    CHECK_THROWS_AS(parse(bad), GridMismatchError);
    bad = tiny_config();
    bad["reliability"]["thresholds"] = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(parse(bad), ConfigError);
    bad = tiny_config();
    bad["reliability"]["thresholds"] = -1.0;
    CHECK_THROWS_AS(parse(bad), ConfigError);
    bad = tiny_config();
    bad["prediction"]["scenarios"].push_back(bad["prediction"]["scenarios"][0]);
    CHECK_THROWS_AS(parse(bad), ConfigError);
    bad = tiny_config();
    bad["system"] = {{"file", "no_such_system.json"}};
    CHECK_THROWS_AS(parse(bad), MissingArtifactError);
    CHECK_THROWS_AS(RunConfig::load("/nonexistent/run.json"), MissingArtifactError);
  }

  TEST_CASE("stage hashes cover meaning, not formatting") {
    const auto dir = oracle::scratch_dir("hash");
    const auto base = parse(tiny_config());
    write_text(dir / "a.json", "// comment\n" + tiny_config().dump(2));
    write_text(dir / "b.json", "/* other */" + tiny_config().dump());
    const auto a = RunConfig::load(dir / "a.json");
    const auto b = RunConfig::load(dir / "b.json");
    for (const char* stage : {"simulate", "train", "predict", "evaluate", "fpft"}) {
      CHECK(stage_hash(a, stage) == stage_hash(base, stage));
      CHECK(stage_hash(b, stage) == stage_hash(base, stage));
    }

    auto j = tiny_config();
    j["training"]["steps"] = 41;
    const auto t = parse(j);
    CHECK(stage_hash(t, "simulate") == stage_hash(base, "simulate"));
    CHECK(stage_hash(t, "train") != stage_hash(base, "train"));
    CHECK(stage_hash(t, "fpft") != stage_hash(base, "fpft"));

    j = tiny_config();
    j["reliability"]["quantile"] = 0.8;
    const auto r = parse(j);
    CHECK(stage_hash(r, "predict") == stage_hash(base, "predict"));
    CHECK(stage_hash(r, "evaluate") == stage_hash(base, "evaluate"));
    CHECK(stage_hash(r, "fpft") != stage_hash(base, "fpft"));

    j = tiny_config();
    j["seed"] = 6;
    CHECK(stage_hash(parse(j), "simulate") != stage_hash(base, "simulate"));
    j = tiny_config();
    j["name"] = "renamed";
    CHECK(stage_hash(parse(j), "simulate") == stage_hash(base, "simulate"));
    CHECK_THROWS_AS(stage_hash(base, "bogus"), ConfigError);
    fs::remove_all(dir);
  }

  TEST_CASE("full pipeline, skipping and staged invalidation") {
    const auto ws = oracle::scratch_dir("pipeline");
    const auto cfg = parse(tiny_config());
    const auto first = run_logged(cfg, ws);
    CHECK(count(first, ": done") == 5);

    for (const char* f : {"forces/train.csv", "forces/train.json", "forces/test.csv", "trajectories/train_dof_001.csv",
                          "trajectories/test_dof_003.csv", "trajectories/train.json", "models/dof_001.json",
                          "models/dof_003.json", "models/dof_001_loss.csv", "predictions/test/pred_dof_001.csv",
                          "predictions/wide/forces.csv", "predictions/wide/pred_dof_003.csv",
                          "predictions/wide/truth_dof_003.csv", "reports/test/eval.json",
                          "reports/test/mean_var_dof_001.csv", "reports/wide/eval.json", "reports/evaluation.json",
                          "reports/fpft/actual_dof_001_times.csv", "reports/fpft/predicted_dof_003_kde.csv",
                          "reports/fpft_summary.json", "forces/manifest.json", "models/manifest.json"})
      CHECK_MESSAGE(fs::exists(ws / f), f);
    CHECK_FALSE(fs::exists(ws / "models" / "dof_002.json"));
    CHECK_FALSE(fs::exists(ws / ".lock"));

    const auto summary = read_json(ws / "reports" / "fpft_summary.json");
    CHECK(summary["thresholds"]["rule"] == "quantile");
    CHECK(summary["thresholds"]["quantile"] == 0.9);
    REQUIRE(summary["per_dof"].size() == 2);
    CHECK(summary["per_dof"][1]["dof"] == 3);
    const double ks = summary["per_dof"][0]["ks_distance"];
    CHECK((ks >= 0.0 && ks <= 1.0));
    // The recorded threshold is the 0.9 quantile of training peaks.
    const auto train_disp = read_matrix_csv(ws / "trajectories" / "train_dof_001.csv").data;
    std::vector<double> peaks;
    for (Eigen::Index s = 0; s < train_disp.rows(); ++s) peaks.push_back(train_disp.row(s).cwiseAbs().maxCoeff());
    std::sort(peaks.begin(), peaks.end());
    const double h = 0.9 * static_cast<double>(peaks.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    const double q = peaks[lo] + (h - static_cast<double>(lo)) * (peaks[lo + 1] - peaks[lo]);
    CHECK(summary["per_dof"][0]["threshold"].get<double>() == doctest::Approx(q).epsilon(1e-14));

    const auto before = tree(ws);
    const auto second = run_logged(cfg, ws);
    CHECK(count(second, "up to date, skipped") == 5);
    CHECK(tree(ws) == before);

    // A training-only change keeps the simulation and reruns the rest.
    auto j = tiny_config();
    j["training"]["steps"] = 60;
    const auto changed = run_logged(parse(j), ws);
    CHECK(changed.find("simulate: up to date") != std::string::npos);
    CHECK(changed.find("train: running") != std::string::npos);
    CHECK(changed.find("fpft: running") != std::string::npos);
    const auto after = tree(ws);
    CHECK(after.at("forces/train.csv") == before.at("forces/train.csv"));
    CHECK(after.at("trajectories/test_dof_001.csv") == before.at("trajectories/test_dof_001.csv"));
    CHECK(after.at("models/dof_001.json") != before.at("models/dof_001.json"));

    // Deleting downstream artifacts leaves upstream ones untouched.
    const auto upstream = tree(ws);
    fs::remove_all(ws / "reports");
    const auto again = run_logged(parse(j), ws);
    CHECK(again.find("predict: up to date") != std::string::npos);
    CHECK(again.find("evaluate: running") != std::string::npos);
    CHECK(tree(ws) == upstream);

    // A tampered artifact is detected and regenerated.
    write_text(ws / "forces" / "test.csv", "garbage\n");
    const auto repaired = run_logged(parse(j), ws);
    CHECK(repaired.find("simulate: running") != std::string::npos);
    CHECK(tree(ws) == upstream);

    CHECK(count(run_logged(parse(j), ws, true), ": done") == 5);
    CHECK(tree(ws) == upstream);
    fs::remove_all(ws);
  }

  TEST_CASE("two workspaces produce byte-identical artifacts") {
    const auto a = oracle::scratch_dir("det_a");
    const auto b = oracle::scratch_dir("det_b");
    const auto cfg = parse(tiny_config());
    run_logged(cfg, a);
    run_logged(cfg, b);
    const auto ta = tree(a), tb = tree(b);
    CHECK(ta.size() > 20);
    CHECK(ta == tb);
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("stage prerequisites and errors") {
    const auto ws = oracle::scratch_dir("prereq");
    const auto cfg = parse(tiny_config());
    CHECK_THROWS_AS(cmd_train(cfg, ws), MissingArtifactError);
    CHECK_THROWS_AS(cmd_predict(cfg, ws), MissingArtifactError);
    CHECK_THROWS_AS(cmd_fpft(cfg, ws), MissingArtifactError);
    CHECK(cmd_simulate(cfg, ws) == StageStatus::ran);
    CHECK(cmd_simulate(cfg, ws) == StageStatus::skipped);
    CHECK_THROWS_AS(cmd_evaluate(cfg, ws), MissingArtifactError);
    CHECK(cmd_train(cfg, ws) == StageStatus::ran);
    const auto m1 = sha256_file(ws / "models" / "dof_001.json");

    // Resuming continues from the saved optimizer state.
    CHECK(cmd_train(cfg, ws, {}, true) == StageStatus::ran);
    const auto resumed = load_operator(ws / "models" / "dof_001.json");
    CHECK(resumed.optimizer->step_count == 80);
    CHECK(sha256_file(ws / "models" / "dof_001.json") != m1);
    // ...and equals one uninterrupted run of the combined length.
    auto j = tiny_config();
    j["training"]["steps"] = 80;
    const auto ws2 = oracle::scratch_dir("prereq_long");
    cmd_simulate(parse(j), ws2);
    cmd_train(parse(j), ws2);
    const auto longer = load_operator(ws2 / "models" / "dof_001.json");
    CHECK(operator_to_json(longer)["branch"] == operator_to_json(resumed)["branch"]);
    CHECK(operator_to_json(longer)["optimizer"] == operator_to_json(resumed)["optimizer"]);
    fs::remove_all(ws2);

    // A missing model makes the train stage stale again.
    fs::remove(ws / "models" / "dof_003.json");
    cmd_pipeline(cfg, ws);
    CHECK(fs::exists(ws / "models" / "dof_003.json"));
    fs::remove_all(ws);
  }

  TEST_CASE("zero-shot prediction override") {
    const auto ws = oracle::scratch_dir("override");
    const auto cfg = parse(tiny_config());
    PredictOverride spec;
    spec.forcing = FourierSpec{50, -1.0, 1.0, 0.0, 10.0, 1.0, 100};
    spec.n_samples = 5;
    spec.simulate_truth = true;
    CHECK_THROWS_AS(cmd_predict_override(cfg, ws, spec), MissingArtifactError);
    cmd_simulate(cfg, ws);
    cmd_train(cfg, ws);
    cmd_predict_override(cfg, ws, spec);
    const auto summary = read_json(ws / "predictions" / "zsl" / "summary.json");
    CHECK(summary["n_samples"] == 5);
    CHECK(summary["per_dof"].size() == 2);
    CHECK(fs::exists(ws / "predictions" / "zsl" / "pred_dof_003.csv"));

    spec.tag = "test";
    CHECK_THROWS_AS(cmd_predict_override(cfg, ws, spec), ConfigError);
    spec.tag = "wide";
    CHECK_THROWS_AS(cmd_predict_override(cfg, ws, spec), ConfigError);
    spec.tag = "other";
    spec.forcing = FourierSpec{20, -1.0, 1.0, 0.0, 10.0, 2.0, 100};
    CHECK_THROWS_AS(cmd_predict_override(cfg, ws, spec), GridMismatchError);
    fs::remove_all(ws);
  }

  TEST_CASE("workspace lock excludes concurrent runs") {
    const auto ws = oracle::scratch_dir("lock");
    {
      WorkspaceLock lock(ws);
      CHECK(fs::exists(ws / ".lock"));
      CHECK_THROWS_AS(WorkspaceLock{ws}, WorkspaceLockedError);
      CHECK_THROWS_AS(cmd_simulate(parse(tiny_config()), ws), WorkspaceLockedError);
    }
    CHECK_FALSE(fs::exists(ws / ".lock"));
    WorkspaceLock again(ws);
    fs::remove_all(ws);
  }

  TEST_CASE("pipeline failures name the stage") {
    const auto ws = oracle::scratch_dir("stage_error");
    auto j = tiny_config();
    // Far outside the RK4 stability region at this step size.
    j["system"]["story_stiffness"] = {1e9, 1e9, 1e9};
    try {
      cmd_pipeline(parse(j), ws);
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(e.stage() == "simulate");
      CHECK(e.kind() == "NonFiniteStateError");
    }
    fs::remove_all(ws);
  }

  TEST_CASE("command-line tool") {
    const auto dir = oracle::scratch_dir("cli");
    auto j = tiny_config();
    j["workspace"] = "ws";
    write_text(dir / "run.json", "// tiny run\n" + j.dump(2));
    const auto err = dir / "stderr.txt";

    CHECK(run_cli("pipeline --config " + (dir / "run.json").string(), err) == 0);
    CHECK(fs::exists(dir / "ws" / "reports" / "fpft_summary.json"));
    CHECK(run_cli("fpft --config " + (dir / "run.json").string(), err) == 0);

    const auto other = dir / "elsewhere";
    CHECK(run_cli("simulate --config " + (dir / "run.json").string() + " --workspace " + other.string(), err) == 0);
    CHECK(fs::exists(other / "forces" / "train.csv"));
    CHECK(run_cli("predict --config " + (dir / "run.json").string() + " --workspace " + other.string(), err) == 1);
    const auto line = json::parse(read_text(err));
    CHECK(line["error"] == "MissingArtifactError");
    CHECK(line["stage"] == "predict");

    write_json(dir / "zsl.json", json{{"kind", "fourier"}, {"n_terms", 30}, {"amp_low", -1}, {"amp_high", 1},
                                      {"freq_low", 0}, {"freq_high", 10}, {"t_end", 1}, {"n_grid", 100}});
    CHECK(run_cli("predict --config " + (dir / "run.json").string() + " --test-forcing " +
                      (dir / "zsl.json").string() + " --tag ft30 --n-samples 4 --simulate-truth",
                  err) == 0);
    CHECK(fs::exists(dir / "ws" / "predictions" / "ft30" / "summary.json"));

    CHECK(run_cli("simulate --config " + (dir / "missing.json").string(), err) == 1);
    CHECK(json::parse(read_text(err))["error"] == "MissingArtifactError");
    CHECK(run_cli("frobnicate", err) == 2);
    CHECK(run_cli("train", err) == 2);
    fs::remove_all(dir);
  }
}
