#include "deepfpft/deeponet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "deepfpft/errors.hpp"
#include "deepfpft/io.hpp"

namespace deepfpft {

using nlohmann::json;

namespace {

constexpr std::size_t kChunkRows = 64;

Eigen::MatrixXd gather_branch(const TripletDataset& data, std::span<const std::size_t> rows) {
  Eigen::MatrixXd x(data.branch_inputs.cols(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c)
    x.col(static_cast<Eigen::Index>(c)) = data.branch_inputs.row(static_cast<Eigen::Index>(rows[c])).transpose();
  return x;
}

Eigen::MatrixXd gather_trunk(const TripletDataset& data, std::span<const std::size_t> rows) {
  Eigen::MatrixXd t(1, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c) t(0, static_cast<Eigen::Index>(c)) = data.trunk_inputs[static_cast<Eigen::Index>(rows[c])];
  return t;
}

OperatorGradients zero_gradients(const OperatorNet& model) {
  OperatorGradients g;
  g.branch = MlpGradients::zeros_like(model.branch);
  g.trunk = MlpGradients::zeros_like(model.trunk);
  return g;
}

// Squared-error sum (in .loss) and gradient contributions of one chunk, with
// the 1/total normalization of the full batch already applied.
OperatorGradients chunk_gradients(const OperatorNet& model, const TripletDataset& data,
                                  std::span<const std::size_t> rows, double total) {
  OperatorGradients g = zero_gradients(model);
  MlpBatchCache branch_cache, trunk_cache;
  const Eigen::MatrixXd b = mlp_forward_batch(model.branch, gather_branch(data, rows), &branch_cache);
  const Eigen::MatrixXd t = mlp_forward_batch(model.trunk, gather_trunk(data, rows), &trunk_cache);
  Eigen::RowVectorXd pred = b.cwiseProduct(t).colwise().sum();
  if (model.use_output_bias) pred.array() += model.output_bias;
  Eigen::RowVectorXd diff(pred.size());
  for (std::size_t c = 0; c < rows.size(); ++c)
    diff[static_cast<Eigen::Index>(c)] = pred[static_cast<Eigen::Index>(c)] - data.targets[static_cast<Eigen::Index>(rows[c])];
  g.loss = diff.squaredNorm();
  const Eigen::RowVectorXd scale = (2.0 / total) * diff;
  g.bias = model.use_output_bias ? scale.sum() : 0.0;
  // d pred / d branch_out = trunk_out and vice versa.
  mlp_backward_batch(model.branch, branch_cache, (t.array().rowwise() * scale.array()).matrix(), g.branch);
  mlp_backward_batch(model.trunk, trunk_cache, (b.array().rowwise() * scale.array()).matrix(), g.trunk);
  return g;
}

void add_into(OperatorGradients& acc, const OperatorGradients& g) {
  acc.branch += g.branch;
  acc.trunk += g.trunk;
  acc.bias += g.bias;
  acc.loss += g.loss;
}

double dataset_mse(const OperatorNet& model, const TripletDataset& data) {
  const std::size_t n = data.size();
  const std::size_t n_chunks = (n + 1023) / 1024;
  std::vector<double> partial(n_chunks, 0.0);
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * 1024;
    const std::span<const std::size_t> chunk(rows.data() + begin, std::min<std::size_t>(1024, n - begin));
    const Eigen::MatrixXd b = mlp_forward_batch(model.branch, gather_branch(data, chunk));
    const Eigen::MatrixXd t = mlp_forward_batch(model.trunk, gather_trunk(data, chunk));
    double sum = 0.0;
    for (Eigen::Index k = 0; k < b.cols(); ++k) {
      const double pred = b.col(k).dot(t.col(k)) + (model.use_output_bias ? model.output_bias : 0.0);
      const double d = pred - data.targets[static_cast<Eigen::Index>(chunk[static_cast<std::size_t>(k)])];
      sum += d * d;
    }
    partial[static_cast<std::size_t>(c)] = sum;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total / static_cast<double>(n);
}

json widths_json(const std::vector<std::size_t>& w) { return w; }

}  // namespace

TripletDataset assemble_triplets(const ForceEnsemble& forces, const TrajectoryEnsemble& trajectories,
                                 std::size_t dof, std::size_t pps, Rng& rng, std::size_t branch_width) {
  if (pps < 1) throw ConfigError("pps must be >= 1");
  if (forces.size() != trajectories.n_samples())
    throw GridMismatchError("force ensemble has " + std::to_string(forces.size()) + " samples, trajectories have " +
                            std::to_string(trajectories.n_samples()));
  if (!trajectories.has_dof(dof))
    throw GridMismatchError("trajectories do not store DOF " + std::to_string(dof + 1));
  if (forces.empty()) throw EmptyDataError("cannot assemble triplets from an empty ensemble");
  const auto& grid = trajectories.t_grid;
  const double t_end = grid.back();
  if (std::abs(forces.t_grid().back() - t_end) > 1e-9 * std::max(1.0, t_end))
    throw GridMismatchError("force and trajectory horizons differ");

  const auto& disp = trajectories.displacement_of(dof);
  const std::size_t n_times = grid.size();
  const std::size_t n_samples = forces.size();
  TripletDataset data;
  data.t_end = t_end;
  data.pps = pps;
  data.dof = dof;
  const auto n_rows = static_cast<Eigen::Index>(n_samples * pps);
  data.branch_inputs.resize(n_rows, static_cast<Eigen::Index>(branch_width));
  data.trunk_inputs.resize(n_rows);
  data.targets.resize(n_rows);
  data.sample_ids.resize(static_cast<std::size_t>(n_rows));
  data.time_indices.resize(static_cast<std::size_t>(n_rows));

  std::vector<std::size_t> pool(n_times);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto f = branch_input(forces.realizations[s], branch_width);
    const Eigen::Map<const Eigen::RowVectorXd> frow(f.data(), static_cast<Eigen::Index>(f.size()));
    std::vector<std::size_t> picks(pps);
    if (pps <= n_times) {
      // Partial Fisher-Yates: pps distinct grid indices.
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      for (std::size_t k = 0; k < pps; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n_times - 1);
        std::swap(pool[k], pool[pick(rng)]);
        picks[k] = pool[k];
      }
      std::sort(picks.begin(), picks.end());
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n_times - 1);
      for (auto& p : picks) p = pick(rng);
      std::sort(picks.begin(), picks.end());
    }
    for (std::size_t k = 0; k < pps; ++k) {
      const auto r = static_cast<Eigen::Index>(s * pps + k);
      data.branch_inputs.row(r) = frow;
      data.trunk_inputs[r] = grid[picks[k]];
      data.targets[r] = disp(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(picks[k]));
      data.sample_ids[static_cast<std::size_t>(r)] = s;
      data.time_indices[static_cast<std::size_t>(r)] = picks[k];
    }
  }
  return data;
}

json OperatorConfig::to_json() const {
  auto name = [](Activation a) { return a == Activation::relu ? "relu" : "identity"; };
  return {{"branch_widths", widths_json(branch_widths)},
          {"trunk_widths", widths_json(trunk_widths)},
          {"branch_output", name(branch_output)},
          {"trunk_output", name(trunk_output)},
          {"output_bias", output_bias}};
}

OperatorConfig OperatorConfig::from_json(const json& j) {
  auto act = [](const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + s + "'");
  };
  OperatorConfig c;
  c.branch_widths = j.value("branch_widths", c.branch_widths);
  c.trunk_widths = j.value("trunk_widths", c.trunk_widths);
  c.branch_output = act(j.value("branch_output", std::string("identity")));
  c.trunk_output = act(j.value("trunk_output", std::string("relu")));
  c.output_bias = j.value("output_bias", c.output_bias);
  if (c.branch_widths.size() < 2 || c.trunk_widths.size() < 2)
    throw ConfigError("branch and trunk need at least an input and an output width");
  if (c.branch_widths.back() != c.trunk_widths.back())
    throw ConfigError("branch and trunk output widths must match");
  if (c.trunk_widths.front() != 1) throw ConfigError("trunk input width must be 1 (time)");
  return c;
}

OperatorNet OperatorNet::create(const OperatorConfig& config, std::size_t output_dof, Rng& rng) {
  if (config.branch_widths.back() != config.trunk_widths.back())
    throw ShapeError("branch and trunk output widths must match");
  OperatorNet net;
  net.branch = Mlp::glorot(config.branch_widths, Activation::relu, config.branch_output, rng);
  net.trunk = Mlp::glorot(config.trunk_widths, Activation::relu, config.trunk_output, rng);
  net.output_dof = output_dof;
  net.use_output_bias = config.output_bias;
  net.hyperparameters["architecture"] = config.to_json();
  return net;
}

std::vector<std::span<double>> OperatorNet::parameter_spans() {
  auto out = branch.parameter_spans();
  for (auto s : trunk.parameter_spans()) out.push_back(s);
  if (use_output_bias) out.emplace_back(&output_bias, 1);
  return out;
}

std::vector<std::span<const double>> OperatorGradients::spans() const {
  auto out = branch.spans();
  for (auto s : trunk.spans()) out.push_back(s);
  return out;
}

double deeponet_forward(const OperatorNet& model, const Eigen::VectorXd& force, double t) {
  if (static_cast<std::size_t>(force.size()) != model.branch.input_width())
    throw ShapeError("force vector has width " + std::to_string(force.size()) + ", branch expects " +
                     std::to_string(model.branch.input_width()));
  const auto b = mlp_forward(model.branch, force).output;
  const auto tr = mlp_forward(model.trunk, Eigen::VectorXd::Constant(1, t)).output;
  return b.dot(tr) + (model.use_output_bias ? model.output_bias : 0.0);
}

OperatorGradients deeponet_gradients(const OperatorNet& model, const TripletDataset& data,
                                     std::span<const std::size_t> rows) {
  if (rows.empty()) throw EmptyDataError("gradient of an empty batch");
  if (static_cast<std::size_t>(data.branch_inputs.cols()) != model.branch.input_width())
    throw ShapeError("dataset force width does not match the branch input");
  const std::size_t n_chunks = (rows.size() + kChunkRows - 1) / kChunkRows;
  const double total = static_cast<double>(rows.size());
  std::vector<OperatorGradients> parts(n_chunks);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kChunkRows;
    parts[static_cast<std::size_t>(c)] =
        chunk_gradients(model, data, rows.subspan(begin, std::min(kChunkRows, rows.size() - begin)), total);
  }
  OperatorGradients g = std::move(parts.front());
  for (std::size_t c = 1; c < n_chunks; ++c) add_into(g, parts[c]);
  g.loss /= total;
  return g;
}

OperatorGradients deeponet_gradients_reference(const OperatorNet& model, const TripletDataset& data,
                                               std::span<const std::size_t> rows) {
  if (rows.empty()) throw EmptyDataError("gradient of an empty batch");
  OperatorGradients g = zero_gradients(model);
  const double total = static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    const Eigen::VectorXd f = data.branch_inputs.row(static_cast<Eigen::Index>(r)).transpose();
    const auto fb = mlp_forward(model.branch, f);
    const auto ft = mlp_forward(model.trunk, Eigen::VectorXd::Constant(1, data.trunk_inputs[static_cast<Eigen::Index>(r)]));
    double pred = fb.output.dot(ft.output);
    if (model.use_output_bias) pred += model.output_bias;
    const double diff = pred - data.targets[static_cast<Eigen::Index>(r)];
    const double scale = 2.0 * diff / total;
    g.loss += diff * diff;
    if (model.use_output_bias) g.bias += scale;
    g.branch += mlp_backward(model.branch, fb.cache, scale * ft.output);
    g.trunk += mlp_backward(model.trunk, ft.cache, scale * fb.output);
  }
  g.loss /= total;
  return g;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (pps < 1) throw ConfigError("training.pps must be >= 1");
  if (eval_every < 1) throw ConfigError("training.eval_every must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate must be > 0");
}

json TrainConfig::to_json() const {
  return {{"steps", steps}, {"batch_size", batch_size}, {"learning_rate", learning_rate},
          {"seed", seed},   {"pps", pps},               {"eval_every", eval_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.pps = j.value("pps", c.pps);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.validate();
  return c;
}

TrainResult train(OperatorNet model, const TripletDataset& data, const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw EmptyDataError("training dataset is empty");
  if (static_cast<std::size_t>(data.branch_inputs.cols()) != model.branch.input_width())
    throw ShapeError("dataset force width " + std::to_string(data.branch_inputs.cols()) +
                     " does not match the branch input width " + std::to_string(model.branch.input_width()));

  if (!model.optimizer) {
    model.branch.set_standardizer(standardizer_fit(data.branch_inputs));
    Eigen::MatrixXd times = data.trunk_inputs;
    model.trunk.set_standardizer(standardizer_fit(times));
    model.optimizer = AdamState{};
    model.t_end = data.t_end;
  }
  model.hyperparameters["training"] = config.to_json();
  AdamState& adam = *model.optimizer;
  adam.learning_rate = config.learning_rate;

  const std::size_t n = data.size();
  const std::size_t batch = std::min(config.batch_size, n);
  const std::uint64_t batches_per_epoch = (n + batch - 1) / batch;
  std::vector<std::size_t> order(n);
  std::uint64_t order_epoch = ~std::uint64_t{0};

  TrainResult result;
  result.step_losses.reserve(config.steps);
  for (std::uint64_t k = 0; k < config.steps; ++k) {
    const std::uint64_t step = adam.step_count;
    const std::uint64_t epoch = step / batches_per_epoch;
    const std::uint64_t slot = step % batches_per_epoch;
    if (epoch != order_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle_rng(derive_seed(config.seed, "epoch", epoch));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      order_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(slot) * batch;
    const std::span<const std::size_t> rows(order.data() + begin, std::min(batch, n - begin));
    const OperatorGradients g = deeponet_gradients(model, data, rows);
    if (!std::isfinite(g.loss))
      throw NonFiniteLossError(step, "training loss became non-finite at step " + std::to_string(step));
    auto grads = g.spans();
    double bias_grad = g.bias;
    if (model.use_output_bias) grads.emplace_back(&bias_grad, 1);
    adam_step(model.parameter_spans(), grads, adam);
    result.step_losses.push_back(g.loss);
    if (adam.step_count % config.eval_every == 0)
      model.loss_history.push_back({adam.step_count, dataset_mse(model, data)});
  }
  result.model = std::move(model);
  return result;
}

namespace {

void check_prediction_inputs(std::span<const OperatorNet> models, const ForceEnsemble& forces) {
  if (forces.empty()) return;
  const double t_end = forces.t_grid().back();
  for (const auto& m : models) {
    if (m.t_end > 0.0 && std::abs(m.t_end - t_end) > 1e-9 * std::max(1.0, t_end))
      throw GridMismatchError("force horizon " + format_double(t_end) + " differs from the horizon the DOF " +
                              std::to_string(m.output_dof + 1) + " model was trained on (" + format_double(m.t_end) + ")");
  }
}

TrajectoryEnsemble empty_prediction(std::span<const OperatorNet> models, const std::vector<double>& t_grid) {
  TrajectoryEnsemble ens;
  ens.t_grid = t_grid;
  for (const auto& m : models) {
    ens.dofs.push_back(m.output_dof);
    ens.displacement.emplace_back(0, static_cast<Eigen::Index>(t_grid.size()));
  }
  ens.metadata["kind"] = "predicted";
  return ens;
}

}  // namespace

TrajectoryEnsemble predict_ensemble(std::span<const OperatorNet> models, const ForceEnsemble& forces,
                                    const std::vector<double>& t_grid) {
  check_prediction_inputs(models, forces);
  TrajectoryEnsemble ens = empty_prediction(models, t_grid);
  const auto n_samples = static_cast<Eigen::Index>(forces.size());
  const auto n_times = static_cast<Eigen::Index>(t_grid.size());
  if (n_samples == 0) return ens;
  const Eigen::MatrixXd times = Eigen::Map<const Eigen::RowVectorXd>(t_grid.data(), n_times);

  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    const auto& model = models[mi];
    const std::size_t width = model.branch.input_width();
    const Eigen::MatrixXd trunk_out = mlp_forward_batch(model.trunk, times);  // p x n_times
    Eigen::MatrixXd& out = ens.displacement[mi];
    out.resize(n_samples, n_times);
    constexpr Eigen::Index kChunk = 256;
    const Eigen::Index n_chunks = (n_samples + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < n_chunks; ++c) {
      const Eigen::Index begin = c * kChunk;
      const Eigen::Index count = std::min(kChunk, n_samples - begin);
      Eigen::MatrixXd x(static_cast<Eigen::Index>(width), count);
      for (Eigen::Index s = 0; s < count; ++s) {
        const auto f = branch_input(forces.realizations[static_cast<std::size_t>(begin + s)], width);
        x.col(s) = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(width));
      }
      const Eigen::MatrixXd branch_out = mlp_forward_batch(model.branch, x);  // p x count
      out.middleRows(begin, count).noalias() = branch_out.transpose() * trunk_out;
      if (model.use_output_bias) out.middleRows(begin, count).array() += model.output_bias;
    }
  }
  return ens;
}

TrajectoryEnsemble predict_ensemble_serial(std::span<const OperatorNet> models, const ForceEnsemble& forces,
                                           const std::vector<double>& t_grid) {
  check_prediction_inputs(models, forces);
  TrajectoryEnsemble ens = empty_prediction(models, t_grid);
  const auto n_samples = static_cast<Eigen::Index>(forces.size());
  const auto n_times = static_cast<Eigen::Index>(t_grid.size());
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    const auto& model = models[mi];
    Eigen::MatrixXd& out = ens.displacement[mi];
    out.resize(n_samples, n_times);
    for (Eigen::Index s = 0; s < n_samples; ++s) {
      const auto f = branch_input(forces.realizations[static_cast<std::size_t>(s)], model.branch.input_width());
      const Eigen::VectorXd fv = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
      for (Eigen::Index i = 0; i < n_times; ++i) out(s, i) = deeponet_forward(model, fv, t_grid[static_cast<std::size_t>(i)]);
    }
  }
  return ens;
}

json operator_to_json(const OperatorNet& model) {
  json history = json::array();
  for (const auto& p : model.loss_history) history.push_back({p.step, p.loss});
  return {{"format", "deepfpft.operator"},
          {"version", 1},
          {"output_dof", model.output_dof + 1},
          {"t_end", model.t_end},
          {"output_bias", {{"enabled", model.use_output_bias}, {"value", model.output_bias}}},
          {"branch", mlp_to_json(model.branch)},
          {"trunk", mlp_to_json(model.trunk)},
          {"training", {{"hyperparameters", model.hyperparameters}, {"loss_history", history}}},
          {"optimizer", model.optimizer ? adam_to_json(*model.optimizer) : json(nullptr)}};
}

OperatorNet operator_from_json(const json& j) {
  try {
    if (j.value("format", "") != "deepfpft.operator") throw ConfigError("not an operator model document");
    if (j.value("version", 0) != 1) throw ConfigError("unsupported operator model version");
    OperatorNet m;
    m.output_dof = j.at("output_dof").get<std::size_t>() - 1;
    m.t_end = j.at("t_end").get<double>();
    m.use_output_bias = j.at("output_bias").at("enabled").get<bool>();
    m.output_bias = j.at("output_bias").at("value").get<double>();
    m.branch = mlp_from_json(j.at("branch"));
    m.trunk = mlp_from_json(j.at("trunk"));
    if (m.branch.output_width() != m.trunk.output_width())
      throw ShapeError("branch and trunk output widths differ in model document");
    const auto& training = j.at("training");
    m.hyperparameters = training.at("hyperparameters");
    for (const auto& p : training.at("loss_history"))
      m.loss_history.push_back({p.at(0).get<std::uint64_t>(), p.at(1).get<double>()});
    if (!j.at("optimizer").is_null()) m.optimizer = adam_from_json(j.at("optimizer"));
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("operator model document: ") + e.what());
  }
}

void save_operator(const OperatorNet& model, const std::filesystem::path& path) {
  write_json(path, operator_to_json(model));
}

OperatorNet load_operator(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("model file not found: " + path.string());
  return operator_from_json(read_json(path));
}

void write_loss_history(const OperatorNet& model, const std::filesystem::path& path) {
  Eigen::MatrixXd data(static_cast<Eigen::Index>(model.loss_history.size()), 2);
  for (std::size_t i = 0; i < model.loss_history.size(); ++i) {
    data(static_cast<Eigen::Index>(i), 0) = static_cast<double>(model.loss_history[i].step);
    data(static_cast<Eigen::Index>(i), 1) = model.loss_history[i].loss;
  }
  const std::vector<std::string> header{"step", "train_mse"};
  write_matrix_csv(path, header, data);
}

}  // namespace deepfpft
