#include "deepfpft/neuralnet.hpp"

#include <cmath>
#include <string>

#include "deepfpft/errors.hpp"

namespace deepfpft {

using nlohmann::json;

namespace {

constexpr double kMinStddev = 1e-12;

template <class Matrix>
Standardizer fit_rows(const Matrix& rows) {
  if (rows.rows() < 2) throw EmptyDataError("standardizer needs at least two rows");
  const double n = static_cast<double>(rows.rows());
  Standardizer s;
  s.mean = rows.colwise().sum().transpose() / n;
  s.stddev.resize(rows.cols());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    const double var = (rows.col(j).array() - s.mean[j]).square().sum() / n;
    const double sd = std::sqrt(var);
    s.stddev[j] = sd < kMinStddev ? 1.0 : sd;
  }
  return s;
}

void apply_activation(Activation a, Eigen::Ref<Eigen::MatrixXd> z) {
  if (a == Activation::relu) z = z.cwiseMax(0.0);
}

// delta *= f'(pre); relu'(0) == 0.
template <class Delta, class Pre>
void apply_derivative(Activation a, Delta& delta, const Pre& pre) {
  if (a == Activation::relu) delta = (pre.array() > 0.0).select(delta.array(), 0.0).matrix();
}

const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

Activation activation_from(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

}  // namespace

Standardizer Standardizer::identity(std::size_t width) {
  const auto n = static_cast<Eigen::Index>(width);
  return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
}

Standardizer standardizer_fit(const RowMatrix& rows) { return fit_rows(rows); }
Standardizer standardizer_fit(const Eigen::MatrixXd& rows) { return fit_rows(rows); }

Eigen::MatrixXd glorot_normal_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in < 1 || fan_out < 1) throw ShapeError("layer fan-in and fan-out must be >= 1");
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  std::normal_distribution<double> normal(0.0, sd);
  Eigen::MatrixXd w(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
  // Row-major fill so the draw order matches the serialized order.
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = normal(rng);
  return w;
}

Mlp::Mlp(std::vector<DenseLayer> layers, Standardizer standardizer)
    : layers_(std::move(layers)), standardizer_(std::move(standardizer)) {
  if (layers_.empty()) throw ShapeError("an MLP needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (static_cast<std::size_t>(l.biases.size()) != l.fan_out())
      throw ShapeError("layer " + std::to_string(i) + " bias length does not match its output width");
    if (i > 0 && l.fan_in() != layers_[i - 1].fan_out())
      throw ShapeError("layer " + std::to_string(i) + " input width does not match the previous layer");
  }
  set_standardizer(std::move(standardizer_));
}

Mlp Mlp::glorot(std::span<const std::size_t> widths, Activation hidden, Activation output, Rng& rng) {
  if (widths.size() < 2) throw ShapeError("an MLP needs an input and an output width");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    DenseLayer l;
    l.weights = glorot_normal_init(widths[i], widths[i + 1], rng);
    l.biases = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(widths[i + 1]));
    l.activation = (i + 2 == widths.size()) ? output : hidden;
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers), Standardizer::identity(widths.front()));
}

void Mlp::set_standardizer(Standardizer s) {
  if (s.mean.size() != s.stddev.size() || s.width() != input_width())
    throw ShapeError("standardizer width does not match the network input");
  if ((s.stddev.array() <= 0.0).any()) throw ShapeError("standardizer deviations must be positive");
  standardizer_ = std::move(s);
}

std::size_t Mlp::input_width() const { return layers_.empty() ? 0 : layers_.front().fan_in(); }
std::size_t Mlp::output_width() const { return layers_.empty() ? 0 : layers_.back().fan_out(); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.biases.size());
  return n;
}

std::vector<std::span<double>> Mlp::parameter_spans() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    out.emplace_back(l.biases.data(), static_cast<std::size_t>(l.biases.size()));
  }
  return out;
}

MlpGradients MlpGradients::zeros_like(const Mlp& net) {
  MlpGradients g;
  for (const auto& l : net.layers()) {
    g.weights.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(l.biases.size()));
  }
  g.input = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.input_width()));
  return g;
}

std::vector<std::span<const double>> MlpGradients::spans() const {
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.emplace_back(weights[i].data(), static_cast<std::size_t>(weights[i].size()));
    out.emplace_back(biases[i].data(), static_cast<std::size_t>(biases[i].size()));
  }
  return out;
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  if (other.weights.size() != weights.size()) throw ShapeError("gradient sets have different depths");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] += other.weights[i];
    biases[i] += other.biases[i];
  }
  if (input.size() == other.input.size()) input += other.input;
  return *this;
}

MlpForward mlp_forward(const Mlp& net, const Eigen::VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != net.input_width())
    throw ShapeError("input has width " + std::to_string(x.size()) + ", network expects " +
                     std::to_string(net.input_width()));
  MlpForward fwd;
  const auto& s = net.standardizer();
  fwd.cache.activations.push_back((x - s.mean).cwiseQuotient(s.stddev));
  for (const auto& layer : net.layers()) {
    Eigen::VectorXd z = layer.weights * fwd.cache.activations.back() + layer.biases;
    Eigen::VectorXd a = z;
    apply_activation(layer.activation, a);
    fwd.cache.pre.push_back(std::move(z));
    fwd.cache.activations.push_back(std::move(a));
  }
  fwd.output = fwd.cache.activations.back();
  return fwd;
}

MlpGradients mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::VectorXd& output_gradient) {
  const auto& layers = net.layers();
  if (cache.pre.size() != layers.size() || cache.activations.size() != layers.size() + 1)
    throw ShapeError("forward cache does not belong to this network");
  if (static_cast<std::size_t>(output_gradient.size()) != net.output_width())
    throw ShapeError("output gradient width does not match the network output");
  MlpGradients g = MlpGradients::zeros_like(net);
  Eigen::VectorXd delta = output_gradient;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    apply_derivative(layer.activation, delta, cache.pre[li]);
    g.weights[li].noalias() = delta * cache.activations[li].transpose();
    g.biases[li] = delta;
    delta = layer.weights.transpose() * delta;
  }
  g.input = delta.cwiseQuotient(net.standardizer().stddev);
  return g;
}

Eigen::MatrixXd mlp_forward_batch(const Mlp& net, const Eigen::MatrixXd& x, MlpBatchCache* cache) {
  if (static_cast<std::size_t>(x.rows()) != net.input_width())
    throw ShapeError("batch input has width " + std::to_string(x.rows()) + ", network expects " +
                     std::to_string(net.input_width()));
  const auto& s = net.standardizer();
  Eigen::MatrixXd a = (x.colwise() - s.mean).array().colwise() / s.stddev.array();
  if (cache) {
    cache->activations.clear();
    cache->pre.clear();
  }
  for (const auto& layer : net.layers()) {
    Eigen::MatrixXd z(layer.weights.rows(), a.cols());
    z.noalias() = layer.weights * a;
    z.colwise() += layer.biases;
    if (cache) {
      cache->activations.push_back(std::move(a));
      cache->pre.push_back(z);
    }
    apply_activation(layer.activation, z);
    a = std::move(z);
  }
  if (cache) cache->activations.push_back(a);
  return a;
}

void mlp_backward_batch(const Mlp& net, const MlpBatchCache& cache, Eigen::MatrixXd delta,
                        MlpGradients& grads) {
  const auto& layers = net.layers();
  if (cache.pre.size() != layers.size()) throw ShapeError("batch cache does not belong to this network");
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    apply_derivative(layer.activation, delta, cache.pre[li]);
    grads.weights[li].noalias() += delta * cache.activations[li].transpose();
    grads.biases[li].noalias() += delta.rowwise().sum();
    if (li > 0) {
      Eigen::MatrixXd next(layer.weights.cols(), delta.cols());
      next.noalias() = layer.weights.transpose() * delta;
      delta = std::move(next);
    }
  }
}

LossResult mse_loss(const Eigen::VectorXd& predicted, const Eigen::VectorXd& target) {
  if (predicted.size() != target.size())
    throw LengthMismatchError("predicted and target lengths differ (" + std::to_string(predicted.size()) +
                              " vs " + std::to_string(target.size()) + ")");
  if (predicted.size() == 0) throw LengthMismatchError("MSE of empty vectors");
  const double n = static_cast<double>(predicted.size());
  const Eigen::VectorXd diff = predicted - target;
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("Adam: parameter and gradient counts differ");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("Adam: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (params[k].size() != grads[k].size() || state.first_moment[k].size() != params[k].size())
      throw ShapeError("Adam: tensor " + std::to_string(k) + " shape mismatch");

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto p = params[k];
    const auto g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

json mlp_to_json(const Mlp& net) {
  json layers = json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weights.size()));
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) w.push_back(l.weights(i, j));
    layers.push_back({{"fan_in", l.fan_in()},
                      {"fan_out", l.fan_out()},
                      {"activation", activation_name(l.activation)},
                      {"weights", w},
                      {"biases", std::vector<double>(l.biases.data(), l.biases.data() + l.biases.size())}});
  }
  const auto& s = net.standardizer();
  return {{"format", "deepfpft.mlp"},
          {"version", 1},
          {"standardizer",
           {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
            {"stddev", std::vector<double>(s.stddev.data(), s.stddev.data() + s.stddev.size())}}},
          {"layers", layers}};
}

Mlp mlp_from_json(const json& j) {
  try {
    if (j.value("format", "") != "deepfpft.mlp") throw ConfigError("not an MLP document");
    if (j.value("version", 0) != 1) throw ConfigError("unsupported MLP document version");
    std::vector<DenseLayer> layers;
    for (const auto& lj : j.at("layers")) {
      DenseLayer l;
      const auto fan_in = lj.at("fan_in").get<Eigen::Index>();
      const auto fan_out = lj.at("fan_out").get<Eigen::Index>();
      const auto w = lj.at("weights").get<std::vector<double>>();
      const auto b = lj.at("biases").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != fan_in * fan_out || static_cast<Eigen::Index>(b.size()) != fan_out)
        throw ShapeError("MLP document has inconsistent layer shapes");
      l.weights.resize(fan_out, fan_in);
      for (Eigen::Index r = 0; r < fan_out; ++r)
        for (Eigen::Index c = 0; c < fan_in; ++c) l.weights(r, c) = w[static_cast<std::size_t>(r * fan_in + c)];
      l.biases = Eigen::Map<const Eigen::VectorXd>(b.data(), fan_out);
      l.activation = activation_from(lj.at("activation").get<std::string>());
      layers.push_back(std::move(l));
    }
    const auto mean = j.at("standardizer").at("mean").get<std::vector<double>>();
    const auto sd = j.at("standardizer").at("stddev").get<std::vector<double>>();
    Standardizer s{Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                   Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()))};
    return Mlp(std::move(layers), std::move(s));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("MLP document: ") + e.what());
  }
}

json adam_to_json(const AdamState& s) {
  return {{"learning_rate", s.learning_rate}, {"beta1", s.beta1},
          {"beta2", s.beta2},                 {"epsilon", s.epsilon},
          {"step_count", s.step_count},       {"first_moment", s.first_moment},
          {"second_moment", s.second_moment}};
}

AdamState adam_from_json(const json& j) {
  AdamState s;
  s.learning_rate = j.at("learning_rate").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.epsilon = j.at("epsilon").get<double>();
  s.step_count = j.at("step_count").get<std::uint64_t>();
  s.first_moment = j.at("first_moment").get<std::vector<std::vector<double>>>();
  s.second_moment = j.at("second_moment").get<std::vector<std::vector<double>>>();
  return s;
}

}  // namespace deepfpft
