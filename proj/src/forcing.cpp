#include "deepfpft/forcing.hpp"

#include <algorithm>
#include <cmath>

#include "deepfpft/errors.hpp"
#include "deepfpft/io.hpp"

namespace deepfpft {

using nlohmann::json;

void FourierSpec::validate() const {
  if (!(amp_low < amp_high)) throw ConfigError("fourier forcing: amp_low must be < amp_high");
  if (!(freq_low < freq_high)) throw ConfigError("fourier forcing: freq_low must be < freq_high");
  if (n_grid < 2) throw ConfigError("fourier forcing: n_grid must be >= 2");
  if (!(t_end > 0.0)) throw ConfigError("fourier forcing: t_end must be > 0");
}

void GpSpec::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("gp forcing: sigma must be > 0");
  if (!(length_scale > 0.0)) throw ConfigError("gp forcing: length_scale must be > 0");
  if (!(jitter >= 0.0)) throw ConfigError("gp forcing: jitter must be >= 0");
  if (n_grid < 2) throw ConfigError("gp forcing: n_grid must be >= 2");
  if (!(t_end > 0.0)) throw ConfigError("gp forcing: t_end must be > 0");
}

const std::vector<double>& ForceEnsemble::t_grid() const {
  static const std::vector<double> empty;
  return realizations.empty() ? empty : realizations.front().t_grid;
}

std::pair<std::size_t, std::size_t> split_fourier_terms(std::size_t n) {
  const std::size_t n_cos = n / 2;
  return {n - n_cos, n_cos};
}

FourierParams sample_fourier_params(const FourierSpec& spec, Rng& rng) {
  const auto [n_sin, n_cos] = split_fourier_terms(spec.n_terms);
  std::uniform_real_distribution<double> amp(spec.amp_low, spec.amp_high);
  std::uniform_real_distribution<double> freq(spec.freq_low, spec.freq_high);
  FourierParams p;
  p.sin_amp.resize(n_sin);
  p.sin_freq.resize(n_sin);
  p.cos_amp.resize(n_cos);
  p.cos_freq.resize(n_cos);
  // Draw order is part of the reproducibility contract: sine pairs, then
  // cosine pairs.
  for (std::size_t i = 0; i < n_sin; ++i) {
    p.sin_amp[i] = amp(rng);
    p.sin_freq[i] = freq(rng);
  }
  for (std::size_t i = 0; i < n_cos; ++i) {
    p.cos_amp[i] = amp(rng);
    p.cos_freq[i] = freq(rng);
  }
  return p;
}

double eval_fourier_force(const FourierParams& params, double t) {
  double f = 0.0;
  for (std::size_t i = 0; i < params.sin_amp.size(); ++i)
    f += params.sin_amp[i] * std::sin(params.sin_freq[i] * t);
  for (std::size_t i = 0; i < params.cos_amp.size(); ++i)
    f += params.cos_amp[i] * std::cos(params.cos_freq[i] * t);
  return f;
}

std::vector<double> uniform_grid(double t_end, std::size_t n) {
  std::vector<double> grid(n);
  if (n == 1) {
    grid[0] = 0.0;
    return grid;
  }
  const double dt = t_end / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) grid[i] = dt * static_cast<double>(i);
  grid.back() = t_end;
  return grid;
}

ForceRealization sample_fourier_force(const FourierSpec& spec, Rng& rng) {
  ForceRealization r;
  r.t_grid = uniform_grid(spec.t_end, spec.n_grid);
  r.params = sample_fourier_params(spec, rng);
  r.values.resize(r.t_grid.size());
  for (std::size_t i = 0; i < r.t_grid.size(); ++i)
    r.values[i] = eval_fourier_force(*r.params, r.t_grid[i]);
  return r;
}

double ForceRealization::at(double t) const {
  if (params) return eval_fourier_force(*params, t);
  if (t_grid.empty()) return 0.0;
  if (t <= t_grid.front()) return values.front();
  if (t >= t_grid.back()) return values.back();
  // Uniform grid: index directly, then guard against rounding at the edges.
  const double dt = t_grid[1] - t_grid[0];
  auto i = static_cast<std::size_t>((t - t_grid.front()) / dt);
  i = std::min(i, t_grid.size() - 2);
  while (i > 0 && t < t_grid[i]) --i;
  while (i + 2 < t_grid.size() && t > t_grid[i + 1]) ++i;
  const double w = (t - t_grid[i]) / (t_grid[i + 1] - t_grid[i]);
  return values[i] + w * (values[i + 1] - values[i]);
}

double se_kernel(double t, double t_prime, double sigma, double length_scale) {
  const double d = t - t_prime;
  return sigma * sigma * std::exp(-(d * d) / (2.0 * length_scale * length_scale));
}

GpSampler::GpSampler(const GpSpec& spec) : spec_(spec) {
  spec_.validate();
  t_grid_ = uniform_grid(spec_.t_end, spec_.n_grid);
  const auto n = static_cast<Eigen::Index>(t_grid_.size());
  kernel_.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      kernel_(i, j) = se_kernel(t_grid_[i], t_grid_[j], spec_.sigma, spec_.length_scale);

  constexpr double kMaxJitter = 1e-6;
  double jitter = spec_.jitter;
  const double variance = spec_.sigma * spec_.sigma;
  while (true) {
    Eigen::MatrixXd regularized = kernel_;
    regularized.diagonal().array() += jitter * variance;
    Eigen::LLT<Eigen::MatrixXd> llt(regularized);
    // LLT reports success on inf/NaN input, so the factor is checked too.
    if (llt.info() == Eigen::Success && llt.matrixLLT().allFinite()) {
      lower_ = llt.matrixL();
      jitter_used_ = jitter;
      kernel_ = std::move(regularized);
      return;
    }
    if (jitter >= kMaxJitter) break;
    jitter = (jitter == 0.0) ? 1e-10 : std::min(jitter * 10.0, kMaxJitter);
  }
  throw FactorizationError("GP kernel matrix is not positive definite with jitter up to 1e-6 (sigma=" +
                           format_double(spec_.sigma) + ", l=" + format_double(spec_.length_scale) + ")");
}

ForceRealization GpSampler::sample(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(lower_.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  const Eigen::VectorXd v = lower_.triangularView<Eigen::Lower>() * z;
  ForceRealization r;
  r.t_grid = t_grid_;
  r.values.assign(v.data(), v.data() + v.size());
  return r;
}

ForceRealization sample_gp_force(const GpSpec& spec, Rng& rng) { return GpSampler(spec).sample(rng); }

namespace {

ForceEnsemble make_ensemble(const ForcingSpec& spec, std::size_t n_samples, std::uint64_t seed,
                            const std::string& stream, bool parallel) {
  ForceEnsemble ens;
  ens.spec = spec;
  ens.seed = seed;
  ens.stream = stream;
  ens.realizations.resize(n_samples);
  const auto n = static_cast<std::ptrdiff_t>(n_samples);
  if (const auto* fourier = std::get_if<FourierSpec>(&spec)) {
    fourier->validate();
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(seed, stream, static_cast<std::uint64_t>(i)));
      ens.realizations[static_cast<std::size_t>(i)] = sample_fourier_force(*fourier, rng);
    }
  } else {
    const GpSampler sampler(std::get<GpSpec>(spec));
#pragma omp parallel for schedule(static) if (parallel)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(seed, stream, static_cast<std::uint64_t>(i)));
      ens.realizations[static_cast<std::size_t>(i)] = sampler.sample(rng);
    }
  }
  return ens;
}

}  // namespace

ForceEnsemble force_ensemble(const ForcingSpec& spec, std::size_t n_samples, std::uint64_t seed,
                             const std::string& stream) {
  if (n_samples < 1) throw ConfigError("force ensemble needs at least one sample");
  return make_ensemble(spec, n_samples, seed, stream, true);
}

ForceEnsemble force_ensemble_serial(const ForcingSpec& spec, std::size_t n_samples,
                                    std::uint64_t seed, const std::string& stream) {
  if (n_samples < 1) throw ConfigError("force ensemble needs at least one sample");
  return make_ensemble(spec, n_samples, seed, stream, false);
}

std::vector<double> branch_input(const ForceRealization& force, std::size_t width) {
  if (force.values.size() == width) return force.values;
  if (force.t_grid.empty()) throw ShapeError("cannot resample an empty force realization");
  const auto grid = uniform_grid(force.t_grid.back(), width);
  std::vector<double> out(width);
  for (std::size_t i = 0; i < width; ++i) out[i] = force.at(grid[i]);
  return out;
}

double forcing_t_end(const ForcingSpec& spec) {
  return std::visit([](const auto& s) { return s.t_end; }, spec);
}

std::size_t forcing_n_grid(const ForcingSpec& spec) {
  return std::visit([](const auto& s) { return s.n_grid; }, spec);
}

json forcing_to_json(const ForcingSpec& spec) {
  if (const auto* f = std::get_if<FourierSpec>(&spec)) {
    return json{{"kind", "fourier"},      {"n_terms", f->n_terms},     {"amp_low", f->amp_low},
                {"amp_high", f->amp_high}, {"freq_low", f->freq_low}, {"freq_high", f->freq_high},
                {"t_end", f->t_end},       {"n_grid", f->n_grid}};
  }
  const auto& g = std::get<GpSpec>(spec);
  return json{{"kind", "gp"},       {"sigma", g.sigma},   {"length_scale", g.length_scale},
              {"t_end", g.t_end},   {"n_grid", g.n_grid}, {"jitter", g.jitter}};
}

ForcingSpec forcing_from_json(const json& j) {
  try {
    const std::string kind = j.value("kind", "fourier");
    if (kind == "fourier") {
      FourierSpec f;
      f.n_terms = j.value("n_terms", f.n_terms);
      f.amp_low = j.value("amp_low", f.amp_low);
      f.amp_high = j.value("amp_high", f.amp_high);
      f.freq_low = j.value("freq_low", f.freq_low);
      f.freq_high = j.value("freq_high", f.freq_high);
      f.t_end = j.value("t_end", f.t_end);
      f.n_grid = j.value("n_grid", f.n_grid);
      f.validate();
      return f;
    }
    if (kind == "gp") {
      GpSpec g;
      g.sigma = j.value("sigma", g.sigma);
      g.length_scale = j.value("length_scale", g.length_scale);
      g.t_end = j.value("t_end", g.t_end);
      g.n_grid = j.value("n_grid", g.n_grid);
      g.jitter = j.value("jitter", g.jitter);
      g.validate();
      return g;
    }
    throw ConfigError("forcing.kind must be 'fourier' or 'gp', got '" + kind + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("forcing: ") + e.what());
  }
}

void write_force_ensemble(const ForceEnsemble& ens, const std::filesystem::path& csv_path,
                          const std::filesystem::path& json_path) {
  const auto& grid = ens.t_grid();
  Eigen::MatrixXd data(static_cast<Eigen::Index>(ens.size()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t s = 0; s < ens.size(); ++s)
    for (std::size_t i = 0; i < grid.size(); ++i)
      data(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = ens.realizations[s].values[i];
  write_matrix_csv(csv_path, format_header(grid), data);
  json meta{{"format", "deepfpft.forces"},
            {"version", 1},
            {"spec", forcing_to_json(ens.spec)},
            {"seed", ens.seed},
            {"stream", ens.stream},
            {"n_samples", ens.size()},
            {"n_grid", grid.size()}};
  write_json(json_path, meta);
}

ForceEnsemble read_force_ensemble(const std::filesystem::path& csv_path,
                                  const std::filesystem::path& json_path) {
  const json meta = read_json(json_path);
  const auto table = read_matrix_csv(csv_path);
  ForceEnsemble ens;
  ens.spec = forcing_from_json(meta.at("spec"));
  ens.seed = meta.at("seed").get<std::uint64_t>();
  ens.stream = meta.at("stream").get<std::string>();
  std::vector<double> grid;
  for (const auto& h : table.header) grid.push_back(parse_double(h));
  const auto* fourier = std::get_if<FourierSpec>(&ens.spec);
  ens.realizations.resize(static_cast<std::size_t>(table.data.rows()));
  for (Eigen::Index s = 0; s < table.data.rows(); ++s) {
    auto& r = ens.realizations[static_cast<std::size_t>(s)];
    r.t_grid = grid;
    r.values.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) r.values[i] = table.data(s, static_cast<Eigen::Index>(i));
    if (fourier && fourier->n_grid == grid.size()) {
      Rng rng(derive_seed(ens.seed, ens.stream, static_cast<std::uint64_t>(s)));
      auto regenerated = sample_fourier_force(*fourier, rng);
      if (regenerated.values == r.values) r.params = std::move(regenerated.params);
    }
  }
  return ens;
}

}  // namespace deepfpft
