#include <doctest.h>

#include <cmath>

#include "deepfpft/errors.hpp"
#include "deepfpft/forcing.hpp"
#include "oracles.hpp"

using namespace deepfpft;

TEST_SUITE("forcing") {
  TEST_CASE("split of Fourier terms") {
    CHECK(split_fourier_terms(20) == std::pair<std::size_t, std::size_t>{10, 10});
    CHECK(split_fourier_terms(21) == std::pair<std::size_t, std::size_t>{11, 10});
    CHECK(split_fourier_terms(0) == std::pair<std::size_t, std::size_t>{0, 0});
    for (std::size_t n = 0; n < 200; ++n) {
      const auto [s, c] = split_fourier_terms(n);
      CHECK(s + c == n);
      CHECK(s >= c);
      CHECK(s - c <= 1);
    }
  }

  TEST_CASE("Fourier parameters respect bounds and seeds") {
    FourierSpec spec;
    Rng a(11), b(11);
    const auto p = sample_fourier_params(spec, a);
    const auto q = sample_fourier_params(spec, b);
    REQUIRE(p.sin_amp.size() == 10);
    REQUIRE(p.cos_amp.size() == 10);
    CHECK(p.sin_amp == q.sin_amp);
    CHECK(p.cos_freq == q.cos_freq);
    for (std::size_t i = 0; i < 10; ++i) {
      for (double v : {p.sin_amp[i], p.cos_amp[i]}) CHECK((v >= -50.0 && v <= 50.0));
      for (double v : {p.sin_freq[i], p.cos_freq[i]}) CHECK((v >= 0.0 && v <= 10.0));
    }
    FourierSpec one;
    one.n_terms = 1;
    const auto r = sample_fourier_params(one, a);
    CHECK(r.sin_amp.size() == 1);
    CHECK(r.cos_amp.empty());
  }

  TEST_CASE("Fourier evaluation") {
    FourierParams zero{{0.0, 0.0}, {1.0, 2.0}, {0.0}, {3.0}};
    CHECK(eval_fourier_force(zero, 0.7) == 0.0);
    FourierParams s{{1.0}, {4.2}, {}, {}};
    CHECK(eval_fourier_force(s, 0.0) == 0.0);
    FourierParams c{{}, {}, {3.0}, {6.1}};
    CHECK(eval_fourier_force(c, 0.0) == 3.0);
    FourierParams mix{{2.0}, {1.5}, {-1.0}, {0.5}};
    CHECK(eval_fourier_force(mix, 0.3) == doctest::Approx(2.0 * std::sin(0.45) - std::cos(0.15)).epsilon(1e-15));
  }

  TEST_CASE("stored values equal exact re-evaluation") {
    const auto ens = force_ensemble(FourierSpec{}, 50, 9, "f");
    for (const auto& r : ens.realizations) {
      REQUIRE(r.params.has_value());
      for (std::size_t i = 0; i < r.t_grid.size(); ++i) CHECK(eval_fourier_force(*r.params, r.t_grid[i]) == r.values[i]);
      CHECK(r.at(0.123) == eval_fourier_force(*r.params, 0.123));
    }
  }

  TEST_CASE("default grid is 100 points over 2 s, endpoints included") {
    const auto ens = force_ensemble(FourierSpec{}, 1, 1, "g");
    const auto& g = ens.t_grid();
    REQUIRE(g.size() == 100);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == 2.0);
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] - g[i - 1] == doctest::Approx(2.0 / 99.0).epsilon(1e-12));
  }

  TEST_CASE("SE kernel") {
    CHECK(se_kernel(0.4, 0.4, 50.0, 0.1) == 2500.0);
    CHECK(se_kernel(0.0, 0.1, 50.0, 0.1) == doctest::Approx(2500.0 * std::exp(-0.5)).epsilon(1e-14));
    CHECK(se_kernel(0.0, 50.0, 50.0, 0.1) == 0.0);
    double prev = se_kernel(0.0, 0.0, 2.0, 0.3);
    for (int i = 1; i < 50; ++i) {
      const double k = se_kernel(0.0, 0.05 * i, 2.0, 0.3);
      CHECK(k <= prev);
      prev = k;
    }
    Rng rng(2);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 500; ++i) {
      const double t = u(rng), s = u(rng);
      CHECK(se_kernel(t, s, 1.7, 0.2) == se_kernel(s, t, 1.7, 0.2));
    }
  }

  TEST_CASE("GP factor matches a hand Cholesky on a 3-point grid") {
    GpSpec spec;
    spec.sigma = 1.0;
    spec.length_scale = 0.1;
    spec.t_end = 0.2;
    spec.n_grid = 3;
    GpSampler gp(spec);
    const double j = gp.jitter_used();
    std::vector<std::vector<double>> k(3, std::vector<double>(3));
    const double t[3] = {0.0, 0.1, 0.2};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) k[a][b] = std::exp(-(t[a] - t[b]) * (t[a] - t[b]) / 0.02) + (a == b ? j : 0.0);
    const auto l = oracle::cholesky(k);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        CHECK(gp.kernel()(a, b) == doctest::Approx(k[a][b]).epsilon(1e-14));
        CHECK(gp.lower_factor()(a, b) == doctest::Approx(l[a][b]).epsilon(1e-12));
      }
  }

  TEST_CASE("GP jitter escalates on an ill-conditioned kernel and is bounded") {
    GpSpec spec;
    spec.sigma = 50.0;
    spec.length_scale = 0.5;
    spec.n_grid = 200;
    GpSampler gp(spec);
    CHECK(gp.jitter_used() >= spec.jitter);
    CHECK(gp.jitter_used() <= 1e-6);
    const Eigen::MatrixXd& reg = gp.kernel();
    CHECK((gp.lower_factor() * gp.lower_factor().transpose() - reg).cwiseAbs().maxCoeff() < 1e-8 * 2500.0);
    // sigma^2 overflows, so no amount of jitter yields a usable factor.
    GpSpec overflow = spec;
    overflow.sigma = 1e200;
    CHECK_THROWS_AS(GpSampler{overflow}, FactorizationError);
  }

  TEST_CASE("small-sigma GP draws are near zero") {
    GpSpec spec;
    spec.sigma = 1e-12;
    Rng rng(4);
    const auto r = sample_gp_force(spec, rng);
    CHECK_FALSE(r.params.has_value());
    for (double v : r.values) CHECK(std::abs(v) < 1e-10);
  }

  TEST_CASE("GP marginal variance and lag covariance") {
    GpSpec spec;
    spec.n_grid = 101;  // grid step 0.02 s, so index lag 5 is 0.10 s
    const auto ens = force_ensemble(spec, 20000, 5, "gp");
    const std::size_t n = ens.size();
    for (std::size_t i : {0u, 25u, 50u, 95u, 100u}) {
      double m = 0.0, ss = 0.0;
      for (const auto& r : ens.realizations) m += r.values[i];
      m /= static_cast<double>(n);
      for (const auto& r : ens.realizations) ss += (r.values[i] - m) * (r.values[i] - m);
      CHECK(std::abs(ss / static_cast<double>(n - 1) / 2500.0 - 1.0) < 0.05);
    }
    double m0 = 0.0, m5 = 0.0, cov = 0.0;
    for (const auto& r : ens.realizations) {
      m0 += r.values[40];
      m5 += r.values[45];
    }
    m0 /= static_cast<double>(n);
    m5 /= static_cast<double>(n);
    for (const auto& r : ens.realizations) cov += (r.values[40] - m0) * (r.values[45] - m5);
    cov /= static_cast<double>(n - 1);
    CHECK(std::abs(cov / (2500.0 * std::exp(-0.5)) - 1.0) < 0.10);
  }

  TEST_CASE("Fourier ensemble mean at fixed t is zero within 3 standard errors") {
    const auto ens = force_ensemble(FourierSpec{}, 10000, 6, "mean");
    for (std::size_t i : {0u, 33u, 99u}) {
      double m = 0.0, ss = 0.0;
      for (const auto& r : ens.realizations) m += r.values[i];
      m /= 10000.0;
      for (const auto& r : ens.realizations) ss += (r.values[i] - m) * (r.values[i] - m);
      const double se = std::sqrt(ss / 9999.0 / 10000.0);
      CHECK(std::abs(m) < 3.0 * se);
    }
  }

  TEST_CASE("ensembles are deterministic and independent of threading") {
    GpSpec gp;
    for (const ForcingSpec& spec : {ForcingSpec{FourierSpec{}}, ForcingSpec{gp}}) {
      const auto a = force_ensemble(spec, 64, 77, "s");
      const auto b = force_ensemble(spec, 64, 77, "s");
      const auto c = force_ensemble_serial(spec, 64, 77, "s");
      for (std::size_t i = 0; i < 64; ++i) {
        CHECK(a.realizations[i].values == b.realizations[i].values);
        CHECK(a.realizations[i].values == c.realizations[i].values);
      }
      // A prefix of a larger ensemble is the smaller ensemble.
      const auto d = force_ensemble(spec, 10, 77, "s");
      CHECK(d.realizations[9].values == a.realizations[9].values);
    }
    CHECK(force_ensemble(FourierSpec{}, 1, 77, "s").size() == 1);
    CHECK_THROWS_AS(force_ensemble(FourierSpec{}, 0, 77, "s"), ConfigError);
  }

  TEST_CASE("branch input resamples other grid widths") {
    FourierSpec spec;
    spec.n_grid = 201;
    Rng rng(1);
    const auto r = sample_fourier_force(spec, rng);
    const auto b = branch_input(r, 100);
    REQUIRE(b.size() == 100);
    const auto g = uniform_grid(2.0, 100);
    for (std::size_t i = 0; i < 100; ++i) CHECK(b[i] == eval_fourier_force(*r.params, g[i]));
    FourierSpec native;
    const auto n = sample_fourier_force(native, rng);
    CHECK(branch_input(n, 100) == n.values);
  }

  TEST_CASE("spec validation and json round trip") {
    FourierSpec bad;
    bad.amp_low = 5;
    bad.amp_high = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    GpSpec g;
    g.length_scale = 0.0;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    CHECK_THROWS_AS(forcing_from_json({{"kind", "wavelet"}}), ConfigError);
    GpSpec h;
    h.sigma = 3.5;
    const auto back = std::get<GpSpec>(forcing_from_json(forcing_to_json(h)));
    CHECK(back.sigma == 3.5);
    CHECK(back.n_grid == h.n_grid);
  }

  TEST_CASE("force ensemble file round trip keeps exact Fourier parameters") {
    const auto dir = oracle::scratch_dir("forces");
    const auto ens = force_ensemble(FourierSpec{}, 12, 3, "forces/train");
    write_force_ensemble(ens, dir / "f.csv", dir / "f.json");
    const auto back = read_force_ensemble(dir / "f.csv", dir / "f.json");
    REQUIRE(back.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(back.realizations[i].values == ens.realizations[i].values);
      REQUIRE(back.realizations[i].params.has_value());
      CHECK(back.realizations[i].params->sin_freq == ens.realizations[i].params->sin_freq);
    }
    std::filesystem::remove_all(dir);
  }
}
