#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <omp.h>

#include "opidyn/sde.hpp"
#include "oracles.hpp"

using namespace opidyn;

namespace {

struct Moments {
    double mean;
    double var;
};

Moments x1_terminal_moments(const PathEnsemble& ens) {
    double m = 0.0;
    for (const State3& s : ens.terminal) m += s.x1;
    m /= static_cast<double>(ens.n);
    double v = 0.0;
    for (const State3& s : ens.terminal) v += (s.x1 - m) * (s.x1 - m);
    v /= static_cast<double>(ens.n - 1);
    return {m, v};
}

}  // namespace

TEST_CASE("zero noise degenerates to the Euler ODE path") {
    const ModelParams p = oracles::generic_params();
    const DiffusionSpec silent = DiffusionSpec::constant(0.0);
    const State3 x0 = oracles::interior_state();
    const double T = 1.0, h = 1e-3;
    const SdePath path = simulate_degenerate(p, silent, x0, T, h, 77);

    // independent plain-Euler reference at the same step
    State3 x = x0;
    for (std::size_t k = 0; k < path.grid.n_steps; ++k) {
        const State3 f = vector_field(p, x);
        x = x + h * f;
    }
    CHECK(norm(path.terminal() - x) <= 1e-10);
}

TEST_CASE("same seed and config reproduce the path bitwise") {
    const ModelParams p = oracles::generic_params();
    const DiffusionSpec d = DiffusionSpec::constant(0.5);
    const State3 x0 = oracles::interior_state();
    const SdePath a = simulate_degenerate(p, d, x0, 0.5, 1e-3, 1234);
    const SdePath b = simulate_degenerate(p, d, x0, 0.5, 1e-3, 1234);
    REQUIRE(a.states.size() == b.states.size());
    for (std::size_t k = 0; k < a.states.size(); ++k) {
        CHECK(a.states[k].x1 == b.states[k].x1);
        CHECK(a.states[k].x2 == b.states[k].x2);
        CHECK(a.states[k].x3 == b.states[k].x3);
    }
}

TEST_CASE("pure Brownian case: x1(T) law, x2 and x3 frozen") {
    SimConfig cfg;
    cfg.params = ModelParams{};
    cfg.diff = DiffusionSpec::constant(1.0);
    cfg.x0 = State3{0.2, 0.4, 0.6};
    cfg.T = 1.0;
    cfg.h = 0.05;  // Euler is exact in law for zero drift, coarse grid is fine
    const std::size_t n = 100000;
    const PathEnsemble ens = simulate_ensemble(cfg, n, 2024);

    for (const State3& s : ens.terminal) {
        CHECK(s.x2 == cfg.x0.x2);
        CHECK(s.x3 == cfg.x0.x3);
    }
    const auto [mean, var] = x1_terminal_moments(ens);
    const double nd = static_cast<double>(n);
    const double se_mean = std::sqrt(cfg.T / nd);
    const double se_var = cfg.T * std::sqrt(2.0 / (nd - 1.0));
    CHECK(std::abs(mean - cfg.x0.x1) <= 3.0 * se_mean);
    CHECK(std::abs(var - cfg.T) <= 3.0 * se_var);
    CHECK(std::abs(var - cfg.T) <= 0.02 * cfg.T);
}

TEST_CASE("regularized path with eps = 0 matches the degenerate path bitwise") {
    const ModelParams p = oracles::small_params();
    const DiffusionSpec d = DiffusionSpec::constant(0.3);
    const State3 x0 = oracles::interior_state();
    const SdePath a = simulate_degenerate(p, d, x0, 0.5, 1e-3, 555);
    const SdePath b = simulate_regularized(p, d, 0.0, x0, 0.5, 1e-3, 555);
    for (std::size_t k = 0; k < a.states.size(); ++k) {
        CHECK(a.states[k].x1 == b.states[k].x1);
        CHECK(a.states[k].x2 == b.states[k].x2);
        CHECK(a.states[k].x3 == b.states[k].x3);
    }
}

TEST_CASE("regularized pure-noise case: x2, x3 Brownian and perfectly coupled") {
    SimConfig cfg;
    cfg.params = ModelParams{};
    cfg.diff = DiffusionSpec::constant(0.0);
    cfg.x0 = State3{0.0, 0.3, 0.7};
    cfg.T = 1.0;
    cfg.h = 0.05;
    cfg.eps_reg = 1.0;
    const std::size_t n = 10000;
    const PathEnsemble ens = simulate_ensemble(cfg, n, 31);

    double m2 = 0.0, m3 = 0.0;
    for (const State3& s : ens.terminal) {
        m2 += s.x2;
        m3 += s.x3;
        // shared V: identical increments, deviations equal up to roundoff
        CHECK(std::abs((s.x2 - cfg.x0.x2) - (s.x3 - cfg.x0.x3)) <= 1e-12);
    }
    const double nd = static_cast<double>(n);
    m2 /= nd;
    m3 /= nd;
    double v2 = 0.0, v3 = 0.0;
    for (const State3& s : ens.terminal) {
        v2 += (s.x2 - m2) * (s.x2 - m2);
        v3 += (s.x3 - m3) * (s.x3 - m3);
    }
    v2 /= nd - 1;
    v3 /= nd - 1;
    const double se_mean = std::sqrt(cfg.T / nd);
    const double se_var = cfg.T * std::sqrt(2.0 / (nd - 1.0));
    CHECK(std::abs(m2 - cfg.x0.x2) <= 3.0 * se_mean);
    CHECK(std::abs(m3 - cfg.x0.x3) <= 3.0 * se_mean);
    CHECK(std::abs(v2 - cfg.T) <= 3.0 * se_var);
    CHECK(std::abs(v3 - cfg.T) <= 3.0 * se_var);
}

TEST_CASE("independent-V variant decorrelates the x2 and x3 noise") {
    SimConfig cfg;
    cfg.params = ModelParams{};
    cfg.diff = DiffusionSpec::constant(0.0);
    cfg.x0 = State3{0.0, 0.0, 0.0};
    cfg.T = 1.0;
    cfg.h = 0.05;
    cfg.eps_reg = 1.0;
    cfg.shared_v = false;
    const std::size_t n = 10000;
    const PathEnsemble ens = simulate_ensemble(cfg, n, 32);
    double c = 0.0;
    for (const State3& s : ens.terminal) c += s.x2 * s.x3;
    c /= static_cast<double>(n);  // both have mean ~0, variance ~1
    CHECK(std::abs(c) <= 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("coupling: E sup|X^eps - X| scales like sqrt(eps)") {
    const ModelParams p = oracles::small_params();
    const DiffusionSpec d = DiffusionSpec::constant(0.3);
    const std::vector<double> eps = {1e-2, 1e-3, 1e-4};
    const auto rows = coupling_study(p, d, oracles::interior_state(), 0.5, 1e-3,
                                     909, 2000, eps);
    std::vector<double> lx, ly;
    for (const auto& r : rows) {
        lx.push_back(std::log(r.eps));
        ly.push_back(std::log(r.mean_sup_dist));
    }
    const double slope = oracles::slope(lx, ly);
    CHECK(std::abs(slope - 0.5) <= 0.1);
}

TEST_CASE("weak order ~1 on the mean-reverting linear case") {
    // alpha = 1, everything else zero: dx1 = -x1 dt + dW
    ModelParams p;
    p.alpha = 1.0;
    SimConfig cfg;
    cfg.params = p;
    cfg.diff = DiffusionSpec::constant(1.0);
    cfg.x0 = State3{0.0, 0.0, 0.0};
    cfg.T = 1.0;

    const double exact_m2 = (1.0 - std::exp(-2.0)) / 2.0;
    std::vector<double> lh, le;
    std::uint64_t seed = 5000;
    for (double h : {0.1, 0.05, 0.025}) {
        cfg.h = h;
        const PathEnsemble ens = simulate_ensemble(cfg, 1000000, seed++);
        double m2 = 0.0;
        for (const State3& s : ens.terminal) m2 += s.x1 * s.x1;
        m2 /= static_cast<double>(ens.n);
        lh.push_back(std::log(h));
        le.push_back(std::log(std::abs(m2 - exact_m2)));
    }
    const double slope = oracles::slope(lh, le);
    CHECK(std::abs(slope - 1.0) <= 0.3);
}

TEST_CASE("ensemble: n = 1 reproduces the single trajectory, derived seed") {
    SimConfig cfg;
    cfg.params = oracles::small_params();
    cfg.diff = DiffusionSpec::constant(0.4);
    cfg.x0 = oracles::interior_state();
    cfg.T = 0.5;
    cfg.h = 1e-3;
    const PathEnsemble ens = simulate_ensemble(cfg, 1, 808, true);
    const SdePath direct = simulate_degenerate(cfg.params, cfg.diff, cfg.x0, cfg.T,
                                               cfg.h, trajectory_seed(808, 0));
    CHECK(ens.terminal[0].x1 == direct.terminal().x1);
    CHECK(ens.paths[0].states.back().x3 == direct.states.back().x3);
}

TEST_CASE("ensemble results do not depend on worker count; serial reference agrees") {
    SimConfig cfg;
    cfg.params = oracles::small_params();
    cfg.diff = DiffusionSpec::constant(0.4);
    cfg.x0 = oracles::interior_state();
    cfg.T = 0.2;
    cfg.h = 1e-3;
    const std::size_t n = 2000;

    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const PathEnsemble one = simulate_ensemble(cfg, n, 17);
    omp_set_num_threads(saved > 1 ? saved : 2);
    const PathEnsemble many = simulate_ensemble(cfg, n, 17);
    omp_set_num_threads(saved);
    const PathEnsemble serial = simulate_ensemble_serial(cfg, n, 17);

    for (std::size_t i = 0; i < n; ++i) {
        CHECK(one.terminal[i].x1 == many.terminal[i].x1);
        CHECK(one.terminal[i].x2 == many.terminal[i].x2);
        CHECK(one.terminal[i].x3 == many.terminal[i].x3);
        CHECK(serial.terminal[i].x1 == many.terminal[i].x1);
        CHECK(serial.terminal[i].x2 == many.terminal[i].x2);
        CHECK(serial.terminal[i].x3 == many.terminal[i].x3);
    }
}

TEST_CASE("constant control shifts the x1 drift") {
    ControlSignal u;
    u.T = 1.0;
    u.values.assign(4, 0.25);
    const ModelParams p;  // zero field
    const DiffusionSpec silent = DiffusionSpec::constant(0.0);
    const SdePath path =
        simulate_degenerate(p, silent, State3{}, 1.0, 1e-3, 1, &u);
    CHECK(path.terminal().x1 == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(u.energy() == doctest::Approx(0.5 * 0.25 * 0.25));
}

TEST_CASE("control grid incompatibility is a config error") {
    ControlSignal u;
    u.T = 1.0;
    u.values.assign(3, 0.0);  // 1000 steps not divisible by 3
    const ModelParams p;
    const DiffusionSpec d = DiffusionSpec::constant(0.0);
    CHECK_THROWS_AS(simulate_degenerate(p, d, State3{}, 1.0, 1e-3, 1, &u),
                    ConfigError);
    ControlSignal wrong_T;
    wrong_T.T = 2.0;
    wrong_T.values.assign(4, 0.0);
    CHECK_THROWS_AS(simulate_degenerate(p, d, State3{}, 1.0, 1e-3, 1, &wrong_T),
                    ConfigError);
}

TEST_CASE("ensemble records blow-ups without failing the run") {
    ModelParams p;
    p.beta = 1.0;  // quadratic terms; explosive far outside the simplex
    SimConfig cfg;
    cfg.params = p;
    cfg.diff = DiffusionSpec::constant(0.0);
    cfg.x0 = State3{1e7, 1e7, 0.0};
    cfg.T = 10.0;
    cfg.h = 0.1;
    const PathEnsemble ens = simulate_ensemble(cfg, 4, 1);
    CHECK(ens.n_failed == 4);
    CHECK(ens.failure_fraction() == 1.0);
}

TEST_CASE("rescaled dynamics: unit-horizon Brownian variance is 1 for any T") {
    for (double T : {0.25, 1.0, 4.0}) {
        SimConfig cfg;
        cfg.params = ModelParams{};
        cfg.diff = DiffusionSpec::constant(1.0);
        cfg.kind = SimConfig::Kind::Rescaled;
        cfg.rescale_horizon = T;
        cfg.x0 = State3{0.0, 0.0, 0.0};
        cfg.T = 1.0;
        cfg.h = 0.02;
        const std::size_t n = 40000;
        const PathEnsemble ens = simulate_ensemble(cfg, n, 99);
        const auto [mean, var] = x1_terminal_moments(ens);
        const double nd = static_cast<double>(n);
        CHECK(std::abs(mean) <= 3.0 * std::sqrt(1.0 / nd));
        CHECK(std::abs(var - 1.0) <= 3.0 * std::sqrt(2.0 / (nd - 1.0)));
    }
}
