#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "opidyn/flow.hpp"
#include "oracles.hpp"

using namespace opidyn;

TEST_CASE("zero field keeps the path constant; theta(0) = x0") {
    const ModelParams p;
    const State3 x0{0.3, 0.2, 0.1};
    const FlowPath path = integrate_flow(p, x0, 2.0, 0.01);
    CHECK(path.states.front().x1 == x0.x1);
    for (const State3& s : path.states) {
        CHECK(s.x1 == x0.x1);
        CHECK(s.x2 == x0.x2);
        CHECK(s.x3 == x0.x3);
    }
}

TEST_CASE("order-4 convergence (Richardson ratio)") {
    const ModelParams p = oracles::generic_params();
    const State3 x0 = oracles::interior_state();
    const double T = 1.0;
    const State3 ref = integrate_flow(p, x0, T, 0.05 / 64.0).back();
    const double e1 = norm(integrate_flow(p, x0, T, 0.05).back() - ref);
    const double e2 = norm(integrate_flow(p, x0, T, 0.025).back() - ref);
    const double ratio = e1 / e2;
    CHECK(ratio > 12.0);
    CHECK(ratio < 20.0);
}

TEST_CASE("grid construction") {
    CHECK_THROWS_AS(make_grid(-1.0, 0.1), ConfigError);
    CHECK_THROWS_AS(make_grid(1.0, 0.0), ConfigError);
    CHECK_THROWS_AS(make_grid(1.0, 2.0), ConfigError);
    const TimeGrid g = make_grid(1.0, 1e-3);
    CHECK(g.n_steps == 1000);
    CHECK(g.horizon() == doctest::Approx(1.0));
}

TEST_CASE("blow-up carries the failing time") {
    // strongly superlinear drift via a custom field
    auto field = [](double, const State3& x) {
        return State3{x.x1 * x.x1 * 1e3, 0.0, 0.0};
    };
    try {
        integrate_flow_field(field, State3{10.0, 0, 0}, 10.0, 0.01);
        FAIL("expected IntegrationError");
    } catch (const IntegrationError& e) {
        CHECK(e.t_fail > 0.0);
        CHECK(e.t_fail <= 10.0);
    }
}

TEST_CASE("transition family: zero Jacobian gives identities") {
    const ModelParams p;
    const FlowPath path = integrate_flow(p, State3{0.2, 0.2, 0.2}, 1.0, 0.01);
    const TransitionFamily fam = transition_matrices(p, path);
    for (const Mat3& m : fam.to_horizon) CHECK(m.isIdentity(0.0));
}

TEST_CASE("transition family: constant-A hook matches the matrix exponential") {
    Mat3 a;
    a << 0.2, -0.1, 0.0, 0.3, 0.1, -0.2, 0.0, 0.4, -0.3;
    const TimeGrid grid = make_grid(1.0, 1e-3);
    const TransitionFamily fam =
        transition_matrices_jac([&](double) { return a; }, grid);
    for (std::size_t k : {std::size_t{0}, grid.n_steps / 3, grid.n_steps / 2,
                          grid.n_steps}) {
        const double s = grid.t(k);
        const Mat3 expected = oracles::expm(a * (1.0 - s));
        CHECK((fam.to_horizon[k] - expected).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("transition family: Phi(T,T) = I exactly and cocycle property") {
    const ModelParams p = oracles::generic_params();
    const State3 x0 = oracles::interior_state();
    const double T = 1.0;
    const FlowPath path = integrate_flow(p, x0, T, 1e-3);
    const TransitionFamily fam = transition_matrices(p, path);

    CHECK(fam.to_horizon.back().isIdentity(0.0));

    // Phi(T, s) = Phi(T, r) Phi(r, s): recompute Phi(r, s) on the sub-path
    const std::size_t kr = 700;  // r = 0.7
    const double r = path.grid.t(kr);
    FlowPath sub;
    sub.grid = TimeGrid{0.0, path.grid.h, kr};
    sub.states.assign(path.states.begin(), path.states.begin() + kr + 1);
    const TransitionFamily fam_r = transition_matrices(p, sub);
    for (std::size_t ks : {std::size_t{0}, std::size_t{250}, std::size_t{500}}) {
        const Mat3 lhs = fam.to_horizon[ks];
        const Mat3 rhs = fam.to_horizon[kr] * fam_r.to_horizon[ks];
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-8);
    }
    (void)r;
}

TEST_CASE("flow is Lipschitz in the initial condition") {
    const ModelParams p = oracles::generic_params();
    const State3 x0 = oracles::interior_state();
    const double T = 1.0;
    const FlowPath path = integrate_flow(p, x0, T, 1e-3);

    // crude integrated Jacobian norm bound
    double int_norm = 0.0;
    for (const State3& s : path.states)
        int_norm += jacobian(p, s).cwiseAbs().rowwise().sum().maxCoeff() * 1e-3;
    const double lip = 2.0 * std::exp(int_norm);

    const State3 delta{1e-4, -2e-4, 1.5e-4};
    const State3 moved = integrate_flow(p, x0 + delta, T, 1e-3).back();
    CHECK(norm(moved - path.back()) <= lip * norm(delta));
}

TEST_CASE("Hermite interpolation reproduces nodes and midpoint states") {
    const ModelParams p = oracles::generic_params();
    const State3 x0 = oracles::interior_state();
    const FlowPath coarse = integrate_flow(p, x0, 1.0, 0.01);
    const FlowPath fine = integrate_flow(p, x0, 1.0, 0.005);
    auto field = [&p](double t, const State3& x) {
        (void)t;
        return vector_field(p, x);
    };
    const State3 mid = coarse.at(0.505, field);
    CHECK(norm(mid - fine.states[101]) <= 1e-9);
}
