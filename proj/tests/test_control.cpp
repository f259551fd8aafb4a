#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "opidyn/control.hpp"
#include "oracles.hpp"

using namespace opidyn;

namespace {

Mat3 chain_gramian_closed_form(double T) {
    Mat3 w;
    const double t2 = T * T, t3 = t2 * T, t4 = t3 * T, t5 = t4 * T;
    w << T, t2 / 2, t3 / 6, t2 / 2, t3 / 3, t4 / 8, t3 / 6, t4 / 8, t5 / 20;
    return w;
}

}  // namespace

TEST_CASE("gramian: no coupling leaves only the direct noise variance") {
    const Gramian g = linearize_and_gramian(
        ModelParams{}, DiffusionSpec::constant(1.0), State3{0.3, 0.2, 0.1}, 2.0,
        1e-3);
    CHECK(g.w(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (i || j) CHECK(g.w(i, j) == 0.0);
    CHECK(g.min_eigenvalue == 0.0);
}

TEST_CASE("gramian: chain-of-integrators closed form") {
    const Gramian g = gramian_for(chain_integrator_system(),
                                  DiffusionSpec::constant(1.0), State3{}, 1.0,
                                  1e-3);
    const Mat3 expected = chain_gramian_closed_form(1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(std::abs(g.w(i, j) - expected(i, j)) <=
                  1e-8 * std::abs(expected(i, j)));
}

TEST_CASE("gramian: eigenvalue ladder scales like T, T^3, T^5") {
    std::vector<double> lt, l1, l2, l3;
    for (double T : {1e-3, 2e-3, 4e-3, 8e-3, 1e-2}) {
        const Gramian g = gramian_for(chain_integrator_system(),
                                      DiffusionSpec::constant(1.0), State3{}, T,
                                      T / 1000.0);
        const Vec3 lam = g.eigenvalues_graded();
        lt.push_back(std::log(T));
        l1.push_back(std::log(lam[0]));
        l2.push_back(std::log(lam[1]));
        l3.push_back(std::log(lam[2]));
    }
    CHECK(std::abs(oracles::slope(lt, l1) - 1.0) <= 0.05);
    CHECK(std::abs(oracles::slope(lt, l2) - 3.0) <= 0.15);
    CHECK(std::abs(oracles::slope(lt, l3) - 5.0) <= 0.25);
}

TEST_CASE("gramian: symmetry, PSD, and live couplings at generic parameters") {
    const Gramian g =
        linearize_and_gramian(oracles::generic_params(),
                              DiffusionSpec::constant(0.5),
                              oracles::interior_state(), 1.0, 1e-3);
    CHECK((g.w - g.w.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    const Vec3 lam = g.eigenvalues_graded();
    CHECK(lam[2] >= 0.0);
    CHECK(g.min_eigenvalue > 0.0);  // weak-coupling chain is alive
}

TEST_CASE("action_linear: zero displacement, closed form, reflection symmetry") {
    const Gramian g = gramian_for(chain_integrator_system(),
                                  DiffusionSpec::constant(1.0), State3{}, 1.0,
                                  1e-3);
    const State3 end = g.flow.back();
    CHECK(action_linear(g, end, end) == 0.0);

    // displacement (0,0,1): (1/2) (W^{-1})_33 = 360 for the unit-horizon chain
    const State3 y{end.x1, end.x2, end.x3 + 1.0};
    CHECK(action_linear(g, end, y) == doctest::Approx(360.0).epsilon(1e-6));

    const State3 y_reflected{end.x1, end.x2, end.x3 - 1.0};
    CHECK(action_linear(g, end, y) ==
          doctest::Approx(action_linear(g, end, y_reflected)).epsilon(1e-12));
}

TEST_CASE("action_linear: singular Gramian names the null direction") {
    const Gramian g = linearize_and_gramian(
        ModelParams{}, DiffusionSpec::constant(1.0), State3{}, 1.0, 1e-3);
    try {
        action_linear(g, State3{}, State3{0, 0, 1});
        FAIL("expected SingularGramianError");
    } catch (const SingularGramianError& e) {
        CHECK(e.null_axis >= 1);  // x2 or x3: the unreachable coordinates
    }
}

TEST_CASE("adjoint gradient matches central finite differences") {
    const int n_int = 16;
    PenaltyObjective obj(model_system(oracles::generic_params()),
                         oracles::interior_state(), State3{0.5, 0.2, 0.1}, 1.0,
                         n_int, 64, 50.0);
    rng::Xoshiro256pp gen(1717);
    std::vector<double> u(n_int);
    for (double& v : u) v = 2.0 * gen.uniform_co() - 1.0;

    std::vector<double> grad;
    obj.eval(u, &grad);
    const double step = 1e-6;
    for (int j : {0, 3, 7, 11, 15}) {
        std::vector<double> up = u, um = u;
        up[j] += step;
        um[j] -= step;
        const double fd = (obj.eval(up, nullptr) - obj.eval(um, nullptr)) /
                          (2.0 * step);
        CHECK(std::abs(grad[j] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("minimize_action: free flow target costs nothing") {
    const ModelParams p = oracles::generic_params();
    const State3 x0 = oracles::interior_state();
    const double T = 1.0;
    const State3 target = integrate_flow(p, x0, T, 1e-3).back();
    const ActionResult res = minimize_action(p, x0, target, T, 16);
    CHECK(res.converged);
    CHECK(res.value <= 1e-8);
    CHECK(res.endpoint_gap <= 1e-6);
    for (double u : res.control.values) CHECK(std::abs(u) <= 1e-4);
}

TEST_CASE("minimize_action: linear hook matches the Gramian closed form") {
    const Gramian g = gramian_for(chain_integrator_system(),
                                  DiffusionSpec::constant(1.0), State3{}, 1.0,
                                  1e-3);
    const State3 end = g.flow.back();
    const State3 target{end.x1, end.x2, end.x3 + 1.0};
    const double exact = action_linear(g, end, target);

    const ActionResult res =
        minimize_action_system(chain_integrator_system(), State3{}, target, 1.0,
                               64);
    CHECK(res.converged);
    CHECK(std::abs(res.value - exact) <= 0.01 * exact);
}

TEST_CASE("minimize_action: cost falls as the target slides toward the flow") {
    const ModelParams p = oracles::small_params();
    const State3 x0 = oracles::interior_state();
    const double T = 0.8;
    const State3 end = integrate_flow(p, x0, T, 1e-3).back();
    const State3 far{end.x1 + 0.3, end.x2 + 0.1, end.x3 + 0.02};

    double prev = 1e300;
    for (int k = 0; k <= 4; ++k) {
        const double lam = 1.0 - 0.25 * k;  // 1 -> far, 0 -> on-flow
        const State3 y = end + lam * (far - end);
        const ActionResult res = minimize_action(p, x0, y, T, 32);
        CHECK(res.value < prev + 1e-9);
        prev = res.value;
    }
    CHECK(prev <= 1e-6);  // on-flow endpoint
}

TEST_CASE("feedback: consistency with the open-loop optimal control") {
    // closed-form open loop for the chain: u(s) = B^T Phi(T,s)^T W^{-1} d
    const double T = 1.0;
    const State3 y0{0.0, 0.0, 1.0};
    const GramianFamily fam =
        gramian_family(chain_integrator_system(), DiffusionSpec::constant(1.0),
                       State3{}, T, 5e-4, y0);

    const Mat3 w = chain_gramian_closed_form(T);
    const Vec3 coef = w.inverse() * Vec3(0, 0, 1);
    auto u_ol = [&](double s) {
        const double u1 = T - s;
        return coef[0] + coef[1] * u1 + coef[2] * u1 * u1 / 2.0;
    };

    // integrate the exact open-loop trajectory (RK4, polynomial dynamics)
    const TimeGrid grid = fam.grid;
    std::vector<State3> traj(grid.n_nodes());
    State3 x{};
    traj[0] = x;
    auto f = [&](double t, const State3& s) {
        return State3{u_ol(t), s.x1, s.x2};
    };
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        const double t = grid.t(k);
        const double h = grid.h;
        const State3 k1 = f(t, x);
        const State3 k2 = f(t + h / 2, x + 0.5 * h * k1);
        const State3 k3 = f(t + h / 2, x + 0.5 * h * k2);
        const State3 k4 = f(t + h, x + h * k3);
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        traj[k + 1] = x;
    }
    CHECK(norm(traj.back() - y0) <= 1e-6);  // reaches the target

    for (double t : {0.0, 0.1, 0.2, 0.4, 0.6}) {
        const auto k = static_cast<std::size_t>(std::llround(t / grid.h));
        const double u_fb = optimal_feedback_linear(fam, t, traj[k]);
        CHECK(std::abs(u_fb - u_ol(t)) <= 1e-6 * std::max(1.0, std::abs(u_ol(t))));
    }
}

TEST_CASE("feedback: on-flow state with on-flow target needs no control") {
    const ControlSystem sys = model_system(oracles::generic_params());
    const State3 x0 = oracles::interior_state();
    const double T = 1.0;
    const FlowPath flow = integrate_flow(oracles::generic_params(), x0, T, 1e-3);
    const GramianFamily fam = gramian_family(sys, DiffusionSpec::constant(0.5),
                                             x0, T, 1e-3, flow.back());
    for (double t : {0.0, 0.3, 0.6}) {
        const auto k = static_cast<std::size_t>(std::llround(t / fam.grid.h));
        CHECK(std::abs(optimal_feedback_linear(fam, t, fam.flow.states[k])) <=
              1e-9);
    }
}

TEST_CASE("feedback: horizon floor raises past T") {
    const GramianFamily fam =
        gramian_family(chain_integrator_system(), DiffusionSpec::constant(1.0),
                       State3{}, 1.0, 1e-3, State3{0, 0, 1});
    CHECK_THROWS_AS(optimal_feedback_linear(fam, 1.0, State3{}), DomainError);
}

TEST_CASE("feedback: closed-loop cost reproduces the linear action") {
    const double T = 1.0;
    const State3 y0{0.0, 0.0, 1.0};
    const GramianFamily fam =
        gramian_family(chain_integrator_system(), DiffusionSpec::constant(1.0),
                       State3{}, T, 5e-4, y0);
    const Gramian g = gramian_for(chain_integrator_system(),
                                  DiffusionSpec::constant(1.0), State3{}, T,
                                  1e-3);
    const double exact = action_linear(g, g.flow.back(), y0);

    const ClosedLoopResult loop = run_closed_loop(fam, State3{});
    CHECK(std::abs(loop.cost - exact) <= 0.01 * exact);
    CHECK(norm(loop.endpoint - y0) <= 2e-2);
}

TEST_CASE("gaussian comparison density integrates to 1") {
    const Gramian g =
        linearize_and_gramian(oracles::generic_params(),
                              DiffusionSpec::constant(0.5),
                              oracles::interior_state(), 1.0, 1e-3);
    // separable quadrature in the eigenbasis
    Eigen::SelfAdjointEigenSolver<Mat3> es(g.w);
    const Vec3 lam = es.eigenvalues();
    REQUIRE(lam[0] > 0.0);
    double integral = 1.0;
    for (int a = 0; a < 3; ++a) {
        const double sd = std::sqrt(lam[a]);
        const int m = 401;
        const double span = 8.0 * sd;
        const double dz = 2.0 * span / (m - 1);
        double one_d = 0.0;
        for (int i = 0; i < m; ++i) {
            const double z = -span + i * dz;
            const double w = (i == 0 || i == m - 1) ? 0.5 : 1.0;
            one_d += w * std::exp(-z * z / (2.0 * lam[a])) * dz;
        }
        integral *= one_d / std::sqrt(2.0 * M_PI * lam[a]);
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));

    // density evaluator agrees with the quadratic form route at a point
    const State3 end = g.flow.back();
    const State3 y = end + State3{0.1, 0.01, 0.001};
    const double p = gaussian_comparison_density(g, end, y);
    const double expected =
        std::exp(-action_linear(g, end, y)) /
        std::sqrt(std::pow(2.0 * M_PI, 3) * g.w.determinant());
    CHECK(p == doctest::Approx(expected).epsilon(1e-12));
}
