#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "opidyn/model.hpp"
#include "opidyn/rng.hpp"
#include "oracles.hpp"

using namespace opidyn;

namespace {

ModelParams random_params(rng::Xoshiro256pp& gen) {
    ModelParams p;
    p.alpha = gen.uniform_co();
    p.beta = gen.uniform_co();
    p.xi = gen.uniform_co();
    p.eps_rate = gen.uniform_co();
    p.delta = gen.uniform_co();
    p.mu = 0.05 * gen.uniform_co();
    p.mu_star = p.mu + 0.05 * gen.uniform_co();
    p.gamma = gen.uniform_co();
    p.zeta = gen.uniform_co();
    p.nu = gen.uniform_co();
    p.sigma_rel = gen.uniform_co();
    return p;
}

State3 random_state(rng::Xoshiro256pp& gen) {
    // interior-ish but allowed to spill outside the simplex
    return {1.2 * gen.uniform_co() - 0.1, 1.2 * gen.uniform_co() - 0.1,
            1.2 * gen.uniform_co() - 0.1};
}

}  // namespace

TEST_CASE("full field: zero rates give the zero field") {
    ModelParams p;
    State4 s{0.3, 0.2, 0.4, 0.1};
    const State4 d = vector_field_full(p, s);
    CHECK(d.s == 0.0);
    CHECK(d.p == 0.0);
    CHECK(d.a == 0.0);
    CHECK(d.r == 0.0);
}

TEST_CASE("full field: prescription return only") {
    ModelParams p;
    p.eps_rate = 0.1;
    const State4 d = vector_field_full(p, State4{0.0, 1.0, 0.0, 0.0});
    CHECK(d.s == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(d.p == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(d.a == 0.0);
    CHECK(d.r == 0.0);
}

TEST_CASE("full field: compartmental conservation over random draws") {
    rng::Xoshiro256pp gen(42);
    for (int i = 0; i < 10000; ++i) {
        const ModelParams p = random_params(gen);
        const State4 s{gen.uniform_co(), gen.uniform_co(), gen.uniform_co(),
                       gen.uniform_co()};
        const State4 d = vector_field_full(p, s);
        CHECK(std::abs(d.s + d.p + d.a + d.r) <= 1e-14);
    }
}

TEST_CASE("reduced field equals the projected full field") {
    rng::Xoshiro256pp gen(7);
    for (int i = 0; i < 100; ++i) {
        const ModelParams p = random_params(gen);
        const State3 x = random_state(gen);
        const State3 f = vector_field(p, x);
        const State4 d = vector_field_full(p, embed(x));
        CHECK(std::abs(f.x1 - d.s) <= 1e-12);
        CHECK(std::abs(f.x2 - d.a) <= 1e-12);
        CHECK(std::abs(f.x3 - d.r) <= 1e-12);
    }
}

TEST_CASE("reduced field: treatment entry only") {
    ModelParams p;
    p.zeta = 0.2;
    const State3 f = vector_field(p, State3{0.0, 0.5, 0.0});
    CHECK(f.x1 == doctest::Approx(0.0));
    CHECK(f.x2 == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(f.x3 == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("jacobian: zero rates give the zero matrix") {
    ModelParams p;
    CHECK(jacobian(p, State3{0.4, 0.3, 0.2}).isZero(0.0));
}

TEST_CASE("jacobian: row 3 never depends on x1") {
    rng::Xoshiro256pp gen(11);
    for (int i = 0; i < 200; ++i) {
        const Mat3 j = jacobian(random_params(gen), random_state(gen));
        CHECK(j(2, 0) == 0.0);
    }
}

TEST_CASE("jacobian matches central finite differences") {
    rng::Xoshiro256pp gen(99);
    const double step = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
        const ModelParams p = random_params(gen);
        const State3 x = random_state(gen);
        const Mat3 j = jacobian(p, x);
        for (int col = 0; col < 3; ++col) {
            State3 xp = x, xm = x;
            double* cp = col == 0 ? &xp.x1 : (col == 1 ? &xp.x2 : &xp.x3);
            double* cm = col == 0 ? &xm.x1 : (col == 1 ? &xm.x2 : &xm.x3);
            *cp += step;
            *cm -= step;
            const State3 fp = vector_field(p, xp);
            const State3 fm = vector_field(p, xm);
            const Vec3 fd = (fp.vec() - fm.vec()) / (2.0 * step);
            for (int row = 0; row < 3; ++row) {
                const double scale = std::max(1.0, std::abs(j(row, col)));
                CHECK(std::abs(j(row, col) - fd[row]) <= 1e-5 * scale);
            }
        }
    }
}

TEST_CASE("noise-propagation couplings are alive at generic parameters") {
    const ModelParams p = oracles::generic_params();
    const Mat3 j = jacobian(p, oracles::interior_state());
    CHECK(std::abs(j(1, 0)) > 1e-3);
    CHECK(std::abs(j(2, 1)) > 1e-3);
}

TEST_CASE("generator: trivial and hand-reduced cases") {
    const ModelParams p0;
    const DiffusionSpec unit = DiffusionSpec::constant(1.0);
    const State3 x{0.5, 0.2, 0.1};

    CHECK(apply_generator(p0, unit, 0.0, x, Vec3::Zero(), 0.0) == 0.0);
    CHECK(apply_generator(p0, unit, 0.0, x, Vec3::Zero(), 2.0) ==
          doctest::Approx(1.0));

    // v(x) = x1: generator reduces to f1
    rng::Xoshiro256pp gen(5);
    for (int i = 0; i < 50; ++i) {
        const ModelParams p = random_params(gen);
        const State3 y = random_state(gen);
        const double lhs = apply_generator(p, unit, 0.0, y, Vec3(1, 0, 0), 0.0);
        CHECK(lhs == doctest::Approx(vector_field(p, y).x1).epsilon(1e-14));
    }
}

TEST_CASE("parameter validation") {
    ModelParams p = oracles::generic_params();
    CHECK_NOTHROW(p.validate());
    p.xi = 1.2;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = oracles::generic_params();
    p.beta = -0.1;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = oracles::generic_params();
    p.mu_star = 0.5 * p.mu;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("non-finite states are rejected") {
    const ModelParams p = oracles::generic_params();
    const double nan = std::nan("");
    CHECK_THROWS_AS(vector_field(p, State3{nan, 0, 0}), DomainError);
    CHECK_THROWS_AS(jacobian(p, State3{0, nan, 0}), DomainError);
    CHECK_THROWS_AS(vector_field_full(p, State4{0, 0, nan, 0}), DomainError);
}

TEST_CASE("diffusion window is enforced on evaluation") {
    DiffusionSpec d = DiffusionSpec::constant(1.0);
    CHECK(d.sigma(0.0, State3{}) == 1.0);

    DiffusionSpec bad = DiffusionSpec::constant(1.0);
    bad.sigma_fn = [](double, const State3&) { return 2.0; };  // above window
    CHECK_THROWS_AS(bad.sigma(0.0, State3{}), DomainError);

    DiffusionSpec varying;
    varying.sigma_fn = [](double, const State3& x) { return 1.0 + 0.1 * x.x1; };
    varying.lambda_lower = 0.5;
    varying.sigma_upper = 2.0;
    CHECK(varying.sigma(0.0, State3{0.5, 0, 0}) == doctest::Approx(1.05));
}

TEST_CASE("simplex violation diagnostic") {
    CHECK(simplex_violation(State3{0.2, 0.3, 0.4}) == 0.0);
    CHECK(simplex_violation(State3{-0.1, 0.3, 0.4}) == doctest::Approx(0.1));
    CHECK(simplex_violation(State3{0.5, 0.4, 0.3}) ==
          doctest::Approx(0.2));  // implied P = -0.2
}
