#pragma once

#include <Eigen/Dense>
#include <functional>

#include "opidyn/errors.hpp"

namespace opidyn {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Reduced state (x1, x2, x3) = (S, A, R); the prescribed fraction is
// implied by the unit-population constraint, P = 1 - x1 - x2 - x3.
struct State3 {
    double x1 = 0.0;
    double x2 = 0.0;
    double x3 = 0.0;

    Vec3 vec() const { return Vec3(x1, x2, x3); }
    static State3 from(const Vec3& v) { return {v[0], v[1], v[2]}; }
    bool finite() const;
};

inline State3 operator+(const State3& a, const State3& b) {
    return {a.x1 + b.x1, a.x2 + b.x2, a.x3 + b.x3};
}
inline State3 operator-(const State3& a, const State3& b) {
    return {a.x1 - b.x1, a.x2 - b.x2, a.x3 - b.x3};
}
inline State3 operator*(double c, const State3& a) {
    return {c * a.x1, c * a.x2, c * a.x3};
}
double norm(const State3& a);

// Full state (S, P, A, R), population fractions.
struct State4 {
    double s = 0.0;
    double p = 0.0;
    double a = 0.0;
    double r = 0.0;
    bool finite() const;
};

inline State4 operator+(const State4& a, const State4& b) {
    return {a.s + b.s, a.p + b.p, a.a + b.a, a.r + b.r};
}
inline State4 operator*(double c, const State4& a) {
    return {c * a.s, c * a.p, c * a.a, c * a.r};
}

// The eleven nonnegative epidemiological rates.
//   alpha      prescription rate S -> P
//   beta       total non-prescription addiction probability rate
//   xi         fraction of beta due to leftover prescription opioids
//   eps_rate   prescription return rate P -> S
//   delta      successful-treatment return rate R -> S
//   mu         natural death rate (recycled to S, constant population)
//   mu_star    enhanced death rate for addicts (mu + overdose)
//   gamma      prescribed-to-addicted rate P -> A
//   zeta       treatment entry rate A -> R
//   nu         availability-driven treatment relapse rate R -> A
//   sigma_rel  inherent treatment relapse rate R -> A
struct ModelParams {
    double alpha = 0.0;
    double beta = 0.0;
    double xi = 0.0;
    double eps_rate = 0.0;
    double delta = 0.0;
    double mu = 0.0;
    double mu_star = 0.0;
    double gamma = 0.0;
    double zeta = 0.0;
    double nu = 0.0;
    double sigma_rel = 0.0;

    // Throws ConfigError on negative rates, xi outside [0,1] or mu_star < mu.
    void validate() const;
};

// Diffusion coefficient sigma_hat acting on the susceptible coordinate only.
// Constant by default; a state-dependent evaluator may be supplied. Every
// evaluation is checked against the declared ellipticity window
// [lambda_lower, sigma_upper^2] for sigma_hat^2.
struct DiffusionSpec {
    double sigma_hat = 1.0;
    std::function<double(double, const State3&)> sigma_fn;  // optional
    double lambda_lower = 1.0;
    double sigma_upper = 1.0;

    static DiffusionSpec constant(double s) {
        DiffusionSpec d;
        d.sigma_hat = s;
        d.lambda_lower = s * s;
        d.sigma_upper = s;
        return d;
    }

    void validate() const;

    // sigma_hat(t, x) with the window check.
    double sigma(double t, const State3& x) const;
    // a(t, x) = sigma_hat^2.
    double a(double t, const State3& x) const { double s = sigma(t, x); return s * s; }
};

// Right-hand side of the four-compartment system. Every term is a flow
// between compartments (deaths are recycled into S to keep the population
// constant), so the components sum to zero identically.
State4 vector_field_full(const ModelParams& params, const State4& s);

// Reduced three-state field with P eliminated as 1 - x1 - x2 - x3.
State3 vector_field(const ModelParams& params, const State3& x);

// Analytic Jacobian of the reduced field. Entry (2,0) ... note: row 2
// (the R equation) has no x1 dependence, so entry (2,0) is identically 0.
Mat3 jacobian(const ModelParams& params, const State3& x);

// Backward operator applied to caller-supplied derivatives of a test
// function at (t, x):  (1/2) a(t,x) hess11 + sum_i f_i(t,x) grad_i.
double apply_generator(const ModelParams& params, const DiffusionSpec& diff,
                       double t, const State3& x, const Vec3& grad,
                       double hess11);

// Embed a reduced state into the full simplex coordinates.
inline State4 embed(const State3& x) {
    return {x.x1, 1.0 - x.x1 - x.x2 - x.x3, x.x2, x.x3};
}
inline State3 project(const State4& s) { return {s.s, s.a, s.r}; }

// Diagnostic: distance by which a state leaves the unit simplex
// (0 when all of x1, x2, x3 and the implied P lie in [0,1]).
double simplex_violation(const State3& x);

}  // namespace opidyn
