#include "opidyn/model.hpp"

#include <cmath>

namespace opidyn {

bool State3::finite() const {
    return std::isfinite(x1) && std::isfinite(x2) && std::isfinite(x3);
}

double norm(const State3& a) {
    return std::sqrt(a.x1 * a.x1 + a.x2 * a.x2 + a.x3 * a.x3);
}

bool State4::finite() const {
    return std::isfinite(s) && std::isfinite(p) && std::isfinite(a) &&
           std::isfinite(r);
}

void ModelParams::validate() const {
    const double vals[] = {alpha, beta,  xi,   eps_rate, delta,    mu,
                           mu_star, gamma, zeta, nu,       sigma_rel};
    const char* names[] = {"alpha", "beta",  "xi",   "eps_rate", "delta",    "mu",
                           "mu_star", "gamma", "zeta", "nu",       "sigma_rel"};
    for (int i = 0; i < 11; ++i) {
        if (!(vals[i] >= 0.0) || !std::isfinite(vals[i]))
            throw ConfigError(std::string("model parameter ") + names[i] +
                              " must be a finite nonnegative rate");
    }
    if (xi > 1.0) throw ConfigError("xi must lie in [0,1]");
    if (mu_star < mu)
        throw ConfigError("mu_star must be at least mu (enhanced death rate)");
}

void DiffusionSpec::validate() const {
    if (!std::isfinite(lambda_lower) || lambda_lower < 0.0)
        throw ConfigError("diffusion lambda_lower must be finite and >= 0");
    if (!std::isfinite(sigma_upper) || sigma_upper < 0.0)
        throw ConfigError("diffusion sigma_upper must be finite and >= 0");
    if (lambda_lower > sigma_upper * sigma_upper)
        throw ConfigError("diffusion window empty: lambda_lower > sigma_upper^2");
    if (!sigma_fn && !std::isfinite(sigma_hat))
        throw ConfigError("constant sigma_hat must be finite");
}

double DiffusionSpec::sigma(double t, const State3& x) const {
    const double s = sigma_fn ? sigma_fn(t, x) : sigma_hat;
    const double s2 = s * s;
    // Ellipticity window check, with a little slack for roundoff.
    const double up = sigma_upper * sigma_upper;
    if (!std::isfinite(s) || s2 < lambda_lower - 1e-12 || s2 > up + 1e-12 * (1.0 + up))
        throw DomainError("sigma_hat(t,x) outside declared ellipticity window");
    return s;
}

State4 vector_field_full(const ModelParams& q, const State4& st) {
    if (!st.finite()) throw DomainError("vector_field_full: non-finite state");
    const double S = st.s, P = st.p, A = st.a, R = st.r;

    const double prescribe = q.alpha * S;                  // S -> P
    const double addict_black = q.beta * (1.0 - q.xi) * S * A;  // S -> A
    const double addict_leftover = q.beta * q.xi * S * P;  // S -> A
    const double presc_return = q.eps_rate * P;            // P -> S
    const double treat_done = q.delta * R;                 // R -> S
    const double deaths_pr = q.mu * (P + R);               // P,R -> S (rebirth)
    const double deaths_a = q.mu_star * A;                 // A -> S (rebirth)
    const double fall_in = q.gamma * P;                    // P -> A
    const double relapse = q.sigma_rel * R;                // R -> A
    const double relapse_avail = q.nu * R * A;             // R -> A

    const double enter_treat = q.zeta * A;                 // A -> R

    State4 d;
    d.s = -prescribe - addict_black - addict_leftover + presc_return +
          treat_done + deaths_pr + deaths_a;
    d.p = prescribe - presc_return - fall_in - q.mu * P;
    d.a = fall_in + relapse + addict_black + addict_leftover + relapse_avail -
          enter_treat - deaths_a;
    d.r = enter_treat - relapse_avail - treat_done - relapse - q.mu * R;
    return d;
}

State3 vector_field(const ModelParams& q, const State3& x) {
    if (!x.finite()) throw DomainError("vector_field: non-finite state");
    const double x1 = x.x1, x2 = x.x2, x3 = x.x3;
    const double P = 1.0 - x1 - x2 - x3;

    State3 f;
    f.x1 = -q.alpha * x1 - q.beta * (1.0 - q.xi) * x1 * x2 -
           q.beta * q.xi * x1 * P + (q.eps_rate + q.mu) * P +
           (q.delta + q.mu) * x3 + q.mu_star * x2;
    f.x2 = q.gamma * P + q.sigma_rel * x3 + q.beta * (1.0 - q.xi) * x1 * x2 +
           q.beta * q.xi * x1 * P + q.nu * x3 * x2 - (q.zeta + q.mu_star) * x2;
    f.x3 = q.zeta * x2 - q.nu * x3 * x2 - (q.delta + q.sigma_rel + q.mu) * x3;
    return f;
}

Mat3 jacobian(const ModelParams& q, const State3& x) {
    if (!x.finite()) throw DomainError("jacobian: non-finite state");
    const double x1 = x.x1, x2 = x.x2, x3 = x.x3;
    const double P = 1.0 - x1 - x2 - x3;
    const double b1 = q.beta * (1.0 - q.xi);
    const double b2 = q.beta * q.xi;

    Mat3 j;
    j(0, 0) = -q.alpha - b1 * x2 - b2 * (P - x1) - (q.eps_rate + q.mu);
    j(0, 1) = -b1 * x1 + b2 * x1 - (q.eps_rate + q.mu) + q.mu_star;
    j(0, 2) = b2 * x1 - q.eps_rate + q.delta;

    j(1, 0) = -q.gamma + b1 * x2 + b2 * (P - x1);
    j(1, 1) = -q.gamma + b1 * x1 - b2 * x1 + q.nu * x3 - (q.zeta + q.mu_star);
    j(1, 2) = -q.gamma + q.sigma_rel - b2 * x1 + q.nu * x2;

    j(2, 0) = 0.0;
    j(2, 1) = q.zeta - q.nu * x3;
    j(2, 2) = -q.nu * x2 - (q.delta + q.sigma_rel + q.mu);
    return j;
}

double apply_generator(const ModelParams& params, const DiffusionSpec& diff,
                       double t, const State3& x, const Vec3& grad,
                       double hess11) {
    if (!x.finite() || !grad.allFinite() || !std::isfinite(hess11))
        throw DomainError("apply_generator: non-finite input");
    const State3 f = vector_field(params, x);
    return 0.5 * diff.a(t, x) * hess11 + f.x1 * grad[0] + f.x2 * grad[1] +
           f.x3 * grad[2];
}

double simplex_violation(const State3& x) {
    const double p = 1.0 - x.x1 - x.x2 - x.x3;
    double v = 0.0;
    for (double c : {x.x1, x.x2, x.x3, p}) {
        if (c < 0.0) v = std::max(v, -c);
        if (c > 1.0) v = std::max(v, c - 1.0);
    }
    return v;
}

}  // namespace opidyn
