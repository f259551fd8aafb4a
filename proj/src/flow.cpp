#include "opidyn/flow.hpp"

#include <cmath>

#include "opidyn/errors.hpp"

namespace opidyn {

namespace {

constexpr double kBlowupNorm = 1e8;

State3 rk4_step(const FieldFn& f, double t, const State3& x, double h) {
    const State3 k1 = f(t, x);
    const State3 k2 = f(t + 0.5 * h, x + 0.5 * h * k1);
    const State3 k3 = f(t + 0.5 * h, x + 0.5 * h * k2);
    const State3 k4 = f(t + h, x + h * k3);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

TimeGrid make_grid(double T, double h_requested) {
    if (!(T > 0.0) || !std::isfinite(T))
        throw ConfigError("horizon T must be positive and finite");
    if (!(h_requested > 0.0) || h_requested > T)
        throw ConfigError("step h must satisfy 0 < h <= T");
    const std::size_t n =
        static_cast<std::size_t>(std::llround(std::ceil(T / h_requested - 1e-9)));
    TimeGrid g;
    g.t0 = 0.0;
    g.n_steps = n == 0 ? 1 : n;
    g.h = T / static_cast<double>(g.n_steps);
    return g;
}

State3 FlowPath::at(double t, const FieldFn& field) const {
    const double s = (t - grid.t0) / grid.h;
    auto k = static_cast<std::size_t>(std::floor(s));
    if (k >= grid.n_steps) k = grid.n_steps - 1;
    const double u = s - static_cast<double>(k);
    if (u < 1e-12) return states[k];
    const State3& a = states[k];
    const State3& b = states[k + 1];
    const State3 fa = field(grid.t(k), a);
    const State3 fb = field(grid.t(k + 1), b);
    const double h = grid.h;
    // Cubic Hermite in normalized coordinate u.
    const double h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
    const double h10 = u * (1.0 - u) * (1.0 - u);
    const double h01 = u * u * (3.0 - 2.0 * u);
    const double h11 = u * u * (u - 1.0);
    return h00 * a + (h10 * h) * fa + h01 * b + (h11 * h) * fb;
}

FlowPath integrate_flow_field(const FieldFn& field, const State3& x0, double T,
                              double h) {
    const TimeGrid grid = make_grid(T, h);
    FlowPath path;
    path.grid = grid;
    path.states.reserve(grid.n_nodes());
    path.states.push_back(x0);
    State3 x = x0;
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        x = rk4_step(field, grid.t(k), x, grid.h);
        if (!x.finite() || norm(x) > kBlowupNorm)
            throw IntegrationError("flow integration blew up", grid.t(k + 1));
        path.states.push_back(x);
    }
    return path;
}

FlowPath integrate_flow(const ModelParams& params, const State3& x0, double T,
                        double h) {
    params.validate();
    return integrate_flow_field(
        [&params](double, const State3& x) { return vector_field(params, x); },
        x0, T, h);
}

TransitionFamily transition_matrices_jac(const JacobianFn& jac_at,
                                         const TimeGrid& grid) {
    TransitionFamily fam;
    fam.grid = grid;
    fam.to_horizon.assign(grid.n_nodes(), Mat3::Identity());

    // RK4 on d/ds Phi = -Phi J(s), marching s from T down to 0.
    Mat3 phi = Mat3::Identity();
    const double h = grid.h;
    for (std::size_t k = grid.n_steps; k-- > 0;) {
        const double s1 = grid.t(k + 1);
        const double sm = s1 - 0.5 * h;
        const double s0 = grid.t(k);
        const Mat3 j1 = jac_at(s1);
        const Mat3 jm = jac_at(sm);
        const Mat3 j0 = jac_at(s0);
        const Mat3 k1 = phi * j1;                        // -dPhi/ds at s1
        const Mat3 k2 = (phi + 0.5 * h * k1) * jm;
        const Mat3 k3 = (phi + 0.5 * h * k2) * jm;
        const Mat3 k4 = (phi + h * k3) * j0;
        phi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!phi.allFinite())
            throw IntegrationError("transition-matrix integration blew up", s0);
        fam.to_horizon[k] = phi;
    }
    return fam;
}

TransitionFamily transition_matrices(const ModelParams& params,
                                     const FlowPath& path) {
    // Half-step re-integration supplies exact grid states at step midpoints.
    const double T = path.grid.horizon();
    const FlowPath fine =
        integrate_flow(params, path.front(), T, 0.5 * path.grid.h);
    const double hf = fine.grid.h;
    auto jac_at = [&](double s) {
        auto k = static_cast<std::size_t>(std::llround((s - fine.grid.t0) / hf));
        if (k >= fine.states.size()) k = fine.states.size() - 1;
        return jacobian(params, fine.states[k]);
    };
    return transition_matrices_jac(jac_at, path.grid);
}

}  // namespace opidyn
