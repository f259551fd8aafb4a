#include "opidyn/sde.hpp"

#include <cmath>

#include "opidyn/errors.hpp"
#include "opidyn/scaling.hpp"

namespace opidyn {

namespace {

constexpr double kBlowupNorm = 1e8;

struct RegSpec {
    double c2 = 0.0;
    double c3 = 0.0;
    bool shared_v = true;
    bool active() const { return c2 != 0.0 || c3 != 0.0; }
};

// Core Euler-Maruyama kernel. Drift is a callable (t, x) -> State3.
template <class DriftFn, class SigmaFn>
SdePath em_simulate(DriftFn&& drift, SigmaFn&& sigma, const State3& x0, double T,
                    double h, std::uint64_t seed, const RegSpec& reg,
                    const ControlSignal* control, double eps_reg_label) {
    const TimeGrid grid = make_grid(T, h);
    if (control) {
        control->validate();
        if (std::abs(control->T - T) > 1e-12 * std::max(1.0, T) ||
            grid.n_steps % control->intervals() != 0)
            throw ConfigError("control grid incompatible with [0,T]");
    }

    rng::NormalStream w(rng::derive_stream_seed(seed, 0, rng::kStreamW));
    rng::NormalStream v(rng::derive_stream_seed(seed, 0, rng::kStreamV));

    SdePath path;
    path.grid = grid;
    path.seed = seed;
    path.eps_reg = eps_reg_label;
    path.states.reserve(grid.n_nodes());
    path.states.push_back(x0);

    const double sqrt_h = std::sqrt(grid.h);
    State3 x = x0;
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        const double t = grid.t(k);
        const State3 f = drift(t, x);
        const double u = control ? control->at_step(k, grid.n_steps) : 0.0;
        const double sig = sigma(t, x);
        const double dw = w.next();
        double dv1 = 0.0, dv2 = 0.0;
        if (reg.active()) {
            dv1 = v.next();
            dv2 = reg.shared_v ? dv1 : v.next();
        }
        x = detail::em_update(x, f, u, sig, grid.h, sqrt_h, dw, reg.c2, reg.c3,
                              dv1, dv2);
        if (!x.finite() || norm(x) > kBlowupNorm)
            throw IntegrationError("SDE path blew up", grid.t(k + 1));
        path.states.push_back(x);
    }
    return path;
}

}  // namespace

void ControlSignal::validate() const {
    if (values.empty()) throw ConfigError("control must have at least 1 interval");
    if (!(T > 0.0)) throw ConfigError("control horizon must be positive");
    double e = 0.0;
    for (double u : values) {
        if (!std::isfinite(u)) throw ConfigError("control values must be finite");
        e += u * u;
    }
    if (!std::isfinite(e)) throw ConfigError("control energy must be finite");
}

double ControlSignal::at_step(std::size_t k, std::size_t n_steps) const {
    const std::size_t per = n_steps / values.size();
    return values[k / per];
}

double ControlSignal::energy() const {
    const double dt = T / static_cast<double>(values.size());
    double e = 0.0;
    for (double u : values) e += u * u;
    return 0.5 * e * dt;
}

void SimConfig::validate() const {
    params.validate();
    diff.validate();
    if (!(T > 0.0) || !(h > 0.0) || h > T)
        throw ConfigError("simulation requires 0 < h <= T");
    if (eps_reg < 0.0 || !std::isfinite(eps_reg))
        throw ConfigError("eps_reg must be >= 0");
    if (!x0.finite()) throw ConfigError("initial state must be finite");
    if (kind == Kind::Rescaled && !(rescale_horizon > 0.0))
        throw ConfigError("rescaled simulation needs a positive horizon");
}

SdePath simulate_degenerate(const ModelParams& params, const DiffusionSpec& diff,
                            const State3& x0, double T, double h,
                            std::uint64_t seed, const ControlSignal* control) {
    return em_simulate(
        [&params](double, const State3& x) { return vector_field(params, x); },
        [&diff](double t, const State3& x) { return diff.sigma(t, x); }, x0, T, h,
        seed, RegSpec{}, control, 0.0);
}

SdePath simulate_regularized(const ModelParams& params, const DiffusionSpec& diff,
                             double eps_reg, const State3& x0, double T, double h,
                             std::uint64_t seed, bool shared_v) {
    if (eps_reg < 0.0) throw ConfigError("eps_reg must be >= 0");
    RegSpec reg;
    if (eps_reg > 0.0) {
        reg.c2 = reg.c3 = std::sqrt(eps_reg);
        reg.shared_v = shared_v;
    }
    return em_simulate(
        [&params](double, const State3& x) { return vector_field(params, x); },
        [&diff](double t, const State3& x) { return diff.sigma(t, x); }, x0, T, h,
        seed, reg, nullptr, eps_reg);
}

SdePath simulate_rescaled(const ModelParams& params, const DiffusionSpec& diff,
                          double horizon_T, const State3& x0_rescaled,
                          double h_unit, std::uint64_t seed, double eps_reg,
                          bool shared_v) {
    if (!(horizon_T > 0.0)) throw ConfigError("rescale horizon must be positive");
    const double T = horizon_T;
    RegSpec reg;
    if (eps_reg > 0.0) {
        reg.c2 = std::sqrt(eps_reg) / T;
        reg.c3 = std::sqrt(eps_reg) / (T * T);
        reg.shared_v = shared_v;
    }
    auto drift = [&params, T](double, const State3& xt) {
        const State3 x = unrescale_state(xt, T);
        const State3 f = vector_field(params, x);
        // T^{3/2} Gamma^{-1}(T) = diag(T^{1/2}, T^{-1/2}, T^{-3/2})
        const double rt = std::sqrt(T);
        return State3{rt * f.x1, f.x2 / rt, f.x3 / (rt * T)};
    };
    auto sigma = [&diff, T](double t, const State3& xt) {
        return diff.sigma(T * t, unrescale_state(xt, T));
    };
    return em_simulate(drift, sigma, x0_rescaled, 1.0, h_unit, seed, reg, nullptr,
                       eps_reg);
}

SdePath simulate_one(const SimConfig& config, std::uint64_t seed) {
    switch (config.kind) {
        case SimConfig::Kind::Rescaled:
            return simulate_rescaled(config.params, config.diff,
                                     config.rescale_horizon, config.x0, config.h,
                                     seed, config.eps_reg, config.shared_v);
        case SimConfig::Kind::Standard:
        default:
            if (config.eps_reg > 0.0)
                return simulate_regularized(config.params, config.diff,
                                            config.eps_reg, config.x0, config.T,
                                            config.h, seed, config.shared_v);
            return simulate_degenerate(config.params, config.diff, config.x0,
                                       config.T, config.h, seed,
                                       config.control ? &*config.control : nullptr);
    }
}

std::uint64_t trajectory_seed(std::uint64_t base_seed, std::uint64_t index) {
    return rng::derive_stream_seed(base_seed, index, 3);
}

namespace {

template <bool kParallel>
PathEnsemble run_ensemble(const SimConfig& config, std::size_t n,
                          std::uint64_t base_seed, bool store_paths) {
    config.validate();
    if (n < 1) throw ConfigError("ensemble needs n >= 1");

    PathEnsemble ens;
    ens.config = config;
    ens.base_seed = base_seed;
    ens.n = n;
    ens.terminal.assign(n, State3{});
    ens.failed.assign(n, 0);
    if (store_paths) ens.paths.resize(n);

    const auto body = [&](std::size_t i) {
        try {
            SdePath p = simulate_one(config, trajectory_seed(base_seed, i));
            ens.terminal[i] = p.terminal();
            if (store_paths) ens.paths[i] = std::move(p);
        } catch (const IntegrationError&) {
            ens.failed[i] = 1;
            const double nan = std::nan("");
            ens.terminal[i] = State3{nan, nan, nan};
        }
    };

    if constexpr (kParallel) {
#pragma omp parallel for schedule(dynamic, 64)
        for (long long i = 0; i < static_cast<long long>(n); ++i)
            body(static_cast<std::size_t>(i));
    } else {
        for (std::size_t i = 0; i < n; ++i) body(i);
    }

    std::size_t nf = 0;
    for (std::uint8_t f : ens.failed) nf += f;
    ens.n_failed = nf;
    return ens;
}

}  // namespace

PathEnsemble simulate_ensemble(const SimConfig& config, std::size_t n,
                               std::uint64_t base_seed, bool store_paths) {
    return run_ensemble<true>(config, n, base_seed, store_paths);
}

PathEnsemble simulate_ensemble_serial(const SimConfig& config, std::size_t n,
                                      std::uint64_t base_seed, bool store_paths) {
    return run_ensemble<false>(config, n, base_seed, store_paths);
}

std::vector<CouplingRow> coupling_study(const ModelParams& params,
                                        const DiffusionSpec& diff,
                                        const State3& x0, double T, double h,
                                        std::uint64_t base_seed, std::size_t n,
                                        const std::vector<double>& eps_list,
                                        bool shared_v) {
    params.validate();
    const TimeGrid grid = make_grid(T, h);
    const std::size_t m = eps_list.size();
    for (double e : eps_list)
        if (!(e > 0.0)) throw ConfigError("coupling study needs eps > 0");

    // sup-distance of each coupled trajectory, slot-indexed for determinism
    std::vector<std::vector<double>> sup(m, std::vector<double>(n, 0.0));

    const double sqrt_h = std::sqrt(grid.h);
#pragma omp parallel for schedule(dynamic, 16)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const std::uint64_t seed = trajectory_seed(base_seed, i);
        rng::NormalStream w(rng::derive_stream_seed(seed, 0, rng::kStreamW));
        rng::NormalStream v(rng::derive_stream_seed(seed, 0, rng::kStreamV));

        State3 base = x0;
        std::vector<State3> xs(m, x0);
        std::vector<double> sups(m, 0.0);
        for (std::size_t k = 0; k < grid.n_steps; ++k) {
            const double t = grid.t(k);
            const double dw = w.next();
            const double dv1 = v.next();
            const double dv2 = shared_v ? dv1 : v.next();

            const State3 fb = vector_field(params, base);
            base = detail::em_update(base, fb, 0.0, diff.sigma(t, base), grid.h,
                                     sqrt_h, dw, 0.0, 0.0, dv1, dv2);
            for (std::size_t j = 0; j < m; ++j) {
                const double c = std::sqrt(eps_list[j]);
                const State3 fj = vector_field(params, xs[j]);
                xs[j] = detail::em_update(xs[j], fj, 0.0, diff.sigma(t, xs[j]),
                                          grid.h, sqrt_h, dw, c, c, dv1, dv2);
                sups[j] = std::max(sups[j], norm(xs[j] - base));
            }
        }
        for (std::size_t j = 0; j < m; ++j) sup[j][i] = sups[j];
    }

    std::vector<CouplingRow> rows;
    rows.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
        double mean = 0.0;
        for (double s : sup[j]) mean += s;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double s : sup[j]) var += (s - mean) * (s - mean);
        var /= static_cast<double>(n > 1 ? n - 1 : 1);
        rows.push_back({eps_list[j], mean, std::sqrt(var / static_cast<double>(n))});
    }
    return rows;
}

}  // namespace opidyn
