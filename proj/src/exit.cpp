#include "opidyn/exit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "opidyn/errors.hpp"

namespace opidyn {

namespace {

constexpr double kZ95 = 1.959963984540054;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::pair<double, double> wilson95(std::size_t hits, std::size_t n) {
    if (n == 0) return {0.0, 1.0};
    const double nn = static_cast<double>(n);
    const double q = static_cast<double>(hits) / nn;
    const double z2 = kZ95 * kZ95;
    const double denom = 1.0 + z2 / nn;
    const double center = (q + z2 / (2.0 * nn)) / denom;
    const double half =
        kZ95 * std::sqrt(q * (1.0 - q) / nn + z2 / (4.0 * nn * nn)) / denom;
    const double lo = hits == 0 ? 0.0 : std::max(0.0, center - half);
    const double hi = hits == n ? 1.0 : std::min(1.0, center + half);
    return {lo, hi};
}

// Crossing fraction within (x_old -> x_new), assuming x_old strictly inside
// and x_new on or beyond some face.
double crossing_fraction(const DomainBox& d, const State3& a, const State3& b) {
    double frac = 1.0;
    const double lo[3] = {d.lower.x1, d.lower.x2, d.lower.x3};
    const double hi[3] = {d.upper.x1, d.upper.x2, d.upper.x3};
    const double av[3] = {a.x1, a.x2, a.x3};
    const double bv[3] = {b.x1, b.x2, b.x3};
    for (int i = 0; i < 3; ++i) {
        if (bv[i] <= lo[i])
            frac = std::min(frac, (lo[i] - av[i]) / (bv[i] - av[i]));
        else if (bv[i] >= hi[i])
            frac = std::min(frac, (hi[i] - av[i]) / (bv[i] - av[i]));
    }
    return std::max(frac, 0.0);
}

struct StoppedPath {
    bool exited = false;
    double tau = kInf;
    State3 stopped;  // X(theta)
};

// Streaming trajectory with first-exit detection; stepping arithmetic is
// em_update, identical to the path simulators.
StoppedPath run_exit_trajectory(const ModelParams& params,
                                const DiffusionSpec& diff, const State3& x0,
                                const TimeGrid& grid, const DomainBox& d,
                                std::uint64_t seed, double eps_reg,
                                bool shared_v) {
    rng::NormalStream w(rng::derive_stream_seed(seed, 0, rng::kStreamW));
    rng::NormalStream v(rng::derive_stream_seed(seed, 0, rng::kStreamV));
    const bool reg = eps_reg > 0.0;
    const double c = reg ? std::sqrt(eps_reg) : 0.0;
    const double sqrt_h = std::sqrt(grid.h);

    StoppedPath out;
    State3 x = x0;
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        const double t = grid.t(k);
        const State3 f = vector_field(params, x);
        const double sig = diff.sigma(t, x);
        const double dw = w.next();
        double dv1 = 0.0, dv2 = 0.0;
        if (reg) {
            dv1 = v.next();
            dv2 = shared_v ? dv1 : v.next();
        }
        const State3 y =
            detail::em_update(x, f, 0.0, sig, grid.h, sqrt_h, dw, c, c, dv1, dv2);
        if (!y.finite() || norm(y) > 1e8)
            throw IntegrationError("exit trajectory blew up", grid.t(k + 1));
        if (!d.strictly_inside(y)) {
            const double frac = crossing_fraction(d, x, y);
            out.exited = true;
            out.tau = t + frac * grid.h;
            out.stopped = x + frac * (y - x);
            return out;
        }
        x = y;
    }
    out.stopped = x;
    return out;
}

}  // namespace

void DomainBox::validate() const {
    if (!lower.finite() || !upper.finite())
        throw ConfigError("domain box corners must be finite");
    if (!(lower.x1 < upper.x1 && lower.x2 < upper.x2 && lower.x3 < upper.x3))
        throw ConfigError("domain box needs lower < upper componentwise");
}

bool DomainBox::strictly_inside(const State3& x) const {
    return x.x1 > lower.x1 && x.x1 < upper.x1 && x.x2 > lower.x2 &&
           x.x2 < upper.x2 && x.x3 > lower.x3 && x.x3 < upper.x3;
}

double DomainBox::boundary_distance(const State3& x) const {
    const double d1 = std::min(x.x1 - lower.x1, upper.x1 - x.x1);
    const double d2 = std::min(x.x2 - lower.x2, upper.x2 - x.x2);
    const double d3 = std::min(x.x3 - lower.x3, upper.x3 - x.x3);
    return std::max(0.0, std::min({d1, d2, d3}));
}

std::optional<ExitEvent> exit_time(const SdePath& path, const DomainBox& d) {
    d.validate();
    if (!d.strictly_inside(path.states.front()))
        throw DomainError("exit_time: path must start strictly inside the domain");
    for (std::size_t k = 1; k < path.states.size(); ++k) {
        const State3& y = path.states[k];
        if (!d.strictly_inside(y)) {
            const State3& x = path.states[k - 1];
            const double frac = crossing_fraction(d, x, y);
            ExitEvent ev;
            ev.tau = path.grid.t(k - 1) + frac * path.grid.h;
            ev.state = x + frac * (y - x);
            return ev;
        }
    }
    return std::nullopt;
}

double ExitEstimate::se() const {
    if (n == 0) return 0.0;
    return std::sqrt(q_hat * (1.0 - q_hat) / static_cast<double>(n));
}

ExitSample exit_sample_mc(const ModelParams& params, const DiffusionSpec& diff,
                          const State3& x0, double T, const DomainBox& d,
                          std::size_t n, double h, std::uint64_t base_seed,
                          double eps_reg) {
    params.validate();
    d.validate();
    if (!d.strictly_inside(x0))
        throw DomainError("exit study: x0 must be strictly inside the domain");
    const TimeGrid grid = make_grid(T, h);

    ExitSample out;
    out.horizon = T;
    out.tau.assign(n, kInf);
    out.stopped.assign(n, State3{});
    std::vector<std::uint8_t> failed(n, 0);

#pragma omp parallel for schedule(dynamic, 64)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        try {
            const StoppedPath sp = run_exit_trajectory(
                params, diff, x0, grid, d, trajectory_seed(base_seed, idx),
                eps_reg, true);
            out.tau[idx] = sp.tau;
            out.stopped[idx] = sp.stopped;
        } catch (const IntegrationError&) {
            failed[idx] = 1;
        }
    }
    std::size_t nf = 0;
    for (auto f : failed) nf += f;
    if (nf * 100 > n)
        throw EstimationError("exit study: more than 1% of trajectories failed");
    return out;
}

ExitEstimate ExitSample::estimate_at(double t_sub, double h, double eps_reg) const {
    ExitEstimate est;
    est.n = tau.size();
    est.h = h;
    est.eps_reg = eps_reg;
    est.horizon = t_sub;
    double sum_tau = 0.0;
    for (double t : tau) {
        if (t <= t_sub) {
            ++est.n_exited;
            sum_tau += t;
        }
    }
    est.q_hat = est.n == 0 ? 0.0
                           : static_cast<double>(est.n_exited) /
                                 static_cast<double>(est.n);
    est.mean_exit_time_given_exit =
        est.n_exited > 0 ? sum_tau / static_cast<double>(est.n_exited) : 0.0;
    std::tie(est.ci_low, est.ci_high) = wilson95(est.n_exited, est.n);
    return est;
}

ExitEstimate exit_probability_mc(const ModelParams& params,
                                 const DiffusionSpec& diff, const State3& x0,
                                 double T, const DomainBox& d, std::size_t n,
                                 double h, std::uint64_t base_seed,
                                 double eps_reg) {
    const ExitSample s =
        exit_sample_mc(params, diff, x0, T, d, n, h, base_seed, eps_reg);
    return s.estimate_at(T, h, eps_reg);
}

BoundaryFn smoothed_indicator(int k, const DomainBox& d, bool outflow_only,
                              const ModelParams* params) {
    if (k < 1) throw ConfigError("smoothed_indicator needs k >= 1");
    d.validate();
    if (outflow_only && params == nullptr)
        throw ConfigError("outflow-restricted psi_k needs model parameters");
    const double collar = 1.0 / static_cast<double>(k);
    const ModelParams p = params ? *params : ModelParams{};
    return [d, collar, outflow_only, p](const State3& x) -> double {
        double ramp;
        if (!d.strictly_inside(x)) {
            ramp = 1.0;
        } else {
            const double dist = d.boundary_distance(x);
            if (dist > collar) return 0.0;
            ramp = 1.0 - dist / collar;
        }
        if (!outflow_only) return ramp;
        // dominant face: largest violation outside, nearest face inside
        const double lo[3] = {d.lower.x1, d.lower.x2, d.lower.x3};
        const double hi[3] = {d.upper.x1, d.upper.x2, d.upper.x3};
        const double xv[3] = {x.x1, x.x2, x.x3};
        int axis = 0, side = -1;
        double best = -kInf;
        for (int a = 0; a < 3; ++a) {
            const double low_score = lo[a] - xv[a];   // >0 means beyond lower
            const double high_score = xv[a] - hi[a];  // >0 means beyond upper
            if (low_score > best) {
                best = low_score;
                axis = a;
                side = -1;
            }
            if (high_score > best) {
                best = high_score;
                axis = a;
                side = 1;
            }
        }
        const State3 f = vector_field(p, x);
        const double fv[3] = {f.x1, f.x2, f.x3};
        const double flux = fv[axis] * static_cast<double>(side);
        return flux > 0.0 ? ramp : 0.0;
    };
}

FunctionalEstimate boundary_functional_mc(const ModelParams& params,
                                          const DiffusionSpec& diff,
                                          const State3& x0, double T,
                                          const DomainBox& d, const BoundaryFn& psi,
                                          std::size_t n, double h,
                                          std::uint64_t base_seed,
                                          double eps_reg) {
    const ExitSample s =
        exit_sample_mc(params, diff, x0, T, d, n, h, base_seed, eps_reg);
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = psi(s.stopped[i]);
    double sum = 0.0;
    for (double v : vals) sum += v;
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n > 1 ? n - 1 : 1);
    return {mean, std::sqrt(var / static_cast<double>(n)), n};
}

RegTable regularization_convergence(const ModelParams& params,
                                    const DiffusionSpec& diff, const State3& x0,
                                    double T, const DomainBox& d, std::size_t n,
                                    double h, std::uint64_t base_seed,
                                    const std::vector<double>& eps_list,
                                    bool shared_v) {
    params.validate();
    d.validate();
    if (eps_list.empty() || eps_list.back() != 0.0)
        throw ConfigError("regularization study: eps_list must end at 0");
    for (std::size_t i = 1; i < eps_list.size(); ++i)
        if (!(eps_list[i] < eps_list[i - 1]))
            throw ConfigError("regularization study: eps_list must be decreasing");
    if (!d.strictly_inside(x0))
        throw DomainError("exit study: x0 must be strictly inside the domain");

    const TimeGrid grid = make_grid(T, h);
    const std::size_t m = eps_list.size() - 1;  // positive eps columns
    const double sqrt_h = std::sqrt(grid.h);

    std::vector<std::vector<std::uint8_t>> exited(m + 1,
                                                  std::vector<std::uint8_t>(n, 0));
    std::vector<std::vector<double>> sup(m, std::vector<double>(n, 0.0));

#pragma omp parallel for schedule(dynamic, 16)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const std::uint64_t seed = trajectory_seed(base_seed, i);
        rng::NormalStream w(rng::derive_stream_seed(seed, 0, rng::kStreamW));
        rng::NormalStream v(rng::derive_stream_seed(seed, 0, rng::kStreamV));

        State3 base = x0;
        bool base_exited = false;
        std::vector<State3> xs(m, x0);
        std::vector<std::uint8_t> col_exited(m, 0);
        std::vector<double> sups(m, 0.0);

        for (std::size_t k = 0; k < grid.n_steps; ++k) {
            const double t = grid.t(k);
            const double dw = w.next();
            const double dv1 = v.next();
            const double dv2 = shared_v ? dv1 : v.next();

            const State3 fb = vector_field(params, base);
            base = detail::em_update(base, fb, 0.0, diff.sigma(t, base), grid.h,
                                     sqrt_h, dw, 0.0, 0.0, dv1, dv2);
            if (!base_exited && !d.strictly_inside(base)) base_exited = true;

            for (std::size_t j = 0; j < m; ++j) {
                const double c = std::sqrt(eps_list[j]);
                const State3 fj = vector_field(params, xs[j]);
                xs[j] = detail::em_update(xs[j], fj, 0.0, diff.sigma(t, xs[j]),
                                          grid.h, sqrt_h, dw, c, c, dv1, dv2);
                if (!col_exited[j] && !d.strictly_inside(xs[j])) col_exited[j] = 1;
                sups[j] = std::max(sups[j], norm(xs[j] - base));
            }
        }
        exited[m][i] = base_exited ? 1 : 0;
        for (std::size_t j = 0; j < m; ++j) {
            exited[j][i] = col_exited[j];
            sup[j][i] = sups[j];
        }
    }

    const auto nd = static_cast<double>(n);
    auto make_row = [&](std::size_t col, double eps) {
        RegRow r;
        r.eps = eps;
        std::size_t hits = 0;
        for (auto e : exited[col]) hits += e;
        r.q_hat = static_cast<double>(hits) / nd;
        std::tie(r.ci_low, r.ci_high) = wilson95(hits, n);
        if (col < m) {
            double mean = 0.0;
            for (double s : sup[col]) mean += s;
            r.mean_sup_dist = mean / nd;
        }
        return r;
    };

    RegTable table;
    const RegRow zero_row = make_row(m, 0.0);
    const double se0 = std::sqrt(zero_row.q_hat * (1.0 - zero_row.q_hat) / nd);
    for (std::size_t j = 0; j < m; ++j) {
        RegRow r = make_row(j, eps_list[j]);
        const double se = std::sqrt(r.q_hat * (1.0 - r.q_hat) / nd);
        r.diff_from_zero = std::abs(r.q_hat - zero_row.q_hat);
        r.combined_se = std::sqrt(se * se + se0 * se0);
        r.within = r.diff_from_zero <= 2.0 * r.combined_se;
        table.rows.push_back(r);
    }
    RegRow z = zero_row;
    z.within = true;
    table.rows.push_back(z);
    table.final_within = m == 0 ? true : table.rows[m - 1].within;
    return table;
}

PairedExit exit_probability_mc_pair(const ModelParams& params,
                                    const DiffusionSpec& diff, const State3& x0,
                                    double T, const DomainBox& d, std::size_t n,
                                    double h_coarse, std::uint64_t base_seed,
                                    double eps_reg) {
    params.validate();
    d.validate();
    if (!d.strictly_inside(x0))
        throw DomainError("exit study: x0 must be strictly inside the domain");
    const TimeGrid coarse = make_grid(T, h_coarse);
    TimeGrid fine;
    fine.t0 = 0.0;
    fine.n_steps = 2 * coarse.n_steps;
    fine.h = coarse.h / 2.0;

    const bool reg = eps_reg > 0.0;
    const double c = reg ? std::sqrt(eps_reg) : 0.0;
    const double sqf = std::sqrt(fine.h);
    const double sqc = std::sqrt(coarse.h);

    std::vector<std::uint8_t> hit_f(n, 0), hit_c(n, 0);

#pragma omp parallel for schedule(dynamic, 16)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const std::uint64_t seed = trajectory_seed(base_seed, i);
        rng::NormalStream w(rng::derive_stream_seed(seed, 0, rng::kStreamW));
        rng::NormalStream v(rng::derive_stream_seed(seed, 0, rng::kStreamV));

        State3 xf = x0, xc = x0;
        bool ef = false, ec = false;
        for (std::size_t k = 0; k < coarse.n_steps; ++k) {
            double dw_sum = 0.0, dv_sum = 0.0;
            for (int half = 0; half < 2; ++half) {
                const double t = fine.t(2 * k + half);
                const double dw = w.next();
                double dv = 0.0;
                if (reg) dv = v.next();
                dw_sum += dw;
                dv_sum += dv;
                if (!ef) {
                    const State3 ff = vector_field(params, xf);
                    xf = detail::em_update(xf, ff, 0.0, diff.sigma(t, xf), fine.h,
                                           sqf, dw, c, c, dv, dv);
                    if (!d.strictly_inside(xf)) ef = true;
                }
            }
            if (!ec) {
                const double t = coarse.t(k);
                const State3 fc = vector_field(params, xc);
                // coarse increments are the summed fine N(0,1) draws, scaled
                // back to unit variance over the coarse step
                const double z_w = dw_sum / std::sqrt(2.0);
                const double z_v = dv_sum / std::sqrt(2.0);
                xc = detail::em_update(xc, fc, 0.0, diff.sigma(t, xc), coarse.h,
                                       sqc, z_w, c, c, z_v, z_v);
                if (!d.strictly_inside(xc)) ec = true;
            }
        }
        hit_f[i] = ef ? 1 : 0;
        hit_c[i] = ec ? 1 : 0;
    }

    auto summarize = [&](const std::vector<std::uint8_t>& hits, double h) {
        ExitEstimate est;
        est.n = n;
        est.h = h;
        est.eps_reg = eps_reg;
        est.horizon = T;
        for (auto x : hits) est.n_exited += x;
        est.q_hat = static_cast<double>(est.n_exited) / static_cast<double>(n);
        std::tie(est.ci_low, est.ci_high) = wilson95(est.n_exited, n);
        return est;
    };

    PairedExit out;
    out.fine = summarize(hit_f, fine.h);
    out.coarse = summarize(hit_c, coarse.h);
    out.diff = out.fine.q_hat - out.coarse.q_hat;

    // per-trajectory extrapolated indicator y_i = f_i + amp (f_i - c_i)
    const double amp = 1.0 / (std::sqrt(2.0) - 1.0);
    const auto nd = static_cast<double>(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        mean += hit_f[i] + amp * (static_cast<double>(hit_f[i]) - hit_c[i]);
    mean /= nd;
    double var = 0.0, var_d = 0.0;
    const double mean_d = out.diff;
    for (std::size_t i = 0; i < n; ++i) {
        const double di = static_cast<double>(hit_f[i]) - hit_c[i];
        const double yi = hit_f[i] + amp * di;
        var += (yi - mean) * (yi - mean);
        var_d += (di - mean_d) * (di - mean_d);
    }
    var /= (nd - 1.0);
    var_d /= (nd - 1.0);
    out.extrapolated = mean;
    out.extrapolated_se = std::sqrt(var / nd);
    out.diff_se = std::sqrt(var_d / nd);
    return out;
}

std::vector<OutflowFace> outflow_overlay(const ModelParams& params,
                                         const DomainBox& d) {
    d.validate();
    const State3 mid = 0.5 * (d.lower + d.upper);
    std::vector<OutflowFace> faces;
    const double lo[3] = {d.lower.x1, d.lower.x2, d.lower.x3};
    const double hi[3] = {d.upper.x1, d.upper.x2, d.upper.x3};
    for (int a = 0; a < 3; ++a) {
        for (int side : {-1, 1}) {
            State3 x = mid;
            double* coord = a == 0 ? &x.x1 : (a == 1 ? &x.x2 : &x.x3);
            *coord = side < 0 ? lo[a] : hi[a];
            const State3 f = vector_field(params, x);
            const double fv[3] = {f.x1, f.x2, f.x3};
            OutflowFace face;
            face.axis = a;
            face.side = side;
            face.flux = fv[a] * static_cast<double>(side);
            face.outflow = face.flux > 0.0;
            faces.push_back(face);
        }
    }
    return faces;
}

}  // namespace opidyn
