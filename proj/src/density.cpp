#include "opidyn/density.hpp"

#include <algorithm>
#include <cmath>

#include "opidyn/errors.hpp"
#include "opidyn/flow.hpp"
#include "opidyn/rng.hpp"

namespace opidyn {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kVarianceGate = 1e-12;

struct Samples {
    std::vector<State3> x;  // usable terminal states
};

Samples usable_samples(const PathEnsemble& ens) {
    Samples s;
    s.x.reserve(ens.n);
    for (std::size_t i = 0; i < ens.n; ++i)
        if (!ens.failed[i]) s.x.push_back(ens.terminal[i]);
    if (s.x.size() < 2)
        throw EstimationError("ensemble has fewer than 2 usable trajectories");
    return s;
}

Vec3 sample_sd(const std::vector<State3>& xs) {
    const auto n = static_cast<double>(xs.size());
    Vec3 mean = Vec3::Zero();
    for (const State3& x : xs) mean += x.vec();
    mean /= n;
    Vec3 ss = Vec3::Zero();
    for (const State3& x : xs) {
        const Vec3 d = x.vec() - mean;
        ss += d.cwiseProduct(d);
    }
    return (ss / (n - 1.0)).cwiseSqrt();
}

}  // namespace

DensityEstimate estimate_density(const PathEnsemble& ens,
                                 const std::vector<State3>& probes,
                                 KdeAxes axes, std::optional<Vec3> bandwidth,
                                 int n_bootstrap) {
    if (probes.empty()) throw ConfigError("estimate_density: no probes");
    const Samples samples = usable_samples(ens);
    const auto n = samples.x.size();
    const auto nd = static_cast<double>(n);
    const Vec3 sd = sample_sd(samples.x);

    const int dim = axes == KdeAxes::Full3 ? 3 : 1;
    if (axes == KdeAxes::Full3) {
        const char* names[] = {"x1", "x2", "x3"};
        for (int j = 0; j < 3; ++j)
            if (sd[j] * sd[j] < kVarianceGate)
                throw EstimationError(
                    std::string("degenerate direction ") + names[j] +
                    ": no spread for a 3-D density estimate; use the x1 "
                    "marginal or eps_reg > 0");
    } else {
        if (sd[0] * sd[0] < kVarianceGate)
            throw EstimationError("degenerate direction x1: no spread");
    }

    Vec3 bw = Vec3::Ones();
    if (bandwidth) {
        bw = *bandwidth;
        for (int j = 0; j < dim; ++j)
            if (!(bw[j] > 0.0)) throw ConfigError("bandwidth must be positive");
    } else {
        // Silverman per coordinate: sd * (4/(d+2))^{1/(d+4)} * n^{-1/(d+4)}
        const double expo = 1.0 / (dim + 4.0);
        const double factor = std::pow(4.0 / (dim + 2.0), expo) * std::pow(nd, -expo);
        for (int j = 0; j < dim; ++j) bw[j] = sd[j] * factor;
    }

    // Normalization constant of the product kernel.
    double norm_c = 1.0;
    for (int j = 0; j < dim; ++j) norm_c *= std::sqrt(kTwoPi) * bw[j];
    norm_c = 1.0 / (norm_c * nd);

    const std::size_t np = probes.size();
    DensityEstimate est;
    est.axes = axes;
    est.probes = probes;
    est.bandwidth = bw;
    est.n = n;
    est.p_hat.assign(np, 0.0);
    est.se.assign(np, 0.0);
    est.ess.assign(np, 0.0);

    // Per-probe kernel contributions; kept for the joint bootstrap.
    std::vector<std::vector<double>> kv(np);

#pragma omp parallel for schedule(dynamic)
    for (long long jj = 0; jj < static_cast<long long>(np); ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        const Vec3 y = probes[j].vec();
        std::vector<double>& col = kv[j];
        col.resize(n);
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 d = samples.x[i].vec() - y;
            double e = 0.0;
            for (int a = 0; a < dim; ++a) {
                const double z = d[a] / bw[a];
                e += z * z;
            }
            const double k = std::exp(-0.5 * e);
            col[i] = k;
            sum += k;
            sum2 += k * k;
        }
        est.p_hat[j] = norm_c * nd * (sum / nd);
        est.ess[j] = sum2 > 0.0 ? sum * sum / sum2 : 0.0;
        if (n_bootstrap <= 0) {
            const double mean = sum / nd;
            const double var = std::max(0.0, sum2 / nd - mean * mean);
            est.se[j] = norm_c * nd * std::sqrt(var / nd);
        }
    }

    if (n_bootstrap > 0) {
        // Joint bootstrap: one index resample shared across probes.
        const std::uint64_t bseed =
            rng::derive_stream_seed(ens.base_seed, 0, rng::kStreamBootstrap);
        std::vector<std::vector<double>> boot(np,
                                              std::vector<double>(n_bootstrap));
#pragma omp parallel for schedule(dynamic)
        for (int b = 0; b < n_bootstrap; ++b) {
            rng::Xoshiro256pp gen(
                rng::derive_stream_seed(bseed, static_cast<std::uint64_t>(b), 0));
            std::vector<std::uint32_t> idx(n);
            for (std::size_t i = 0; i < n; ++i)
                idx[i] = static_cast<std::uint32_t>(gen.below(n));
            for (std::size_t j = 0; j < np; ++j) {
                const std::vector<double>& col = kv[j];
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += col[idx[i]];
                boot[j][b] = norm_c * s;
            }
        }
        for (std::size_t j = 0; j < np; ++j) {
            double m = 0.0;
            for (double v : boot[j]) m += v;
            m /= n_bootstrap;
            double var = 0.0;
            for (double v : boot[j]) var += (v - m) * (v - m);
            var /= std::max(1, n_bootstrap - 1);
            est.se[j] = std::sqrt(var);
        }
    }
    return est;
}

Vec3 ensemble_terminal_sd(const PathEnsemble& ens) {
    return sample_sd(usable_samples(ens).x);
}

void MollifierSpec::validate() const {
    if (!(eps_width > 0.0) || !std::isfinite(eps_width))
        throw ConfigError("mollifier eps_width must be positive");
    if (!center.finite()) throw ConfigError("mollifier center must be finite");
}

double mollifier_eval(const MollifierSpec& spec, const State3& y) {
    spec.validate();
    const double w2 = spec.eps_width * spec.eps_width;
    const State3 d = y - spec.center;
    const double q = (d.x1 * d.x1 + d.x2 * d.x2 + d.x3 * d.x3) / (2.0 * w2);
    return std::pow(kTwoPi * w2, -1.5) * std::exp(-q);
}

double envelope_quadratic_form(const GaussianEnvelope& env, const State3& y) {
    if (!(env.t > 0.0)) throw DomainError("envelope requires t > 0");
    const double t = env.t;
    const State3 d = env.center - y;
    if (env.dim == 1) {
        // one noisy coordinate: both readings collapse onto d1^2 scalings
        if (env.form == EnvelopeForm::Kolmogorov) return d.x1 * d.x1 / t;
        return t * t * d.x1 * d.x1;
    }
    if (env.form == EnvelopeForm::Kolmogorov) {
        const double t3 = t * t * t;
        return d.x1 * d.x1 / t + d.x2 * d.x2 / t3 + d.x3 * d.x3 / (t3 * t * t);
    }
    // literal: (theta - y)^T t Gamma(t) (theta - y)
    const double t2 = t * t;
    return t2 * d.x1 * d.x1 + t2 * t * d.x2 * d.x2 + t2 * t2 * d.x3 * d.x3;
}

std::pair<double, double> envelope_bounds(const GaussianEnvelope& env,
                                          const State3& y) {
    if (!(env.c > 1.0)) throw DomainError("envelope requires C > 1");
    if (!(env.t > 0.0)) throw DomainError("envelope requires t > 0");
    const double q = envelope_quadratic_form(env, y);
    double pref = std::pow(env.t, -env.prefactor_exponent);
    double scale = 1.0;
    if (env.normalized) {
        pref *= std::pow(kTwoPi, -0.5 * env.dim);
        scale = 0.5;
    }
    const double lower = pref / env.c * std::exp(-env.c * q * scale);
    const double upper = pref * env.c * std::exp(-q * scale / env.c);
    return {lower, upper};
}

std::pair<double, double> gaussian_envelope(double c, double t, const State3& x0,
                                            const State3& y,
                                            const ModelParams& params,
                                            EnvelopeForm form, double h_flow) {
    GaussianEnvelope env;
    env.c = c;
    env.t = t;
    env.center = integrate_flow(params, x0, t, h_flow).back();
    env.form = form;
    return envelope_bounds(env, y);
}

namespace {

// Feasibility of a candidate C is monotone: the lower curve falls and the
// upper curve rises with C, so bisection finds the smallest feasible value.
bool sandwich_feasible(const std::vector<SandwichProbe>& probes,
                       GaussianEnvelope env, double c, double n_se) {
    env.c = c;
    for (const SandwichProbe& pr : probes) {
        if (!pr.reliable) continue;
        // reuse the stored quadratic form
        double pref = std::pow(env.t, -env.prefactor_exponent);
        double scale = 1.0;
        if (env.normalized) {
            pref *= std::pow(kTwoPi, -0.5 * env.dim);
            scale = 0.5;
        }
        const double lower = pref / c * std::exp(-c * pr.q * scale);
        const double upper = pref * c * std::exp(-pr.q * scale / c);
        const double band = n_se * pr.se;
        if (lower > pr.p_hat + band) return false;
        if (upper < pr.p_hat - band) return false;
    }
    return true;
}

}  // namespace

SandwichReport fit_sandwich_constant(const DensityEstimate& est, double t,
                                     const State3& x0, const ModelParams& params,
                                     const SandwichOptions& opts) {
    if (!(t > 0.0)) throw DomainError("fit_sandwich_constant requires t > 0");
    GaussianEnvelope env;
    env.t = t;
    env.center = integrate_flow(params, x0, t, opts.h_flow).back();
    env.form = opts.form;
    env.prefactor_exponent = opts.prefactor_exponent;
    env.normalized = opts.normalized;
    env.dim = opts.dim;

    SandwichReport rep;
    rep.c_max = opts.c_max;
    rep.center = env.center;
    rep.t = t;
    for (std::size_t j = 0; j < est.probes.size(); ++j) {
        SandwichProbe pr;
        pr.y = est.probes[j];
        pr.q = envelope_quadratic_form(env, pr.y);
        pr.p_hat = est.p_hat[j];
        pr.se = est.se[j];
        pr.reliable = pr.p_hat > opts.n_se * pr.se && pr.p_hat > 0.0;
        rep.probes.push_back(pr);
    }
    rep.n_reliable = static_cast<std::size_t>(
        std::count_if(rep.probes.begin(), rep.probes.end(),
                      [](const SandwichProbe& p) { return p.reliable; }));
    if (rep.n_reliable < static_cast<std::size_t>(opts.min_reliable))
        throw EstimationError(
            "fit_sandwich_constant: only " + std::to_string(rep.n_reliable) +
            " probes pass the noise floor (need " +
            std::to_string(opts.min_reliable) + ")");

    const double c_lo = 1.0 + 1e-6;
    if (!sandwich_feasible(rep.probes, env, opts.c_max, opts.n_se)) {
        rep.feasible = false;  // sandwich violation: falsification signal
        rep.c = std::nan("");
        // record which probes fail even at c_max
        GaussianEnvelope at_max = env;
        at_max.c = opts.c_max;
        for (SandwichProbe& pr : rep.probes) {
            if (!pr.reliable) continue;
            const auto [lo, up] = envelope_bounds(at_max, pr.y);
            pr.ok = lo <= pr.p_hat + opts.n_se * pr.se &&
                    up >= pr.p_hat - opts.n_se * pr.se;
        }
        return rep;
    }

    double lo = c_lo, hi = opts.c_max;
    if (sandwich_feasible(rep.probes, env, c_lo, opts.n_se)) {
        hi = c_lo;
    } else {
        for (int it = 0; it < 200 && hi / lo > 1.0 + 1e-9; ++it) {
            const double mid = std::sqrt(lo * hi);  // bisect in log C
            if (sandwich_feasible(rep.probes, env, mid, opts.n_se))
                hi = mid;
            else
                lo = mid;
        }
    }
    rep.feasible = true;
    rep.c = hi;
    env.c = hi;
    for (SandwichProbe& pr : rep.probes) {
        if (!pr.reliable) continue;
        const auto [lower, upper] = envelope_bounds(env, pr.y);
        pr.margin_lower = std::log(pr.p_hat + opts.n_se * pr.se) - std::log(lower);
        pr.margin_upper =
            std::log(upper) - std::log(std::max(pr.p_hat - opts.n_se * pr.se, 1e-300));
        pr.ok = pr.margin_lower >= -1e-12 && pr.margin_upper >= -1e-12;
    }
    return rep;
}

ValueFunctionResult value_function_on_ensemble(const PathEnsemble& ens,
                                               const MollifierSpec& spec) {
    spec.validate();
    const Samples samples = usable_samples(ens);
    const auto n = samples.x.size();

    std::vector<double> vals(n);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
        vals[i] = mollifier_eval(spec, samples.x[static_cast<std::size_t>(i)]);

    // serial Kahan reduction keeps the result thread-count independent
    double sum = 0.0, comp = 0.0;
    for (double v : vals) {
        const double y = v - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    const auto nd = static_cast<double>(n);
    const double mean = sum / nd;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= (nd - 1.0);
    const double se = std::sqrt(var / nd);

    if (!(mean > 0.0) || mean < 1e-300)
        throw EstimationError(
            "unreachable target at this noise level: mollified terminal mean "
            "underflows");

    ValueFunctionResult r;
    r.upsilon = mean;
    r.se_upsilon = se;
    r.j = -std::log(mean);
    // delta method: sd(J) ~ se / upsilon
    const double half = 1.959963984540054 * se / mean;
    r.j_ci_low = r.j - half;
    r.j_ci_high = r.j + half;
    r.horizon = ens.config.T;
    r.n = n;
    return r;
}

ValueFunctionResult value_function_mc(const ModelParams& params,
                                      const DiffusionSpec& diff, const State3& x0,
                                      double T, const MollifierSpec& spec,
                                      std::size_t n, std::uint64_t seed,
                                      double eps_reg) {
    spec.validate();
    const double horizon = T - spec.eps_width;
    if (!(horizon > 0.0))
        throw ConfigError("value_function_mc: eps_width must stay below T");
    SimConfig cfg;
    cfg.params = params;
    cfg.diff = diff;
    cfg.x0 = x0;
    cfg.T = horizon;
    cfg.h = std::min(1e-3, horizon);
    cfg.eps_reg = eps_reg;
    const PathEnsemble ens = simulate_ensemble(cfg, n, seed);
    ValueFunctionResult r = value_function_on_ensemble(ens, spec);
    r.horizon = horizon;
    return r;
}

std::vector<LinkageRow> value_density_linkage(
    const ModelParams& params, const DiffusionSpec& diff, const State3& x0,
    double T, const State3& y0, const std::vector<double>& eps_widths,
    double eps_reg, std::size_t n, std::uint64_t base_seed, double n_se) {
    if (!(eps_reg > 0.0))
        throw ConfigError(
            "value_density_linkage needs eps_reg > 0 (3-D density estimate)");
    std::vector<LinkageRow> rows;
    std::uint64_t salt = 0;
    for (double w : eps_widths) {
        MollifierSpec spec{w, y0};
        const double horizon = T - w;
        if (!(horizon > 0.0))
            throw ConfigError("linkage: eps_width must stay below T");

        // J route and density route on independent ensembles.
        const ValueFunctionResult vf = value_function_mc(
            params, diff, x0, T, spec, n,
            rng::derive_stream_seed(base_seed, ++salt, 11), eps_reg);

        SimConfig cfg;
        cfg.params = params;
        cfg.diff = diff;
        cfg.x0 = x0;
        cfg.T = horizon;
        cfg.h = std::min(1e-3, horizon);
        cfg.eps_reg = eps_reg;
        const PathEnsemble ens = simulate_ensemble(
            cfg, n, rng::derive_stream_seed(base_seed, ++salt, 12));
        const DensityEstimate est =
            estimate_density(ens, {y0}, KdeAxes::Full3, {}, 200);

        LinkageRow row;
        row.eps_width = w;
        row.horizon = horizon;
        row.j = vf.j;
        row.upsilon = vf.upsilon;
        row.se_upsilon = vf.se_upsilon;
        row.p_hat = est.p_hat[0];
        row.se_p = est.se[0];
        row.gap = std::abs(row.upsilon - row.p_hat);
        row.band = n_se * std::sqrt(vf.se_upsilon * vf.se_upsilon +
                                    est.se[0] * est.se[0]);
        row.within = row.gap <= row.band;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace opidyn
