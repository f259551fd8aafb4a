#include "opidyn/control.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "opidyn/errors.hpp"

namespace opidyn {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

const char* axis_name(int axis) {
    switch (axis) {
        case 0: return "x1";
        case 1: return "x2";
        default: return "x3";
    }
}

struct LinearizationData {
    FlowPath fine_flow;             // step h/4
    TransitionFamily trans_half;    // Phi(T, .) on the h/2 grid
    std::vector<Mat3> integrand;    // a(s) v v^T at h/2 nodes
};

LinearizationData build_linearization(const ControlSystem& sys,
                                      const DiffusionSpec& diff, const State3& x0,
                                      double T, double h) {
    LinearizationData d;
    d.fine_flow = integrate_flow_field(sys.field, x0, T, 0.25 * h);
    const TimeGrid coarse = d.fine_flow.grid;  // step h/4; reconstruct h grid
    TimeGrid half;
    half.t0 = 0.0;
    half.n_steps = coarse.n_steps / 2;
    half.h = T / static_cast<double>(half.n_steps);

    const double hf = d.fine_flow.grid.h;
    auto state_at = [&](double s) -> const State3& {
        auto k = static_cast<std::size_t>(std::llround(s / hf));
        if (k >= d.fine_flow.states.size()) k = d.fine_flow.states.size() - 1;
        return d.fine_flow.states[k];
    };
    auto jac_at = [&](double s) { return sys.jac(s, state_at(s)); };

    d.trans_half = transition_matrices_jac(jac_at, half);

    d.integrand.resize(half.n_nodes());
    for (std::size_t k = 0; k < half.n_nodes(); ++k) {
        const double s = half.t(k);
        const Vec3 v = d.trans_half.to_horizon[k].col(0);  // Phi(T,s) B
        d.integrand[k] = diff.a(s, state_at(s)) * (v * v.transpose());
    }
    return d;
}

// Composite Simpson over the h/2 grid (even interval count by construction).
Mat3 simpson_full(const std::vector<Mat3>& g, double h_half) {
    Mat3 acc = Mat3::Zero();
    const std::size_t n = g.size() - 1;
    for (std::size_t j = 0; j + 2 <= n; j += 2)
        acc += g[j] + 4.0 * g[j + 1] + g[j + 2];
    return (h_half / 3.0) * acc;
}

}  // namespace

ControlSystem model_system(const ModelParams& params) {
    ControlSystem sys;
    sys.field = [params](double, const State3& x) { return vector_field(params, x); };
    sys.jac = [params](double, const State3& x) { return jacobian(params, x); };
    return sys;
}

ControlSystem chain_integrator_system() {
    ControlSystem sys;
    sys.field = [](double, const State3& x) { return State3{0.0, x.x1, x.x2}; };
    sys.jac = [](double, const State3&) {
        Mat3 j = Mat3::Zero();
        j(1, 0) = 1.0;
        j(2, 1) = 1.0;
        return j;
    };
    return sys;
}

Vec3 Gramian::eigenvalues_graded() const {
    Eigen::SelfAdjointEigenSolver<Mat3> es(w);
    Vec3 lam = es.eigenvalues().reverse();  // descending
    // Graded spectra: the solver's smallest eigenvalue drowns in roundoff of
    // the largest; det/(lam1*lam2) keeps relative accuracy there.
    if (lam[0] > 0.0 && lam[2] < 1e-10 * lam[0] && lam[1] > 0.0) {
        const double det = w.determinant();
        if (det > 0.0) lam[2] = det / (lam[0] * lam[1]);
    }
    return lam;
}

Gramian gramian_for(const ControlSystem& sys, const DiffusionSpec& diff,
                    const State3& x0, double T, double h) {
    const TimeGrid grid = make_grid(T, h);
    const LinearizationData lin =
        build_linearization(sys, diff, x0, T, grid.h);

    Gramian g;
    g.T = T;
    g.w = simpson_full(lin.integrand, 0.5 * grid.h);
    // enforce exact symmetry (the assembly is symmetric up to roundoff)
    g.w = 0.5 * (g.w + g.w.transpose()).eval();

    g.flow.grid = grid;
    g.flow.states.resize(grid.n_nodes());
    g.transition.grid = grid;
    g.transition.to_horizon.resize(grid.n_nodes());
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
        g.flow.states[k] = lin.fine_flow.states[4 * k];
        g.transition.to_horizon[k] = lin.trans_half.to_horizon[2 * k];
    }
    g.min_eigenvalue = g.eigenvalues_graded()[2];
    return g;
}

Gramian linearize_and_gramian(const ModelParams& params, const DiffusionSpec& diff,
                              const State3& x0, double T, double h) {
    params.validate();
    return gramian_for(model_system(params), diff, x0, T, h);
}

namespace {

// Eigen-solve of W z = m with a positive-definiteness gate.
Vec3 solve_spd(const Gramian& g, const Vec3& m, const char* who) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(g.w);
    const Vec3 lam = es.eigenvalues();  // ascending
    if (!(lam[0] > 0.0) || lam[0] < 1e-15 * lam[2]) {
        const Vec3 null_dir = es.eigenvectors().col(0);
        int axis = 0;
        null_dir.cwiseAbs().maxCoeff(&axis);
        throw SingularGramianError(
            std::string(who) + ": uncontrollable linearization, null direction "
            "along " + axis_name(axis),
            axis);
    }
    return es.eigenvectors() *
           (es.eigenvectors().transpose() * m).cwiseQuotient(lam).matrix();
}

}  // namespace

double action_linear(const Gramian& g, const State3& flow_end, const State3& y0) {
    const Vec3 m = flow_end.vec() - y0.vec();
    return 0.5 * m.dot(solve_spd(g, m, "action_linear"));
}

double gaussian_comparison_density(const Gramian& g, const State3& flow_end,
                                   const State3& y) {
    const double a = action_linear(g, flow_end, y);
    const double det = g.w.determinant();
    return std::exp(-a) / std::sqrt(kTwoPi * kTwoPi * kTwoPi * det);
}

PenaltyObjective::PenaltyObjective(ControlSystem sys, State3 x0, State3 y0,
                                   double T, int n_intervals,
                                   int steps_per_interval, double weight)
    : sys_(std::move(sys)),
      x0_(x0),
      y0_(y0),
      T_(T),
      n_intervals_(n_intervals),
      steps_per_interval_(steps_per_interval),
      weight_(weight) {
    if (n_intervals < 1 || steps_per_interval < 1)
        throw ConfigError("PenaltyObjective: bad discretization");
    h_ = T / static_cast<double>(n_intervals * steps_per_interval);
    dt_ = T / static_cast<double>(n_intervals);
}

double PenaltyObjective::eval(const std::vector<double>& u,
                              std::vector<double>* grad,
                              State3* endpoint) const {
    if (u.size() != static_cast<std::size_t>(n_intervals_))
        throw ConfigError("PenaltyObjective: control size mismatch");
    const std::size_t n_steps =
        static_cast<std::size_t>(n_intervals_) * steps_per_interval_;
    const double h = h_;

    struct StepTape {
        State3 x;
        State3 k1, k2, k3;
    };
    std::vector<StepTape> tape(n_steps);

    // forward sweep: RK4 with the control held constant within each step
    State3 x = x0_;
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = h * static_cast<double>(k);
        const double uk = u[k / steps_per_interval_];
        auto f = [&](double tt, const State3& xx) {
            State3 v = sys_.field(tt, xx);
            v.x1 += uk;
            return v;
        };
        StepTape& tp = tape[k];
        tp.x = x;
        tp.k1 = f(t, x);
        tp.k2 = f(t + 0.5 * h, x + 0.5 * h * tp.k1);
        tp.k3 = f(t + 0.5 * h, x + 0.5 * h * tp.k2);
        const State3 k4 = f(t + h, x + h * tp.k3);
        x = x + (h / 6.0) * (tp.k1 + 2.0 * tp.k2 + 2.0 * tp.k3 + k4);
        if (!x.finite() || norm(x) > 1e8)
            throw IntegrationError("action shooting blew up", t + h);
    }
    if (endpoint) *endpoint = x;

    const State3 gap = x - y0_;
    double value = weight_ * (gap.x1 * gap.x1 + gap.x2 * gap.x2 + gap.x3 * gap.x3);
    double energy = 0.0;
    for (double uk : u) energy += uk * uk;
    value += 0.5 * energy * dt_;

    if (!grad) return value;
    grad->assign(n_intervals_, 0.0);
    for (int j = 0; j < n_intervals_; ++j) (*grad)[j] = u[j] * dt_;

    // reverse sweep: exact discrete adjoint of the RK4 recursion
    Vec3 xbar = 2.0 * weight_ * gap.vec();
    for (std::size_t k = n_steps; k-- > 0;) {
        const StepTape& tp = tape[k];
        const double t = h * static_cast<double>(k);
        const std::size_t j = k / steps_per_interval_;

        Vec3 k1b = (h / 6.0) * xbar;
        Vec3 k2b = (h / 3.0) * xbar;
        Vec3 k3b = (h / 3.0) * xbar;
        const Vec3 k4b = (h / 6.0) * xbar;
        double ubar = 0.0;

        const State3 a4 = tp.x + h * tp.k3;
        const Vec3 a4b = sys_.jac(t + h, a4).transpose() * k4b;
        xbar += a4b;
        k3b += h * a4b;
        ubar += k4b[0];

        const State3 a3 = tp.x + 0.5 * h * tp.k2;
        const Vec3 a3b = sys_.jac(t + 0.5 * h, a3).transpose() * k3b;
        xbar += a3b;
        k2b += 0.5 * h * a3b;
        ubar += k3b[0];

        const State3 a2 = tp.x + 0.5 * h * tp.k1;
        const Vec3 a2b = sys_.jac(t + 0.5 * h, a2).transpose() * k2b;
        xbar += a2b;
        k1b += 0.5 * h * a2b;
        ubar += k2b[0];

        xbar += sys_.jac(t, tp.x).transpose() * k1b;
        ubar += k1b[0];

        (*grad)[j] += ubar;
    }
    return value;
}

namespace {

// Compact L-BFGS with Armijo backtracking. Trajectory blow-ups during the
// line search count as +inf and trigger further backtracking.
double safe_eval(const PenaltyObjective& obj, const std::vector<double>& u) {
    try {
        return obj.eval(u, nullptr);
    } catch (const IntegrationError&) {
        return std::numeric_limits<double>::infinity();
    }
}

int lbfgs_minimize(const PenaltyObjective& obj, std::vector<double>& u,
                   int max_iter, double grad_tol, int memory) {
    const std::size_t n = u.size();
    std::vector<double> g(n), g_new(n), p(n), u_new(n);
    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;

    double f = obj.eval(u, &g);
    double step_init = 1.0;
    int iters = 0;
    for (; iters < max_iter; ++iters) {
        double gmax = 0.0;
        for (double gi : g) gmax = std::max(gmax, std::abs(gi));
        if (gmax <= grad_tol * (1.0 + std::abs(f))) break;

        // two-loop recursion
        p.assign(g.begin(), g.end());
        std::vector<double> alpha(s_hist.size());
        for (std::size_t i = s_hist.size(); i-- > 0;) {
            double sp = 0.0;
            for (std::size_t k = 0; k < n; ++k) sp += s_hist[i][k] * p[k];
            alpha[i] = rho_hist[i] * sp;
            for (std::size_t k = 0; k < n; ++k) p[k] -= alpha[i] * y_hist[i][k];
        }
        if (!s_hist.empty()) {
            double yy = 0.0, sy = 0.0;
            const auto& s = s_hist.back();
            const auto& y = y_hist.back();
            for (std::size_t k = 0; k < n; ++k) {
                yy += y[k] * y[k];
                sy += s[k] * y[k];
            }
            if (yy > 0.0) {
                const double scale = sy / yy;
                for (double& pk : p) pk *= scale;
            }
        }
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            double yp = 0.0;
            for (std::size_t k = 0; k < n; ++k) yp += y_hist[i][k] * p[k];
            const double beta = rho_hist[i] * yp;
            for (std::size_t k = 0; k < n; ++k)
                p[k] += (alpha[i] - beta) * s_hist[i][k];
        }
        for (double& pk : p) pk = -pk;

        double gp = 0.0;
        for (std::size_t k = 0; k < n; ++k) gp += g[k] * p[k];
        if (gp >= 0.0 || s_hist.empty()) {
            // steepest descent, normalized so the unit step stays sane
            const double scale = 1.0 / std::max(1.0, gmax);
            for (std::size_t k = 0; k < n; ++k) p[k] = -g[k] * scale;
            gp = 0.0;
            for (std::size_t k = 0; k < n; ++k) gp += g[k] * p[k];
        }

        double step = step_init;
        double f_new = f;
        bool ok = false;
        for (int bt = 0; bt < 60; ++bt) {
            for (std::size_t k = 0; k < n; ++k) u_new[k] = u[k] + step * p[k];
            f_new = safe_eval(obj, u_new);
            if (f_new <= f + 1e-4 * step * gp) {
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if (!ok) break;  // line search stalled at numerical floor
        step_init = std::min(1.0, 2.0 * step);

        obj.eval(u_new, &g_new);
        std::vector<double> s(n), y(n);
        double sy = 0.0, ss = 0.0, yy2 = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            s[k] = u_new[k] - u[k];
            y[k] = g_new[k] - g[k];
            sy += s[k] * y[k];
            ss += s[k] * s[k];
            yy2 += y[k] * y[k];
        }
        if (sy > 1e-12 * std::sqrt(ss * yy2)) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        u.swap(u_new);
        g.swap(g_new);
        f = f_new;
    }
    return iters;
}

ActionResult solve_action(const ControlSystem& sys, const State3& x0,
                          const State3& y0, double T, int n_intervals,
                          const SolverConfig& cfg) {
    int spi = cfg.steps_per_interval;
    if (spi <= 0)
        spi = std::max(1, static_cast<int>(std::llround(
                              std::ceil(1024.0 / n_intervals))));

    std::vector<double> u(n_intervals, 0.0);
    int total_iters = 0;
    double weight = cfg.w0;
    State3 endpoint;
    for (int stage = 0; stage < cfg.stages; ++stage) {
        PenaltyObjective obj(sys, x0, y0, T, n_intervals, spi, weight);
        total_iters += lbfgs_minimize(obj, u, cfg.max_iter, cfg.grad_tol,
                                      cfg.lbfgs_memory);
        obj.eval(u, nullptr, &endpoint);
        weight *= 10.0;
    }

    ActionResult res;
    res.control.T = T;
    res.control.values = u;
    res.endpoint = endpoint;
    res.endpoint_gap = norm(endpoint - y0);
    res.iterations = total_iters;
    res.converged = res.endpoint_gap <= cfg.endpoint_tol;
    res.value = res.control.energy();
    return res;
}

}  // namespace

ActionResult minimize_action_system(const ControlSystem& sys, const State3& x0,
                                    const State3& y0, double T, int n_intervals,
                                    const SolverConfig& cfg) {
    if (n_intervals < 4) throw ConfigError("minimize_action needs N >= 4");
    if (!(T > 0.0)) throw ConfigError("minimize_action needs T > 0");
    ActionResult res = solve_action(sys, x0, y0, T, n_intervals, cfg);
    if (!res.converged && cfg.auto_refine) {
        ActionResult refined = solve_action(sys, x0, y0, T, 2 * n_intervals, cfg);
        refined.iterations += res.iterations;
        if (refined.endpoint_gap < res.endpoint_gap) return refined;
    }
    return res;
}

ActionResult minimize_action(const ModelParams& params, const State3& x0,
                             const State3& y0, double T, int n_intervals,
                             const SolverConfig& cfg) {
    params.validate();
    return minimize_action_system(model_system(params), x0, y0, T, n_intervals,
                                  cfg);
}

GramianFamily gramian_family(const ControlSystem& sys, const DiffusionSpec& diff,
                             const State3& x0, double T, double h,
                             const State3& y0, double horizon_floor_frac) {
    const TimeGrid grid = make_grid(T, h);
    const LinearizationData lin = build_linearization(sys, diff, x0, T, grid.h);

    GramianFamily fam;
    fam.grid = grid;
    fam.T = T;
    fam.sys = sys;
    fam.diff = diff;
    fam.target = y0;
    fam.horizon_floor = horizon_floor_frac * T;

    fam.flow.grid = grid;
    fam.flow.states.resize(grid.n_nodes());
    fam.transition.grid = grid;
    fam.transition.to_horizon.resize(grid.n_nodes());
    fam.sigma_sq.resize(grid.n_nodes());
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
        fam.flow.states[k] = lin.fine_flow.states[4 * k];
        fam.transition.to_horizon[k] = lin.trans_half.to_horizon[2 * k];
        fam.sigma_sq[k] = diff.a(grid.t(k), fam.flow.states[k]);
    }

    // suffix Gramians by per-interval Simpson on the h/2 integrand samples
    fam.suffix.assign(grid.n_nodes(), Mat3::Zero());
    Mat3 acc = Mat3::Zero();
    const double hh = grid.h / 6.0;
    for (std::size_t k = grid.n_steps; k-- > 0;) {
        acc += hh * (lin.integrand[2 * k] + 4.0 * lin.integrand[2 * k + 1] +
                     lin.integrand[2 * k + 2]);
        fam.suffix[k] = 0.5 * (acc + acc.transpose());
    }
    return fam;
}

double optimal_feedback_linear(const GramianFamily& fam, double t,
                               const State3& x) {
    if (t > fam.T - fam.horizon_floor)
        throw DomainError(
            "optimal_feedback_linear: inside the horizon floor, sub-horizon "
            "Gramian degenerate");
    const auto k = static_cast<std::size_t>(std::llround(t / fam.grid.h));
    if (k >= fam.grid.n_nodes() ||
        std::abs(fam.grid.t(k) - t) > 1e-9 * std::max(1.0, fam.T))
        throw ConfigError("optimal_feedback_linear: t must be a grid node");

    const Mat3& w_sub = fam.suffix[k];
    Eigen::SelfAdjointEigenSolver<Mat3> es(w_sub);
    const Vec3 lam = es.eigenvalues();
    if (!(lam[0] > 0.0) || lam[0] < 1e-14 * lam[2]) {
        const Vec3 null_dir = es.eigenvectors().col(0);
        int axis = 0;
        null_dir.cwiseAbs().maxCoeff(&axis);
        throw SingularGramianError(
            "optimal_feedback_linear: sub-horizon Gramian singular along " +
                std::string(axis_name(axis)),
            axis);
    }

    const Mat3& phi = fam.transition.to_horizon[k];
    const Vec3 d = fam.target.vec() - fam.flow.states.back().vec();
    const Vec3 z = x.vec() - fam.flow.states[k].vec();
    const Vec3 resid = phi * z - d;
    const Vec3 sol = es.eigenvectors() *
                     (es.eigenvectors().transpose() * resid).cwiseQuotient(lam)
                         .matrix();
    return -fam.sigma_sq[k] * (phi.transpose() * sol)[0];
}

ClosedLoopResult run_closed_loop(const GramianFamily& fam, const State3& x0) {
    const TimeGrid& grid = fam.grid;
    const std::size_t k_floor = [&] {
        const double t_max = fam.T - fam.horizon_floor;
        auto k = static_cast<std::size_t>(std::floor(t_max / grid.h + 1e-12));
        return std::min(k, grid.n_steps - 1);
    }();

    ClosedLoopResult out;
    out.trajectory.grid = grid;
    out.trajectory.states.reserve(grid.n_nodes());
    out.trajectory.states.push_back(x0);

    State3 x = x0;
    double u_hold = 0.0;
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        const double t = grid.t(k);
        if (k <= k_floor) u_hold = optimal_feedback_linear(fam, t, x);
        const double u = u_hold;  // held constant through the floor window
        auto f = [&](double tt, const State3& xx) {
            State3 v = fam.sys.field(tt, xx);
            v.x1 += u;
            return v;
        };
        const State3 k1 = f(t, x);
        const State3 k2 = f(t + 0.5 * grid.h, x + 0.5 * grid.h * k1);
        const State3 k3 = f(t + 0.5 * grid.h, x + 0.5 * grid.h * k2);
        const State3 k4 = f(t + grid.h, x + grid.h * k3);
        x = x + (grid.h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.trajectory.states.push_back(x);
        out.cost += 0.5 * u * u * grid.h;
    }
    out.endpoint = x;
    return out;
}

}  // namespace opidyn
