#pragma once

#include <functional>
#include <vector>

#include "opidyn/flow.hpp"
#include "opidyn/model.hpp"
#include "opidyn/sde.hpp"

namespace opidyn {

// Dynamics abstraction used by the linearization and the action solver, so
// closed-form test systems can ride through the same code paths as the
// opioid model.
struct ControlSystem {
    std::function<State3(double, const State3&)> field;
    std::function<Mat3(double, const State3&)> jac;
};

ControlSystem model_system(const ModelParams& params);

// Chain of integrators: dx1 = u + noise, dx2 = x1, dx3 = x2. Its Gramian
// has the closed form W = [[T, T^2/2, T^3/6], [., T^3/3, T^4/8], [., ., T^5/20]]
// (sigma_hat = 1), the canonical example of the t, t^3, t^5 variance ladder.
ControlSystem chain_integrator_system();

// sigma^2-weighted controllability Gramian of the linearization along the
// flow from x0:  W(T) = int_0^T Phi(T,s) B a(s, Theta(s)) B^T Phi(T,s)^T ds.
// Equals the covariance of the linearized process at time T, so
// exp(-action) (2pi)^{-3/2} det(W)^{-1/2} is the linearized Gaussian density.
struct Gramian {
    double T = 0.0;
    Mat3 w = Mat3::Zero();
    TransitionFamily transition;   // Phi(T, t_k) on the requested grid
    FlowPath flow;                 // linearization curve
    double min_eigenvalue = 0.0;

    // Eigenvalues sorted descending. For severely graded spectra the
    // smallest eigenvalue is recomputed as det / (lambda1 lambda2), which
    // stays accurate where the direct solver loses it to roundoff.
    Vec3 eigenvalues_graded() const;
};

Gramian linearize_and_gramian(const ModelParams& params, const DiffusionSpec& diff,
                              const State3& x0, double T, double h);

Gramian gramian_for(const ControlSystem& sys, const DiffusionSpec& diff,
                    const State3& x0, double T, double h);

// Minimum steering energy of the linearized system,
// (1/2) (flow_end - y0)^T W^{-1} (flow_end - y0).
// Throws SingularGramianError naming the null direction when W is not
// numerically positive definite.
double action_linear(const Gramian& g, const State3& flow_end, const State3& y0);

// Linearized Gaussian comparison density at y.
double gaussian_comparison_density(const Gramian& g, const State3& flow_end,
                                   const State3& y);

struct SolverConfig {
    int stages = 6;            // penalty continuation stages (w *= 10 each)
    double w0 = 100.0;         // initial endpoint penalty weight
    int max_iter = 500;        // L-BFGS iterations per stage
    double grad_tol = 1e-10;
    double endpoint_tol = 1e-3;
    int lbfgs_memory = 10;
    int steps_per_interval = 0;  // 0 = choose so the ODE step is ~ T/1024
    bool auto_refine = true;     // double N once if the final gap is too big
};

struct ActionResult {
    double value = 0.0;          // (1/2) sum u_k^2 dt  (penalty excluded)
    ControlSignal control;
    double endpoint_gap = 0.0;   // |x(T) - y0|
    State3 endpoint;
    int iterations = 0;
    bool converged = false;
};

// Single shooting over piecewise-constant scalar control with quadratic
// endpoint penalty continuation; gradients from the exact discrete adjoint
// of the RK4 stepping; L-BFGS inner iterations.
ActionResult minimize_action(const ModelParams& params, const State3& x0,
                             const State3& y0, double T, int n_intervals,
                             const SolverConfig& cfg = {});

ActionResult minimize_action_system(const ControlSystem& sys, const State3& x0,
                                    const State3& y0, double T, int n_intervals,
                                    const SolverConfig& cfg = {});

// Penalty objective J_w(u) = (1/2) sum u_k^2 dt + w |x(T) - y0|^2 exposed for
// gradient verification: value plus exact gradient via the discrete adjoint.
class PenaltyObjective {
public:
    PenaltyObjective(ControlSystem sys, State3 x0, State3 y0, double T,
                     int n_intervals, int steps_per_interval, double weight);

    double eval(const std::vector<double>& u, std::vector<double>* grad,
                State3* endpoint = nullptr) const;
    int n_intervals() const { return n_intervals_; }
    double dt() const { return dt_; }

private:
    ControlSystem sys_;
    State3 x0_, y0_;
    double T_;
    int n_intervals_;
    int steps_per_interval_;
    double h_;
    double dt_;
    double weight_;
};

// Sub-horizon Gramians W(t_k, T) and the machinery for the closed-form
// minimum-energy feedback of the linearized problem.
struct GramianFamily {
    TimeGrid grid;
    double T = 0.0;
    FlowPath flow;                    // linearization curve (grid nodes)
    TransitionFamily transition;      // Phi(T, t_k)
    std::vector<Mat3> suffix;         // suffix[k] = W(t_k, T)
    std::vector<double> sigma_sq;     // a(t_k, Theta(t_k))
    ControlSystem sys;
    DiffusionSpec diff;
    State3 target;                    // y0

    double horizon_floor = 0.0;       // below T - floor the feedback is defined
};

GramianFamily gramian_family(const ControlSystem& sys, const DiffusionSpec& diff,
                             const State3& x0, double T, double h,
                             const State3& y0, double horizon_floor_frac = 5e-3);

// u*(t, x) = -a(t) B^T Phi(T,t)^T W(t,T)^{-1} [Phi(T,t)(x - Theta(t)) - d],
// d = y0 - Theta(T). Throws near t = T where the sub-horizon Gramian
// degenerates (horizon floor).
double optimal_feedback_linear(const GramianFamily& fam, double t,
                               const State3& x);

struct ClosedLoopResult {
    double cost = 0.0;     // (1/2) int u^2 dt accumulated along the run
    State3 endpoint;
    FlowPath trajectory;
};

// Noiseless closed-loop run of the linearized dynamics under the feedback,
// stopped at the horizon floor.
ClosedLoopResult run_closed_loop(const GramianFamily& fam, const State3& x0);

}  // namespace opidyn
