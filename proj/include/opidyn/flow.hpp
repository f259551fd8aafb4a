#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "opidyn/model.hpp"

namespace opidyn {

// Uniform time grid over [t0, t0 + n_steps * h].
struct TimeGrid {
    double t0 = 0.0;
    double h = 0.0;
    std::size_t n_steps = 0;

    double t(std::size_t k) const { return t0 + static_cast<double>(k) * h; }
    double horizon() const { return t(n_steps); }
    std::size_t n_nodes() const { return n_steps + 1; }
};

// Builds a grid with step as close to h_requested as possible while landing
// exactly on T. Throws ConfigError unless 0 < h <= T.
TimeGrid make_grid(double T, double h_requested);

using FieldFn = std::function<State3(double, const State3&)>;
using JacobianFn = std::function<Mat3(double)>;  // Jacobian along a known curve

// Deterministic solution curve on a uniform grid; states[0] is the initial
// condition.
struct FlowPath {
    TimeGrid grid;
    std::vector<State3> states;

    const State3& front() const { return states.front(); }
    const State3& back() const { return states.back(); }
    // Hermite-cubic state between nodes, O(h^4); needs the generating field.
    State3 at(double t, const FieldFn& field) const;
};

// Classical fixed-step RK4 on the reduced model field.
FlowPath integrate_flow(const ModelParams& params, const State3& x0, double T,
                        double h);

// Same integrator over an arbitrary field (test hooks, rescaled dynamics,
// controlled dynamics).
FlowPath integrate_flow_field(const FieldFn& field, const State3& x0, double T,
                              double h);

// State-transition matrices Phi(T, s) of the linearization along a flow:
//   d/ds Phi(T,s) = -Phi(T,s) * J(s),  Phi(T,T) = I,
// integrated backward with the same fixed-step order-4 scheme.
struct TransitionFamily {
    TimeGrid grid;
    std::vector<Mat3> to_horizon;  // to_horizon[k] = Phi(T, t_k)

    const Mat3& at_node(std::size_t k) const { return to_horizon[k]; }
};

// Model version: linearizes along the given flow path. The Jacobian is
// sampled at step midpoints from a half-step re-integration of the flow.
TransitionFamily transition_matrices(const ModelParams& params,
                                     const FlowPath& path);

// Generic version over a Jacobian-of-time provider (must be valid at nodes
// and midpoints of the grid).
TransitionFamily transition_matrices_jac(const JacobianFn& jac_at,
                                         const TimeGrid& grid);

}  // namespace opidyn
