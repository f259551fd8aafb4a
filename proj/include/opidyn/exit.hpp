#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "opidyn/model.hpp"
#include "opidyn/sde.hpp"

namespace opidyn {

// Axis-aligned open box D. Box faces make crossing detection exact per face
// and keep the boundary-collar distance trivial to evaluate.
struct DomainBox {
    State3 lower;
    State3 upper;

    void validate() const;
    bool strictly_inside(const State3& x) const;
    // Distance from an interior point to the nearest face (0 on the boundary;
    // negative values are clamped to 0 for exterior points).
    double boundary_distance(const State3& x) const;
};

struct ExitEvent {
    double tau = 0.0;
    State3 state;  // linearly interpolated crossing state
};

// First grid node leaving the closed box, with the crossing time linearly
// interpolated between the last inside node and the first outside node.
// Empty when the path stays inside through the horizon (theta = tau ^ T).
// Throws DomainError when the path does not start strictly inside.
std::optional<ExitEvent> exit_time(const SdePath& path, const DomainBox& d);

struct ExitEstimate {
    double q_hat = 0.0;
    double ci_low = 0.0;   // Wilson 95%
    double ci_high = 0.0;
    std::size_t n = 0;
    std::size_t n_exited = 0;
    double mean_exit_time_given_exit = 0.0;
    double eps_reg = 0.0;
    double h = 0.0;
    double horizon = 0.0;

    double se() const;  // binomial SE of q_hat
};

ExitEstimate exit_probability_mc(const ModelParams& params,
                                 const DiffusionSpec& diff, const State3& x0,
                                 double T, const DomainBox& d, std::size_t n,
                                 double h, std::uint64_t base_seed,
                                 double eps_reg = 0.0);

// Per-trajectory exit data on shared seeds; tau = +inf where no exit by T.
// One pass serves monotonicity studies over sub-horizons.
struct ExitSample {
    double horizon = 0.0;
    std::vector<double> tau;
    std::vector<State3> stopped;  // X(theta)

    ExitEstimate estimate_at(double t_sub, double h, double eps_reg) const;
};

ExitSample exit_sample_mc(const ModelParams& params, const DiffusionSpec& diff,
                          const State3& x0, double T, const DomainBox& d,
                          std::size_t n, double h, std::uint64_t base_seed,
                          double eps_reg = 0.0);

using BoundaryFn = std::function<double(const State3&)>;

// psi_k: 1 on the exit side (outside or on the boundary), 0 strictly inside
// beyond the 1/k collar, linear ramp within the collar. With outflow_only,
// exterior points score 1 only where the drift points outward through the
// dominant violated face.
BoundaryFn smoothed_indicator(int k, const DomainBox& d, bool outflow_only = false,
                              const ModelParams* params = nullptr);

struct FunctionalEstimate {
    double value = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

// E[psi(X(theta))], theta = tau ^ T, on the same trajectories as
// exit_probability_mc under the same base seed.
FunctionalEstimate boundary_functional_mc(const ModelParams& params,
                                          const DiffusionSpec& diff,
                                          const State3& x0, double T,
                                          const DomainBox& d, const BoundaryFn& psi,
                                          std::size_t n, double h,
                                          std::uint64_t base_seed,
                                          double eps_reg = 0.0);

// Coupled regularization table: every eps rides on the same W/V draws; the
// eps = 0 column is the degenerate reference.
struct RegRow {
    double eps = 0.0;
    double q_hat = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double mean_sup_dist = 0.0;  // E sup_t |X^eps - X|
    double diff_from_zero = 0.0;
    double combined_se = 0.0;
    bool within = false;  // |q^eps - q^0| <= 2 combined SE
};

struct RegTable {
    std::vector<RegRow> rows;  // ordered as eps_list
    bool final_within = true;  // at the smallest positive eps
};

// eps_list must be strictly decreasing and end at 0.
RegTable regularization_convergence(const ModelParams& params,
                                    const DiffusionSpec& diff, const State3& x0,
                                    double T, const DomainBox& d, std::size_t n,
                                    double h, std::uint64_t base_seed,
                                    const std::vector<double>& eps_list,
                                    bool shared_v = true);

// Nested-grid coupled estimator: the coarse path is driven by pairwise sums
// of the fine increments, so q_fine - q_coarse isolates the monitoring bias
// and sqrt(h) extrapolation carries low variance.
struct PairedExit {
    ExitEstimate fine;    // step h/2
    ExitEstimate coarse;  // step h
    double diff = 0.0;    // q_fine - q_coarse
    double diff_se = 0.0;
    // sqrt(h)-extrapolated exit probability and its SE
    double extrapolated = 0.0;
    double extrapolated_se = 0.0;
};

PairedExit exit_probability_mc_pair(const ModelParams& params,
                                    const DiffusionSpec& diff, const State3& x0,
                                    double T, const DomainBox& d, std::size_t n,
                                    double h_coarse, std::uint64_t base_seed,
                                    double eps_reg = 0.0);

// Outflow diagnostic: sign of <F, n> at each face center (t = 0 state
// values; the drift is autonomous).
struct OutflowFace {
    int axis = 0;   // 0..2
    int side = 0;   // -1 lower face, +1 upper face
    double flux = 0.0;
    bool outflow = false;
};

std::vector<OutflowFace> outflow_overlay(const ModelParams& params,
                                         const DomainBox& d);

}  // namespace opidyn
