#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "opidyn/flow.hpp"
#include "opidyn/model.hpp"
#include "opidyn/rng.hpp"

namespace opidyn {

// Scalar control on N equal subintervals of [0, T]. The control enters the
// drift of the susceptible coordinate only, like the noise.
struct ControlSignal {
    double T = 0.0;
    std::vector<double> values;  // one per subinterval

    std::size_t intervals() const { return values.size(); }
    void validate() const;
    // Value on the subinterval containing step k of an n_steps grid.
    // Requires n_steps to be a multiple of intervals().
    double at_step(std::size_t k, std::size_t n_steps) const;
    // Energy (1/2) * integral of u^2 dt.
    double energy() const;
};

// One simulated trajectory on a uniform grid.
struct SdePath {
    TimeGrid grid;
    std::vector<State3> states;
    std::uint64_t seed = 0;
    double eps_reg = 0.0;

    const State3& terminal() const { return states.back(); }
};

// Everything needed to regenerate an ensemble deterministically.
struct SimConfig {
    enum class Kind { Standard, Rescaled };

    ModelParams params;
    DiffusionSpec diff;
    State3 x0;
    double T = 1.0;
    double h = 1e-3;
    double eps_reg = 0.0;    // 0 = degenerate dynamics
    bool shared_v = true;    // one V stream feeding both x2 and x3
    std::optional<ControlSignal> control;
    Kind kind = Kind::Standard;
    // For Kind::Rescaled: the original horizon; the simulation itself runs on
    // [0,1] in intrinsic coordinates and x0 is given in those coordinates.
    double rescale_horizon = 1.0;

    void validate() const;
};

// Euler-Maruyama path of the degenerate system: noise (and control) enter
// coordinate 1 only. `seed` fully determines the trajectory.
SdePath simulate_degenerate(const ModelParams& params, const DiffusionSpec& diff,
                            const State3& x0, double T, double h,
                            std::uint64_t seed,
                            const ControlSignal* control = nullptr);

// Nondegenerate companion process: independent driver V adds sqrt(eps_reg)
// noise to x2 and x3. By default one V stream feeds both coordinates;
// shared_v = false switches to independent drivers.
SdePath simulate_regularized(const ModelParams& params, const DiffusionSpec& diff,
                             double eps_reg, const State3& x0, double T, double h,
                             std::uint64_t seed, bool shared_v = true);

// Intrinsically rescaled dynamics simulated directly on the unit horizon:
//   drift  T^{3/2} Gamma^{-1}(T) F(Gamma(T) T^{-1/2} x)
//   noise  sigma_hat on coordinate 1 (invariant under the rescaling).
// x0 is in rescaled coordinates. With eps_reg > 0 the regularizing noise
// carries the induced per-coordinate scales (sqrt(eps)/T, sqrt(eps)/T^2).
SdePath simulate_rescaled(const ModelParams& params, const DiffusionSpec& diff,
                          double horizon_T, const State3& x0_rescaled,
                          double h_unit, std::uint64_t seed,
                          double eps_reg = 0.0, bool shared_v = true);

SdePath simulate_one(const SimConfig& config, std::uint64_t seed);

// Seed of trajectory `index` within an ensemble; a pure function of
// (base_seed, index), independent of worker count and scheduling.
std::uint64_t trajectory_seed(std::uint64_t base_seed, std::uint64_t index);

struct PathEnsemble {
    SimConfig config;
    std::uint64_t base_seed = 0;
    std::size_t n = 0;
    std::vector<State3> terminal;      // slot i <- trajectory i
    std::vector<std::uint8_t> failed;  // 1 where the trajectory blew up
    std::size_t n_failed = 0;
    std::vector<SdePath> paths;        // populated only when requested

    double failure_fraction() const {
        return n == 0 ? 0.0 : static_cast<double>(n_failed) / static_cast<double>(n);
    }
};

// OpenMP-parallel ensemble; bitwise identical to the serial reference for
// any thread count (per-trajectory streams, indexed writes, no shared
// floating-point reductions).
PathEnsemble simulate_ensemble(const SimConfig& config, std::size_t n,
                               std::uint64_t base_seed, bool store_paths = false);

// Serial reference implementation, kept for testing and benchmarking.
PathEnsemble simulate_ensemble_serial(const SimConfig& config, std::size_t n,
                                      std::uint64_t base_seed,
                                      bool store_paths = false);

// Coupled regularization study: all eps values ride on the same W and V
// draws, so E sup_t |X^eps - X| measures the regularization gap alone.
struct CouplingRow {
    double eps;
    double mean_sup_dist;
    double se_sup_dist;
};
std::vector<CouplingRow> coupling_study(const ModelParams& params,
                                        const DiffusionSpec& diff,
                                        const State3& x0, double T, double h,
                                        std::uint64_t base_seed, std::size_t n,
                                        const std::vector<double>& eps_list,
                                        bool shared_v = true);

namespace detail {

// Per-step state update shared by every simulation kernel. dw and dv are
// N(0,1) draws; dv2 is used only when the V drivers are independent.
inline State3 em_update(const State3& x, const State3& f, double u, double sig,
                        double h, double sqrt_h, double dw, double c2, double c3,
                        double dv1, double dv2) {
    State3 y;
    y.x1 = x.x1 + (f.x1 + u) * h + sig * sqrt_h * dw;
    y.x2 = x.x2 + f.x2 * h + c2 * sqrt_h * dv1;
    y.x3 = x.x3 + f.x3 * h + c3 * sqrt_h * dv2;
    return y;
}

}  // namespace detail

}  // namespace opidyn
