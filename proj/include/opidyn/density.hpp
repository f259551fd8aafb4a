#pragma once

#include <optional>
#include <vector>

#include "opidyn/model.hpp"
#include "opidyn/sde.hpp"

namespace opidyn {

enum class KdeAxes { X1Marginal, Full3 };

// Product-Gaussian kernel density estimate at a set of probe points, with
// per-probe standard errors and effective sample sizes.
struct DensityEstimate {
    KdeAxes axes = KdeAxes::Full3;
    std::vector<State3> probes;
    std::vector<double> p_hat;
    std::vector<double> se;
    std::vector<double> ess;
    Vec3 bandwidth = Vec3::Zero();
    std::size_t n = 0;  // usable sample count
};

// Silverman plug-in bandwidth unless an explicit one is supplied.
// n_bootstrap > 0: joint bootstrap SEs over that many resamples (seeded from
// the ensemble's base seed); n_bootstrap = 0: plug-in (delta-method) SEs.
// Full-3D estimation on an ensemble whose empirical variance in some
// coordinate is below the degeneracy gate raises EstimationError naming the
// flat coordinate.
DensityEstimate estimate_density(const PathEnsemble& ens,
                                 const std::vector<State3>& probes,
                                 KdeAxes axes = KdeAxes::Full3,
                                 std::optional<Vec3> bandwidth = {},
                                 int n_bootstrap = 200);

// Per-coordinate sample SD of the usable terminal states (probe placement).
Vec3 ensemble_terminal_sd(const PathEnsemble& ens);

// Smooth positive unit-mass bump on R^3 (isotropic Gaussian of width
// eps_width centered at `center`), standing in for the Dirac mass.
struct MollifierSpec {
    double eps_width = 0.0;
    State3 center;

    void validate() const;
};

double mollifier_eval(const MollifierSpec& spec, const State3& y);

// Two-sided Gaussian envelope around the deterministic flow endpoint.
//
// Quadratic form readings of the time scaling:
//   Kolmogorov: q = |t^{1/2} Gamma^{-1}(t) (theta - y)|^2
//               = d1^2/t + d2^2/t^3 + d3^2/t^5
//   Literal:    q = (theta - y)^T t Gamma(t) (theta - y)
//               = t^2 d1^2 + t^3 d2^2 + t^4 d3^2
//
// Bounds (Aronson form; C in the lower exponent, 1/C in the upper so the
// curves genuinely sandwich):
//   lower = C^{-1} pref exp(-C q s),  upper = C pref exp(-q s / C)
// where pref = t^{-e} (times (2pi)^{-dim/2} when normalized) and s = 1/2
// when normalized, 1 otherwise. The normalized 1-D version reduces to the
// exact Gaussian at C = 1, which is what the Brownian marginal fit checks.
enum class EnvelopeForm { Kolmogorov, Literal };

struct GaussianEnvelope {
    double c = 2.0;                    // sandwich constant, > 1
    double t = 1.0;                    // time
    State3 center;                     // Theta(t, x0)
    EnvelopeForm form = EnvelopeForm::Kolmogorov;
    double prefactor_exponent = 4.5;   // 9/2 for 3-D, 1/2 for the x1 marginal
    bool normalized = false;
    int dim = 3;                       // 3 or 1 (x1 marginal)
};

double envelope_quadratic_form(const GaussianEnvelope& env, const State3& y);

// (lower, upper); throws DomainError for t <= 0 or c <= 1.
std::pair<double, double> envelope_bounds(const GaussianEnvelope& env,
                                          const State3& y);

// Convenience wrapper that integrates the flow to obtain the center.
std::pair<double, double> gaussian_envelope(double c, double t, const State3& x0,
                                            const State3& y,
                                            const ModelParams& params,
                                            EnvelopeForm form,
                                            double h_flow = 1e-3);

struct SandwichOptions {
    EnvelopeForm form = EnvelopeForm::Kolmogorov;
    double prefactor_exponent = 4.5;
    bool normalized = false;
    int dim = 3;
    double c_max = 1e6;      // fits above this report a sandwich violation
    int min_reliable = 10;   // required probes above the noise floor
    double n_se = 3.0;
    double h_flow = 1e-3;
};

struct SandwichProbe {
    State3 y;
    double q = 0.0;
    double p_hat = 0.0;
    double se = 0.0;
    bool reliable = false;
    // log-margins at the fitted C (positive = strictly inside the band)
    double margin_lower = 0.0;
    double margin_upper = 0.0;
    bool ok = false;
};

struct SandwichReport {
    bool feasible = false;
    double c = 0.0;
    double c_max = 0.0;
    std::size_t n_reliable = 0;
    State3 center;
    double t = 0.0;
    std::vector<SandwichProbe> probes;
};

// Smallest C >= 1 + 1e-6 with every reliable probe (p_hat > n_se * se)
// inside the two-sided bound widened by its n_se band. Infeasibility up to
// c_max is reported, not thrown: it is the falsification signal.
SandwichReport fit_sandwich_constant(const DensityEstimate& est, double t,
                                     const State3& x0, const ModelParams& params,
                                     const SandwichOptions& opts);

struct ValueFunctionResult {
    double j = 0.0;        // -ln upsilon
    double upsilon = 0.0;  // ensemble mean of the mollifier at the terminal state
    double se_upsilon = 0.0;
    double j_ci_low = 0.0;   // delta-method 95% interval for j
    double j_ci_high = 0.0;
    double horizon = 0.0;    // T - eps_width
    std::size_t n = 0;
};

// Mean of the mollifier over an existing ensemble's terminal states.
ValueFunctionResult value_function_on_ensemble(const PathEnsemble& ens,
                                               const MollifierSpec& spec);

// J_eps(0, x0): simulates to the truncated horizon T - eps_width and takes
// -ln of the mollified terminal expectation. eps_reg > 0 runs the
// regularized dynamics (used by the density-linkage study).
ValueFunctionResult value_function_mc(const ModelParams& params,
                                      const DiffusionSpec& diff, const State3& x0,
                                      double T, const MollifierSpec& spec,
                                      std::size_t n, std::uint64_t seed,
                                      double eps_reg = 0.0);

// exp(-J_eps) against an independent KDE at y0, per mollifier width.
struct LinkageRow {
    double eps_width = 0.0;
    double horizon = 0.0;
    double j = 0.0;
    double upsilon = 0.0;
    double se_upsilon = 0.0;
    double p_hat = 0.0;
    double se_p = 0.0;
    double gap = 0.0;
    double band = 0.0;  // n_se * combined SE
    bool within = false;
};

std::vector<LinkageRow> value_density_linkage(
    const ModelParams& params, const DiffusionSpec& diff, const State3& x0,
    double T, const State3& y0, const std::vector<double>& eps_widths,
    double eps_reg, std::size_t n, std::uint64_t base_seed, double n_se = 3.0);

}  // namespace opidyn
