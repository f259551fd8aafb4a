#pragma once

#include <vector>

#include "opidyn/flow.hpp"
#include "opidyn/model.hpp"

namespace opidyn {

// Intrinsic time-scaling matrix Gamma(t) = diag{t, t^2, t^3}. The companion
// rescaler T^{1/2} Gamma^{-1}(T) = diag(T^{-1/2}, T^{-3/2}, T^{-5/2}) maps a
// horizon-T path onto the unit horizon; its inverse has determinant T^{9/2}.
struct ScalingMatrix {
    double T = 1.0;
    Vec3 diag = Vec3::Ones();
};

// Throws DomainError unless t > 0 and T > 0.
ScalingMatrix gamma_matrix(double t, double T);

// diag(T^{-1/2}, T^{-3/2}, T^{-5/2})
Vec3 rescaler_diag(double T);

// det of the inverse rescaler T^{-1/2} Gamma(T); equals T^{9/2} exactly
// (exponent arithmetic, no pow-of-products roundoff).
double rescaling_det(double T);

State3 rescale_state(const State3& x, double T);
State3 unrescale_state(const State3& xt, double T);

// X~(t) = T^{1/2} Gamma^{-1}(T) X(Tt) on the unit-time grid.
struct SdePath;
SdePath rescale_path(const SdePath& path, double T);
FlowPath rescale_path(const FlowPath& path, double T);

// Density scaling identity p(0,T,x,y) = T^{-9/2} p~(0,1,Rx,Ry), checked
// pointwise between two independent kernel-density estimates.
struct DensityEstimate;

struct ScalingCheckPoint {
    State3 probe;             // y in original coordinates
    double p_direct = 0.0;    // KDE of X(T) at y
    double se_direct = 0.0;
    double p_mapped = 0.0;    // T^{-9/2} * KDE of X~(1) at Ry
    double se_mapped = 0.0;
    double rel_dev = 0.0;     // |direct - mapped| / max(direct, mapped)
    double gap_over_band = 0.0;  // |direct - mapped| / (n_se * combined SE)
    bool ess_ok = true;
    bool within = false;
};

struct ScalingCheckReport {
    double T = 1.0;
    double n_se = 3.0;
    std::vector<ScalingCheckPoint> points;
    double max_rel_dev = 0.0;  // over points with ess_ok
    std::size_t n_flagged = 0;
    bool all_within = true;    // over points with ess_ok
};

// `direct` must be estimated at probes y_j from a horizon-T ensemble;
// `rescaled` at probes R y_j (same order) from a unit-horizon ensemble of
// the rescaled dynamics. Probe correspondence is validated.
ScalingCheckReport density_scaling_check(const DensityEstimate& direct,
                                         const DensityEstimate& rescaled,
                                         double T, double n_se = 3.0,
                                         double min_ess = 20.0);

}  // namespace opidyn
