#include "opidyn/scaling.hpp"

#include <cmath>

#include "opidyn/density.hpp"
#include "opidyn/errors.hpp"
#include "opidyn/sde.hpp"

namespace opidyn {

ScalingMatrix gamma_matrix(double t, double T) {
    if (!(t > 0.0) || !(T > 0.0))
        throw DomainError("gamma_matrix requires t > 0 and T > 0");
    ScalingMatrix g;
    g.T = T;
    g.diag = Vec3(t, t * t, t * t * t);
    return g;
}

Vec3 rescaler_diag(double T) {
    if (!(T > 0.0)) throw DomainError("rescaler requires T > 0");
    const double rt = std::sqrt(T);
    return Vec3(1.0 / rt, 1.0 / (rt * T), 1.0 / (rt * T * T));
}

double rescaling_det(double T) {
    if (!(T > 0.0)) throw DomainError("rescaling_det requires T > 0");
    // exponents 1/2 + 3/2 + 5/2 = 9/2
    return std::pow(T, 4.5);
}

State3 rescale_state(const State3& x, double T) {
    const Vec3 r = rescaler_diag(T);
    return {r[0] * x.x1, r[1] * x.x2, r[2] * x.x3};
}

State3 unrescale_state(const State3& xt, double T) {
    const Vec3 r = rescaler_diag(T);
    return {xt.x1 / r[0], xt.x2 / r[1], xt.x3 / r[2]};
}

namespace {

template <class PathT>
PathT rescale_path_impl(const PathT& path, double T) {
    const double horizon = path.grid.horizon();
    if (std::abs(horizon - T) > 1e-9 * std::max(1.0, T))
        throw ConfigError("rescale_path: path horizon does not match T");
    PathT out = path;
    out.grid.t0 = 0.0;
    out.grid.h = path.grid.h / T;
    for (auto& s : out.states) s = rescale_state(s, T);
    return out;
}

}  // namespace

SdePath rescale_path(const SdePath& path, double T) {
    return rescale_path_impl(path, T);
}

FlowPath rescale_path(const FlowPath& path, double T) {
    return rescale_path_impl(path, T);
}

ScalingCheckReport density_scaling_check(const DensityEstimate& direct,
                                         const DensityEstimate& rescaled,
                                         double T, double n_se, double min_ess) {
    if (direct.probes.size() != rescaled.probes.size())
        throw ConfigError("density_scaling_check: probe sets differ in size");
    if (direct.axes != rescaled.axes)
        throw ConfigError("density_scaling_check: estimates use different axes");
    const bool marginal = direct.axes == KdeAxes::X1Marginal;
    // Density transform factor: full 3-D uses T^{9/2}; the x1 marginal only
    // carries the first coordinate's T^{1/2}.
    const double jac = marginal ? std::sqrt(T) : rescaling_det(T);

    ScalingCheckReport rep;
    rep.T = T;
    rep.n_se = n_se;
    for (std::size_t j = 0; j < direct.probes.size(); ++j) {
        const State3& y = direct.probes[j];
        const State3 ry = rescale_state(y, T);
        const State3& given = rescaled.probes[j];
        const double scale = std::max({1.0, std::abs(ry.x1), std::abs(ry.x2),
                                       std::abs(ry.x3)});
        const bool match =
            marginal ? std::abs(given.x1 - ry.x1) <= 1e-9 * scale
                     : norm(given - ry) <= 1e-9 * scale;
        if (!match)
            throw ConfigError(
                "density_scaling_check: rescaled probes are not the image of "
                "the direct probes under the rescaler");

        ScalingCheckPoint pt;
        pt.probe = y;
        pt.p_direct = direct.p_hat[j];
        pt.se_direct = direct.se[j];
        pt.p_mapped = rescaled.p_hat[j] / jac;
        pt.se_mapped = rescaled.se[j] / jac;
        pt.ess_ok = direct.ess[j] >= min_ess && rescaled.ess[j] >= min_ess;
        const double gap = std::abs(pt.p_direct - pt.p_mapped);
        const double band =
            n_se * std::sqrt(pt.se_direct * pt.se_direct +
                             pt.se_mapped * pt.se_mapped);
        pt.gap_over_band = band > 0.0 ? gap / band : (gap > 0.0 ? 1e300 : 0.0);
        pt.rel_dev = gap / std::max({pt.p_direct, pt.p_mapped, 1e-300});
        pt.within = gap <= band;
        if (pt.ess_ok) {
            rep.max_rel_dev = std::max(rep.max_rel_dev, pt.rel_dev);
            rep.all_within = rep.all_within && pt.within;
        } else {
            ++rep.n_flagged;
        }
        rep.points.push_back(pt);
    }
    return rep;
}

}  // namespace opidyn
