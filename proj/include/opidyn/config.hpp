#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "opidyn/density.hpp"
#include "opidyn/exit.hpp"
#include "opidyn/model.hpp"
#include "opidyn/sde.hpp"

namespace opidyn {

// Plain key-value config with [section] headers, '#' comments and
// `--set section.key=value` overrides. Every key must be consumed by the
// schema below; leftovers raise ConfigError. The full effective text is
// hashed into the run manifest.
//
// Sections and keys are documented in README.md.
struct RunConfig {
    ModelParams model;
    DiffusionSpec diffusion;

    // [run]
    State3 x0;
    double T = 1.0;
    double h = 1e-3;
    std::size_t n = 10000;
    std::uint64_t base_seed = 1;
    double eps_reg = 0.0;
    bool shared_v = true;
    bool store_paths = false;

    // [density]
    std::vector<State3> density_probes;      // empty = auto
    int density_auto_probes = 0;             // probes per axis pattern
    double density_probe_sd = 1.0;           // offsets in per-coordinate SDs
    KdeAxes density_axes = KdeAxes::Full3;
    std::optional<Vec3> bandwidth;
    int bootstrap = 200;
    std::vector<double> linkage_widths;      // nonempty runs the linkage study
    std::optional<State3> linkage_center;    // default: flow endpoint
    double linkage_nse = 3.0;

    // [sandwich]
    EnvelopeForm form = EnvelopeForm::Kolmogorov;
    double prefactor_exponent = 4.5;
    bool normalized = false;
    double c_max = 1e6;
    int min_reliable = 10;
    double n_se = 3.0;
    int stability_reruns = 0;  // extra fits on fresh seeds, reported

    // [action]
    State3 action_target;
    bool has_action_target = false;
    int action_intervals = 64;
    double endpoint_tol = 1e-3;

    // [exit]
    DomainBox domain{{0, 0, 0}, {1, 1, 1}};
    bool has_domain = false;
    int psi_k = 1000;
    std::vector<double> exit_eps_list;   // for the regularization table
    std::vector<double> exit_horizons;   // extra sub-horizon rows
    bool measure_h_bias = false;

    // [rescale]
    int rescale_probes = 10;
    double rescale_nse = 3.0;

    // [output]
    std::filesystem::path output_dir = ".";

    // effective text (post-override), hashed for the manifest
    std::string effective_text;

    void validate() const;
};

RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::filesystem::path& file,
                      const std::vector<std::string>& overrides = {});

}  // namespace opidyn
