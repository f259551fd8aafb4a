#include "opidyn/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "opidyn/errors.hpp"

namespace opidyn {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// section -> key -> value, preserving insertion order for hashing
class KeyStore {
public:
    void set(const std::string& section, const std::string& key,
             const std::string& value) {
        values_[section + "." + key] = value;
    }

    std::optional<std::string> take(const std::string& section,
                                    const std::string& key) {
        auto it = values_.find(section + "." + key);
        if (it == values_.end()) return std::nullopt;
        consumed_.insert(it->first);
        return it->second;
    }

    void check_all_consumed() const {
        for (const auto& [k, v] : values_)
            if (!consumed_.count(k))
                throw ConfigError("unknown config key: " + k);
    }

    std::string canonical_text() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse number '" + v + "'");
    }
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse integer '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + ": cannot parse bool '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(to_double(key, item));
    }
    return out;
}

State3 to_state3(const std::string& key, const std::string& v) {
    const auto list = to_list(key, v);
    if (list.size() != 3)
        throw ConfigError("config key " + key + ": expected 3 components");
    return {list[0], list[1], list[2]};
}

std::vector<State3> to_state3_list(const std::string& key, const std::string& v) {
    std::vector<State3> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ';')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(to_state3(key, item));
    }
    return out;
}

struct Getter {
    KeyStore& store;
    std::string section;

    void num(const char* key, double& dst) {
        if (auto v = store.take(section, key)) dst = to_double(id(key), *v);
    }
    void integer(const char* key, int& dst) {
        if (auto v = store.take(section, key))
            dst = static_cast<int>(to_int(id(key), *v));
    }
    void size(const char* key, std::size_t& dst) {
        if (auto v = store.take(section, key)) {
            const long long x = to_int(id(key), *v);
            if (x < 0) throw ConfigError(id(key) + " must be >= 0");
            dst = static_cast<std::size_t>(x);
        }
    }
    void u64(const char* key, std::uint64_t& dst) {
        if (auto v = store.take(section, key)) {
            try {
                dst = std::stoull(*v);
            } catch (const std::exception&) {
                throw ConfigError(id(key) + ": cannot parse seed '" + *v + "'");
            }
        }
    }
    void boolean(const char* key, bool& dst) {
        if (auto v = store.take(section, key)) dst = to_bool(id(key), *v);
    }
    void state(const char* key, State3& dst, bool* present = nullptr) {
        if (auto v = store.take(section, key)) {
            dst = to_state3(id(key), *v);
            if (present) *present = true;
        }
    }
    void list(const char* key, std::vector<double>& dst) {
        if (auto v = store.take(section, key)) dst = to_list(id(key), *v);
    }
    std::optional<std::string> raw(const char* key) {
        return store.take(section, key);
    }
    std::string id(const char* key) const { return section + "." + key; }
};

}  // namespace

RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::string>& overrides) {
    KeyStore store;
    std::string section = "run";
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        store.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }

    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        const auto dot = ov.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw ConfigError("override must look like section.key=value: " + ov);
        store.set(trim(ov.substr(0, dot)), trim(ov.substr(dot + 1, eq - dot - 1)),
                  trim(ov.substr(eq + 1)));
    }

    RunConfig cfg;
    cfg.effective_text = store.canonical_text();

    {
        Getter g{store, "model"};
        g.num("alpha", cfg.model.alpha);
        g.num("beta", cfg.model.beta);
        g.num("xi", cfg.model.xi);
        g.num("eps_rate", cfg.model.eps_rate);
        g.num("delta", cfg.model.delta);
        g.num("mu", cfg.model.mu);
        g.num("mu_star", cfg.model.mu_star);
        g.num("gamma", cfg.model.gamma);
        g.num("zeta", cfg.model.zeta);
        g.num("nu", cfg.model.nu);
        g.num("sigma_rel", cfg.model.sigma_rel);
    }
    {
        Getter g{store, "diffusion"};
        double sig = 1.0;
        bool have_sig = false;
        if (auto v = g.raw("sigma_hat")) {
            sig = to_double("diffusion.sigma_hat", *v);
            have_sig = true;
        }
        if (have_sig) cfg.diffusion = DiffusionSpec::constant(sig);
        g.num("lambda_lower", cfg.diffusion.lambda_lower);
        g.num("sigma_upper", cfg.diffusion.sigma_upper);
    }
    {
        Getter g{store, "run"};
        g.state("x0", cfg.x0);
        g.num("T", cfg.T);
        g.num("h", cfg.h);
        g.size("n", cfg.n);
        g.u64("base_seed", cfg.base_seed);
        g.num("eps_reg", cfg.eps_reg);
        g.boolean("shared_v", cfg.shared_v);
        g.boolean("store_paths", cfg.store_paths);
    }
    {
        Getter g{store, "density"};
        if (auto v = g.raw("probes")) {
            const std::string s = trim(*v);
            if (s.rfind("auto:", 0) == 0) {
                cfg.density_auto_probes =
                    static_cast<int>(to_int("density.probes", s.substr(5)));
            } else {
                cfg.density_probes = to_state3_list("density.probes", s);
            }
        }
        g.num("probe_sd", cfg.density_probe_sd);
        if (auto v = g.raw("axes")) {
            if (*v == "full")
                cfg.density_axes = KdeAxes::Full3;
            else if (*v == "x1")
                cfg.density_axes = KdeAxes::X1Marginal;
            else
                throw ConfigError("density.axes must be 'full' or 'x1'");
        }
        if (auto v = g.raw("bandwidth")) {
            if (*v != "auto") {
                const auto list = to_list("density.bandwidth", *v);
                if (list.size() != 3)
                    throw ConfigError("density.bandwidth: expected 3 components");
                cfg.bandwidth = Vec3(list[0], list[1], list[2]);
            }
        }
        g.integer("bootstrap", cfg.bootstrap);
        g.list("linkage_widths", cfg.linkage_widths);
        State3 lc;
        bool has_lc = false;
        g.state("linkage_center", lc, &has_lc);
        if (has_lc) cfg.linkage_center = lc;
        g.num("linkage_nse", cfg.linkage_nse);
    }
    {
        Getter g{store, "sandwich"};
        if (auto v = g.raw("form")) {
            if (*v == "kolmogorov")
                cfg.form = EnvelopeForm::Kolmogorov;
            else if (*v == "literal")
                cfg.form = EnvelopeForm::Literal;
            else
                throw ConfigError("sandwich.form must be kolmogorov or literal");
        }
        g.num("prefactor_exponent", cfg.prefactor_exponent);
        g.boolean("normalized", cfg.normalized);
        g.num("c_max", cfg.c_max);
        g.integer("min_reliable", cfg.min_reliable);
        g.num("n_se", cfg.n_se);
        g.integer("stability_reruns", cfg.stability_reruns);
    }
    {
        Getter g{store, "action"};
        g.state("target", cfg.action_target, &cfg.has_action_target);
        g.integer("intervals", cfg.action_intervals);
        g.num("endpoint_tol", cfg.endpoint_tol);
    }
    {
        Getter g{store, "exit"};
        bool lo = false, hi = false;
        g.state("lower", cfg.domain.lower, &lo);
        g.state("upper", cfg.domain.upper, &hi);
        cfg.has_domain = lo && hi;
        if (lo != hi)
            throw ConfigError("exit domain needs both lower and upper corners");
        g.integer("psi_k", cfg.psi_k);
        g.list("eps_list", cfg.exit_eps_list);
        g.list("horizons", cfg.exit_horizons);
        g.boolean("measure_h_bias", cfg.measure_h_bias);
    }
    {
        Getter g{store, "rescale"};
        g.integer("probes", cfg.rescale_probes);
        g.num("n_se", cfg.rescale_nse);
    }
    {
        Getter g{store, "output"};
        if (auto v = g.raw("dir")) cfg.output_dir = *v;
    }

    store.check_all_consumed();
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    model.validate();
    diffusion.validate();
    if (!(T > 0.0) || !(h > 0.0) || h > T)
        throw ConfigError("run: need 0 < h <= T");
    if (n < 1) throw ConfigError("run: n must be >= 1");
    if (eps_reg < 0.0) throw ConfigError("run: eps_reg must be >= 0");
    if (!x0.finite()) throw ConfigError("run: x0 must be finite");
    if (bootstrap < 0) throw ConfigError("density: bootstrap must be >= 0");
    if (has_domain) domain.validate();
    if (psi_k < 1) throw ConfigError("exit: psi_k must be >= 1");
}

RunConfig load_config(const std::filesystem::path& file,
                      const std::vector<std::string>& overrides) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file: " + file.string());
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return parse_config_text(text, overrides);
}

}  // namespace opidyn
