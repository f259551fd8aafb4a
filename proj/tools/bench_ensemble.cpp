// Benchmark: OpenMP ensemble kernels against the serial reference.
// Verifies bitwise agreement of the terminal-state arrays while timing.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <omp.h>

#include "opidyn/exit.hpp"
#include "opidyn/sde.hpp"

using namespace opidyn;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

ModelParams bench_params() {
    ModelParams p;
    p.alpha = 0.15;
    p.beta = 0.4;
    p.xi = 0.74;
    p.eps_rate = 0.8;
    p.delta = 0.1;
    p.mu = 0.0023;
    p.mu_star = 0.0107;
    p.gamma = 0.2;
    p.zeta = 0.25;
    p.nu = 0.02;
    p.sigma_rel = 0.12;
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t n = 100000;
    if (argc > 1) n = std::strtoull(argv[1], nullptr, 10);

    SimConfig cfg;
    cfg.params = bench_params();
    cfg.diff = DiffusionSpec::constant(0.5);
    cfg.x0 = State3{0.7, 0.1, 0.05};
    cfg.T = 1.0;
    cfg.h = 1e-3;
    cfg.eps_reg = 1e-4;

    std::cout << "ensemble benchmark: n = " << n << ", steps = "
              << static_cast<std::size_t>(cfg.T / cfg.h) << ", threads = "
              << omp_get_max_threads() << "\n";

    auto t0 = std::chrono::steady_clock::now();
    const PathEnsemble serial = simulate_ensemble_serial(cfg, n, 99);
    const double t_serial = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    const PathEnsemble parallel = simulate_ensemble(cfg, n, 99);
    const double t_parallel = seconds_since(t0);

    bool identical = serial.n == parallel.n;
    for (std::size_t i = 0; identical && i < n; ++i)
        identical = serial.terminal[i].x1 == parallel.terminal[i].x1 &&
                    serial.terminal[i].x2 == parallel.terminal[i].x2 &&
                    serial.terminal[i].x3 == parallel.terminal[i].x3;

    std::cout << "  serial:   " << t_serial << " s\n"
              << "  parallel: " << t_parallel << " s  (speedup "
              << t_serial / t_parallel << "x)\n"
              << "  terminal states bitwise identical: "
              << (identical ? "yes" : "NO") << "\n";

    const DomainBox box{State3{0.45, -0.2, -0.2}, State3{0.95, 0.45, 0.3}};
    t0 = std::chrono::steady_clock::now();
    const ExitEstimate q = exit_probability_mc(cfg.params, cfg.diff, cfg.x0,
                                               cfg.T, box, n, cfg.h, 99, 0.0);
    const double t_exit = seconds_since(t0);
    std::cout << "exit kernel: q_hat = " << q.q_hat << " in " << t_exit
              << " s\n";

    return identical ? 0 : 1;
}
