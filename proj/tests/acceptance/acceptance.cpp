// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qtat/experiment.hpp"
#include "qtat/inversion.hpp"
#include "qtat/refine.hpp"

using namespace qtat;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double order(double e_coarse, double e_fine, double h_coarse, double h_fine) {
    return std::log(e_coarse / e_fine) / std::log(h_coarse / h_fine);
}

fs::path workdir(const std::string &name) {
    fs::path p = fs::temp_directory_path() / "qtat_acceptance" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

unsigned threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// 1. Manufactured plane wave.
Outcome forward_convergence() {
    const double k = 6.0, qv = 0.05;
    ProbeVector xi{{complexd(2.0, 0.0), complexd(0.0, 2.0)}, 2.0};
    std::vector<double> err, h;
    for (std::size_t n : {64u, 128u}) {
        Grid g(2, n, 0.5);
        auto u_ex = plane_wave(xi, g);
        HelmholtzProblem p;
        p.grid = g;
        p.k = k;
        p.q = RealField(g, qv);
        p.f = u_ex * complexd(k * k, k * qv);
        p.g = probe_boundary_data(xi, k, g);
        err.push_back(l2_norm(solve(p).u - u_ex) / l2_norm(u_ex));
        h.push_back(g.spacing(0));
    }
    const double o = order(err[0], err[1], h[0], h[1]);
    return {o >= 1.7, fmt("order %.3f (err %.3e -> %.3e), need >= 1.7", o, err[0], err[1])};
}

// 2. div beta + k q |u_1|^2 = 0 on the solved field.
Outcome divergence_identity() {
    const double k = 6.0;
    const auto fam = make_probe_family(1.0, 2, k, ProbeKind::HelmholtzAdapted);
    std::vector<double> res, h;
    for (std::size_t n : {64u, 128u, 256u}) {
        Grid g(2, n, 0.5);
        const RealField q = default_phantom().sample(g);
        HelmholtzOperator op(g, k, q);
        const ComplexField u1 = op.solve(ComplexField(g), probe_boundary_data(fam[0], k, g));
        res.push_back(check_divergence_identity(u1, q, k));
        h.push_back(g.spacing(0));
    }
    const double o1 = order(res[0], res[1], h[0], h[1]), o2 = order(res[1], res[2], h[1], h[2]);
    const bool ok = o1 >= 1.5 && o2 >= 1.5 && res[2] <= 1e-2;
    return {ok, fmt("residual %.3e / %.3e / %.3e at 64/128/256, orders %.3f %.3f; need >= 1.5 and <= 1e-2", res[0],
                    res[1], res[2], o1, o2)};
}

// 3. Polarization on random fields.
Outcome polarization() {
    Grid g(2, 32, 0.5);
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> uq(0.01, 0.1);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        RealField q(g);
        ComplexField u1(g), uj(g);
        for (std::size_t i = 0; i < g.size(); ++i) {
            q[i] = uq(rng);
            u1[i] = {nd(rng), nd(rng)};
            uj[i] = {nd(rng), nd(rng)};
        }
        const ComplexField e = polarize(q, u1, uj);
        ComplexField ref(g);
        for (std::size_t i = 0; i < g.size(); ++i) ref[i] = q[i] * uj[i] * std::conj(u1[i]);
        worst = std::max(worst, l2_norm(e - ref) / l2_norm(ref));
    }
    return {worst <= 1e-13, fmt("max relative error %.3e over 100 trials, need <= 1e-13", worst)};
}

// 4. Exact formula on noiseless data.
Outcome exact_formula() {
    const double k = 6.0;
    const auto fam = make_probe_family(1.0, 2, k, ProbeKind::HelmholtzAdapted);
    std::vector<double> err;
    double qlo = 1.0, qhi = 0.0;
    for (std::size_t n : {256u, 512u}) {
        Grid g(2, n, 0.5);
        const RealField q = default_phantom().sample(g);
        qlo = std::min(qlo, min_value(q));
        qhi = std::max(qhi, max_value(q));
        const MeasurementSet ms = measure(q, k, fam);
        if (!ms.properness.is_proper) return {false, "probe set not proper"};
        err.push_back(l2_norm(reconstruct(ms.E, k).q_hat - q) / l2_norm(q));
    }
    const bool ok = err[0] <= 0.05 && err[1] < err[0] && qlo >= 0.02 && qhi <= 0.08;
    return {ok, fmt("relative L2 error %.3e at 256^2, %.3e at 512^2 (q in [%.3f, %.3f]); need <= 5%% and decreasing",
                    err[0], err[1], qlo, qhi)};
}

struct RefineSetup {
    Grid g;
    RealField q;
    BoundaryTrace g1;
};

RefineSetup refine_setup(std::size_t n) {
    Grid g(2, n, 0.5);
    const auto fam = make_probe_family(1.0, 2, 6.0, ProbeKind::HelmholtzAdapted);
    return {g, default_phantom().sample(g), probe_boundary_data(fam[0], 6.0, g)};
}

RealField smooth_random(const Grid &g, std::mt19937_64 &rng) {
    std::normal_distribution<double> nd;
    const double a = nd(rng), b = nd(rng), c = nd(rng), d = nd(rng);
    return RealField::sample(g, [&](const auto &x) {
        return a * std::cos(3 * x[0] + b) * std::sin(2 * x[1] - c) + 0.3 * d * x[0] * x[1] + 0.2 * b;
    });
}

// 5. Derivative and adjoint.
Outcome derivative_check() {
    const double k = 6.0;
    auto s = refine_setup(64);
    DerivativeOperator op(s.q, k, s.g1);
    std::mt19937_64 rng(5);
    const RealField rho = smooth_random(s.g, rng);
    const RealField df = apply_DF(op, rho);
    const std::vector<double> eps{1e-3, 1e-4, 1e-5};
    std::vector<double> err;
    for (double e : eps) {
        const RealField fd = (forward_energy(s.q + rho * e, k, s.g1) - op.energy()) * (1.0 / e);
        err.push_back(l2_norm(fd - df) / l2_norm(df));
    }
    const double slope = loglog_slope(eps, err);

    std::normal_distribution<double> nd;
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        RealField a(s.g), r(s.g);
        for (auto &v : a.values()) v = nd(rng);
        for (auto &v : r.values()) v = nd(rng);
        const double lhs = inner(apply_DF(op, a), r), rhs = inner(a, apply_DF_adjoint(op, r));
        worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
    }
    const bool ok = err.back() <= 1e-3 && std::abs(slope - 1.0) <= 0.2 && worst <= 1e-10;
    return {ok, fmt("FD error %.3e at eps 1e-5, eps slope %.3f, adjoint asymmetry %.3e", err.back(), slope, worst)};
}

// 6. eta and coercivity.
Outcome coercivity() {
    const double k = 6.0;
    auto s = refine_setup(64);
    const RefineOptions defaults;
    const double eta = eta_constant(2, s.g.star_constant(), s.g.radius());
    const bool cond = eta * defaults.q_max < 0.25;
    const double eta2 = eta_constant(2, 1.0, 1.0), eta3 = eta_constant(3, 1.0, 1.0);
    const bool consts = std::abs(eta2 - 3.05) <= 0.01 && std::abs(eta3 - 3.66) <= 0.01;

    DerivativeOperator op(s.q, k, s.g1);
    const double bound = 1.0 - 4.0 * eta * max_abs(s.q);
    std::mt19937_64 rng(6);
    double worst = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 20; ++t) worst = std::min(worst, coercivity_ratio(op, smooth_random(s.g, rng)));
    const bool ok = cond && consts && worst >= bound;
    return {ok, fmt("eta %.4f (grid), eta*q_max %.4f < 0.25; eta(d=2) %.4f, eta(d=3) %.4f; min ratio %.4f >= %.4f", eta,
                    eta * defaults.q_max, eta2, eta3, worst, bound)};
}

// 7. Variance of mollified noise derivatives.
Outcome variance_scaling() {
    Grid g(2, 256, 0.5);
    const double h = g.spacing(0);
    NoiseSpec spec;
    spec.sigma = 1.0;
    spec.sigma_relative = false;
    spec.p = 0.2;
    spec.length_scale = 0.15;
    spec.delta = 4 * h;
    spec.seed = 7;
    bool ok = true;
    std::string detail;
    for (int order : {0, 3}) {
        const Lemma51Report r = verify_lemma51(spec, g, order, {2 * h, 3 * h, 4 * h}, 200);
        ok = ok && std::abs(r.slope - r.predicted_slope) <= 0.3;
        detail += fmt("|gamma| = %d slope %.3f (predicted %.3f)%s", order, r.slope, r.predicted_slope,
                      order == 0 ? "; " : "");
    }
    return {ok, detail + ", need within 0.3"};
}

// 8. Initial-guess error scaling.
Outcome initial_guess_scaling() {
    ExperimentManifest m;
    m.grid.n = 512;
    m.noise.length_scale = 0.07;
    m.noise.p = 0.125;
    m.refine_enabled = false;
    m.sweep.sigmas = {5e-6, 1e-5};
    m.sweep.deltas_h = {2.0, 4.0};
    m.sweep.realizations = 50;
    m.seed = 8;
    m.output_dir = workdir("initial_guess").string();
    const SweepResult res = run_sweep(m, {false, threads()});

    std::map<std::pair<double, double>, std::pair<double, int>> cells;
    for (const auto &r : res.rows) {
        if (r.status != "ok") return {false, "realization failed: " + r.status};
        auto &c = cells[{r.sigma, r.delta}];
        c.first += r.noise_mse;
        c.second += 1;
    }
    auto mean = [&](double s, double dh) {
        const auto &c = cells.at({s, m.noise_spec(s, dh).delta});
        return c.first / c.second;
    };
    const Grid g = m.make_grid();
    const double h = g.spacing(0);
    const double predicted = 2.0 - 8.0 * m.noise.p;
    bool ok = true;
    std::string detail;
    for (double s : m.sweep.sigmas) {
        const double sl = loglog_slope({2 * h, 4 * h}, {mean(s, 2.0), mean(s, 4.0)});
        ok = ok && std::abs(sl - predicted) <= 0.3;
        detail += fmt("delta slope %.3f at sigma %.0e; ", sl, s);
    }
    for (double dh : m.sweep.deltas_h) {
        const double sl = loglog_slope(m.sweep.sigmas, {mean(5e-6, dh), mean(1e-5, dh)});
        ok = ok && std::abs(sl - 2.0) <= 0.3;
        detail += fmt("sigma slope %.3f at delta %gh; ", sl, dh);
    }
    return {ok, detail + fmt("predicted %.3f and 2", predicted)};
}

// 9. Refinement beats the initial guess; clipping never hurts.
Outcome refinement_improvement() {
    ExperimentManifest m;
    m.sweep.sigmas = {1e-3};
    m.sweep.deltas_h = {4.0};
    m.sweep.realizations = 50;
    m.seed = 9;
    m.output_dir = workdir("refinement").string();
    const SweepResult res = run_sweep(m, {false, threads()});
    std::size_t improved = 0, clip_ok = 0, ok = 0;
    double qs = 0, qhat = 0;
    for (const auto &r : res.rows) {
        if (r.status != "ok") continue;
        ++ok;
        improved += r.mse_qhat < r.mse_qs;
        clip_ok += r.mse_qhat <= r.mse_qstar;
        qs += std::sqrt(r.mse_qs);
        qhat += std::sqrt(r.mse_qhat);
    }
    const double n = static_cast<double>(res.rows.size());
    const double fi = improved / n, fc = clip_ok / n;
    const bool pass = ok == res.rows.size() && fi >= 0.9 && fc == 1.0;
    return {pass, fmt("improved on %.0f%% (need >= 90%%), clipping inequality on %.0f%% (need 100%%), %zu/%zu runs ok; "
                      "mean L2 error q^s %.3e, clipped q_* %.3e",
                      100 * fi, 100 * fc, ok, res.rows.size(), qs / ok, qhat / ok)};
}

std::map<std::string, std::string> hash_tree(const fs::path &dir) {
    std::map<std::string, std::string> out;
    for (const auto &e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream is(e.path(), std::ios::binary);
        std::ostringstream os;
        os << is.rdbuf();
        out[fs::relative(e.path(), dir).string()] = fnv1a_hex(os.str());
    }
    return out;
}

// 10. Identical manifest and seed give identical files.
Outcome determinism() {
    ExperimentManifest m;
    m.seed = 10;
    m.output_dir = workdir("determinism").string();
    run_pipeline(m, {true, 1});
    const auto first = hash_tree(m.output_dir);
    fs::remove_all(m.output_dir);
    run_pipeline(m, {true, 1});
    const auto second = hash_tree(m.output_dir);

    ExperimentManifest s;
    s.grid.n = 96;
    s.sweep.sigmas = {1e-3};
    s.sweep.deltas_h = {3.0, 4.0};
    s.sweep.realizations = 3;
    s.output_dir = workdir("determinism_sweep").string();
    run_sweep(s, {false, 1});
    const auto sweep1 = hash_tree(s.output_dir);
    fs::remove_all(s.output_dir);
    run_sweep(s, {false, 2});
    const auto sweep2 = hash_tree(s.output_dir);

    const bool ok = !first.empty() && first == second && sweep1 == sweep2;
    return {ok, fmt("pipeline: %zu files %s; sweep (1 vs 2 threads): %zu files %s", first.size(),
                    first == second ? "identical" : "DIFFER", sweep1.size(), sweep1 == sweep2 ? "identical" : "DIFFER")};
}

struct Criterion {
    int id;
    const char *name;
    double budget_s;
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "forward convergence", 30, forward_convergence},
        {2, "divergence identity", 0, divergence_identity},
        {3, "polarization", 1, polarization},
        {4, "exact formula", 300, exact_formula},
        {5, "derivative and adjoint", 60, derivative_check},
        {6, "coercivity and eta", 0, coercivity},
        {7, "noise variance scaling", 300, variance_scaling},
        {8, "initial-guess scaling", 900, initial_guess_scaling},
        {9, "refinement improvement", 1200, refinement_improvement},
        {10, "determinism", 0, determinism},
    };
    int failed = 0;
    for (const auto &c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_s <= 0 || t < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::string budget = c.budget_s > 0 ? fmt(" (%.1f s, budget %.0f s)", t, c.budget_s) : fmt(" (%.1f s)", t);
        std::printf("%s criterion %d [%s]: %s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    budget.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
