#include <doctest.h>

#include <random>

#include "qtat/inversion.hpp"
#include "qtat/refine.hpp"

using namespace qtat;

namespace {

const double k = 6.0;

RealField phantom(const Grid &g) {
    return RealField::sample(g, [](const auto &x) {
        return 0.03 + 0.02 * std::exp(-((x[0] - 0.1) * (x[0] - 0.1) + x[1] * x[1]) / 0.03);
    });
}

RealField smooth_random(const Grid &g, std::mt19937_64 &rng) {
    std::normal_distribution<double> nd;
    const double a = nd(rng), b = nd(rng), c = nd(rng);
    return RealField::sample(g, [&](const auto &x) {
        return a * std::cos(3 * x[0] + b) * std::sin(2 * x[1] - c) + 0.3 * b * x[0] * x[1];
    });
}

struct Setup {
    Grid g;
    RealField q;
    BoundaryTrace g1;
    std::vector<ProbeVector> fam;
};

Setup setup(std::size_t n) {
    Grid g(2, n, 0.5);
    auto fam = make_probe_family(1.0, 2, k, ProbeKind::HelmholtzAdapted);
    return {g, phantom(g), probe_boundary_data(fam[0], k, g), fam};
}

}  // namespace

TEST_CASE("derivative of zero and adjoint of zero") {
    auto s = setup(24);
    DerivativeOperator op(s.q, k, s.g1);
    CHECK(max_abs(op.apply(RealField(s.g))) == 0.0);
    CHECK(max_abs(op.apply_adjoint(RealField(s.g))) == 0.0);
}

TEST_CASE("finite-difference check with first-order epsilon sweep") {
    auto s = setup(32);
    DerivativeOperator op(s.q, k, s.g1);
    std::mt19937_64 rng(2);
    auto rho = smooth_random(s.g, rng);
    const auto df = op.apply(rho);
    std::vector<double> eps{1e-3, 1e-4, 1e-5}, err;
    for (double e : eps) {
        auto fd = (forward_energy(s.q + rho * e, k, s.g1) - op.energy()) * (1.0 / e);
        err.push_back(l2_norm(fd - df) / l2_norm(df));
    }
    CHECK(err.back() <= 1e-3);
    const double slope = std::log(err[0] / err[2]) / std::log(eps[0] / eps[2]);
    CHECK(slope == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("dot-product test") {
    auto s = setup(24);
    DerivativeOperator op(s.q, k, s.g1);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        RealField rho(s.g), r(s.g);
        for (auto &v : rho.values()) v = nd(rng);
        for (auto &v : r.values()) v = nd(rng);
        const double a = inner(op.apply(rho), r), b = inner(rho, op.apply_adjoint(r));
        worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), std::abs(b)));
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("multiplication part is self-adjoint") {
    auto s = setup(16);
    DerivativeOperator op(s.q, k, s.g1);
    std::mt19937_64 rng(8);
    auto r = smooth_random(s.g, rng);
    auto out = op.apply_adjoint(r, false);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == r[i] * std::norm(op.u_ref()[i]));
    CHECK(op.apply(r, false).values() == out.values());
}

TEST_CASE("eta constants") {
    CHECK(eta_constant(2, 1.0, 1.0) == doctest::Approx(std::sqrt(65.0 / 7.0)));
    CHECK(eta_constant(2, 1.0, 1.0) == doctest::Approx(3.05).epsilon(0.01));
    CHECK(eta_constant(3, 1.0, 1.0) == doctest::Approx(std::sqrt(67.0 / 5.0)));
    CHECK(eta_constant(3, 1.0, 1.0) == doctest::Approx(3.66).epsilon(0.01));
    CHECK(eta_constant(2, 1.0, 2.0) == doctest::Approx(2 * std::sqrt(65.0 / 7.0)));

    Grid g(2, 8, 0.5);
    const double eta = eta_constant(2, g.star_constant(), g.radius());
    auto rep = eta_and_condition(RealField(g, 0.25 / eta), g, g.star_constant());
    CHECK(rep.eta == doctest::Approx(eta));
    CHECK_FALSE(rep.condition_423_ok);
    CHECK(eta_and_condition(RealField(g, 0.07), g, g.star_constant()).condition_423_ok);
    CHECK_THROWS_AS(eta_constant(4, 1.0, 1.0), ConfigError);
}

TEST_CASE("coercivity bound for small q") {
    auto s = setup(32);
    DerivativeOperator op(s.q, k, s.g1);
    auto rep = eta_and_condition(s.q, s.g, s.g.star_constant());
    REQUIRE(rep.condition_423_ok);
    std::mt19937_64 rng(12);
    for (int t = 0; t < 5; ++t) {
        CHECK(coercivity_ratio(op, smooth_random(s.g, rng)) >= 1.0 - 4.0 * rep.eta * max_abs(s.q));
    }
}

TEST_CASE("clip") {
    Grid g(2, 6, 0.5);
    auto q = RealField::sample(g, [](const auto &x) { return 0.03 + 0.01 * x[0]; });
    CHECK(clip(q, 0.01, 0.07).values() == q.values());
    auto c = clip(RealField(g, -1.0), 0.01, 0.1);
    for (double v : c.values()) CHECK(v == 0.01);
    CHECK_THROWS_AS(clip(q, 0.1, 0.1), ParameterError);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0.04, 0.05);
    std::uniform_real_distribution<double> ut(0.01, 0.07);
    for (int t = 0; t < 50; ++t) {
        RealField x(g), target(g);
        for (auto &v : x.values()) v = nd(rng);
        for (auto &v : target.values()) v = ut(rng);
        CHECK(l2_norm(clip(x, 0.01, 0.07) - target) <= l2_norm(x - target));
    }
}

TEST_CASE("zero residual gives a zero step") {
    auto s = setup(24);
    DerivativeOperator op(s.q, k, s.g1);
    auto res = least_squares_step(op, s.q, to_complex(op.energy()));
    CHECK(res.q_star.values() == s.q.values());
    CHECK(res.ls_iterations == 0);
}

TEST_CASE("exact data with q_s = q_o: the step is negligible") {
    auto s = setup(32);
    auto E1 = to_complex(forward_energy(s.q, k, s.g1));
    DerivativeOperator op(s.q, k, s.g1);
    auto res = least_squares_step(op, s.q, E1);
    CHECK(l2_norm(res.q_star - s.q) / l2_norm(s.q) <= 1e-6);
}

TEST_CASE("single iteration equals one least-squares step plus clip") {
    auto s = setup(24);
    auto E1 = to_complex(forward_energy(s.q, k, s.g1));
    auto q0 = s.q * 1.2;
    RefineOptions opt;
    opt.max_iters = 1;
    DerivativeFactory fac = [&](const RealField &q) { return DerivativeOperator(q, k, s.g1); };
    auto it = iterate_refinement(fac, q0, E1, opt);
    auto one = least_squares_step(DerivativeOperator(q0, k, s.g1), q0, E1, opt);
    CHECK(it.q_star.values() == one.q_star.values());
    CHECK(it.q_star_clipped.values() == clip(one.q_star, opt.q_min, opt.q_max).values());
}

TEST_CASE("Gauss-Newton from the exact-formula guess converges on noiseless data") {
    auto s = setup(128);
    auto ms = measure(s.q, k, s.fam);
    auto rec = reconstruct(ms.E, k);
    RefineOptions opt;
    opt.max_iters = 5;
    DerivativeFactory fac = [&](const RealField &q) { return DerivativeOperator(q, k, s.g1); };
    auto res = iterate_refinement(fac, rec.q_hat, ms.E[0], opt);
    CHECK(l2_norm(res.q_star_clipped - s.q) / l2_norm(s.q) <= 0.01);
    CHECK(res.outer_iterations <= 5);
    for (std::size_t i = 2; i < res.residual_history.size(); ++i) {
        CHECK(res.residual_history[i] <= res.residual_history[i - 1]);
    }
}

TEST_CASE("noisy refinement: J decreases after the first iterate") {
    auto s = setup(64);
    auto ms = measure(s.q, k, s.fam);
    NoiseSpec ns;
    ns.delta = 4 * s.g.spacing(0);
    auto noisy = corrupt(ms, ns, 1);
    auto qs = reconstruct(noisy.Es, k).q_hat;
    RefineOptions opt;
    opt.max_iters = 3;
    DerivativeFactory fac = [&](const RealField &q) { return DerivativeOperator(q, k, s.g1); };
    auto res = iterate_refinement(fac, qs, noisy.Es[0], opt);
    REQUIRE(res.residual_history.size() >= 2);
    for (std::size_t i = 2; i < res.residual_history.size(); ++i) {
        CHECK(res.residual_history[i] <= res.residual_history[i - 1]);
    }
    CHECK(l2_norm(res.q_star_clipped - s.q) <= l2_norm(res.q_star - s.q));
}
