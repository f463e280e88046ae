#include "qtat/refine.hpp"

#include <algorithm>
#include <optional>

namespace qtat {

using namespace std::complex_literals;

RealField forward_energy(const RealField &q, double k, const BoundaryTrace &g, SolveOptions options) {
    HelmholtzOperator op(q.grid(), k, q, options);
    const ComplexField u = op.solve(ComplexField(q.grid()), g);
    RealField e(q.grid());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = q[i] * std::norm(u[i]);
    return e;
}

DerivativeOperator::DerivativeOperator(const RealField &q_ref, double k, const BoundaryTrace &g, SolveOptions options)
    : q_(q_ref), k_(k), op_(q_ref.grid(), k, q_ref, options), u_(q_ref.grid()) {
    if (g.grid() != q_ref.grid()) throw ConfigError("boundary data not on the grid of q");
    SolveReport report;
    u_ = op_.solve(ComplexField(q_ref.grid()), g, &report);
    pde_row_.resize(grid().size());
    for (std::size_t i = 0; i < grid().size(); ++i) pde_row_[i] = is_pde_row(grid(), i);
}

RealField DerivativeOperator::energy() const {
    RealField e(grid());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = q_[i] * std::norm(u_[i]);
    return e;
}

ComplexField DerivativeOperator::sensitivity(const RealField &rho) const {
    if (rho.grid() != grid()) throw ConfigError("rho not on the linearisation grid");
    ComplexField src(grid());
    for (std::size_t i = 0; i < src.size(); ++i) src[i] = -1.0i * k_ * rho[i] * u_[i];
    return op_.solve(src, BoundaryTrace(grid()));
}

RealField DerivativeOperator::apply(const RealField &rho, bool with_sensitivity) const {
    if (rho.grid() != grid()) throw ConfigError("rho not on the linearisation grid");
    RealField out(grid());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rho[i] * std::norm(u_[i]);
    if (!with_sensitivity) return out;
    const ComplexField v = sensitivity(rho);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += 2.0 * q_[i] * (u_[i] * std::conj(v[i])).real();
    return out;
}

RealField DerivativeOperator::apply_adjoint(const RealField &r, bool with_sensitivity) const {
    if (r.grid() != grid()) throw ConfigError("r not on the linearisation grid");
    RealField out(grid());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = r[i] * std::norm(u_[i]);
    if (!with_sensitivity) return out;
    Eigen::VectorXcd y(grid().size());
    for (std::size_t i = 0; i < out.size(); ++i) y[i] = 2.0 * q_[i] * u_[i] * r[i];
    const Eigen::VectorXcd z = op_.solve_adjoint(y);
    // The load vector carries the source only on PDE rows.
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (pde_row_[i]) out[i] += (-1.0i * k_ * u_[i] * std::conj(z[i])).real();
    }
    return out;
}

RealField DerivativeOperator::apply(const RealField &rho) const { return apply(rho, true); }
RealField DerivativeOperator::apply_adjoint(const RealField &r) const { return apply_adjoint(r, true); }

RealField apply_DF(const DerivativeOperator &op, const RealField &rho) { return op.apply(rho); }
RealField apply_DF_adjoint(const DerivativeOperator &op, const RealField &r) { return op.apply_adjoint(r); }

RealField clip(const RealField &q, double q_min, double q_max) {
    if (!(q_min < q_max)) throw ParameterError("clip needs q_min < q_max");
    RealField out(q);
    for (auto &v : out.values()) v = std::clamp(v, q_min, q_max);
    return out;
}

double eta_constant(int d, double gamma, double radius) {
    if (d != 2 && d != 3) throw ConfigError("eta is defined here for d = 2 or 3");
    if (!(gamma > 0.0)) throw ParameterError("star-shape constant must be positive");
    const double a = 1.0 + 1.0 / gamma;
    return std::sqrt((8.0 * a * a + 2.0 * d + 29.0) / (11.0 - 2.0 * d)) * std::max(radius, 1.0);
}

EtaReport eta_and_condition(const RealField &q, const Grid &grid, double gamma, double min_abs_u) {
    EtaReport r;
    r.eta = eta_constant(grid.dimension(), gamma, grid.radius());
    const double qinf = max_abs(q);
    r.condition_423_ok = r.eta * qinf < 0.25;
    if (r.condition_423_ok && min_abs_u > 0.0) {
        r.inv_bound = 1.0 / (min_abs_u * min_abs_u * std::sqrt(1.0 - 4.0 * r.eta * qinf));
    }
    return r;
}

double coercivity_ratio(const DerivativeOperator &op, const RealField &rho) {
    double umin = std::numeric_limits<double>::infinity();
    for (const auto &v : op.u_ref().values()) umin = std::min(umin, std::abs(v));
    const double n_df = l2_norm(op.apply(rho));
    const double n_rho = l2_norm(rho);
    return (n_df * n_df) / (std::pow(umin, 4) * n_rho * n_rho);
}

double discrepancy(const RealField &F_q, const RealField &target) {
    const double n = l2_norm(F_q - target);
    return n * n;
}

namespace {

void axpy(RealField &y, double a, const RealField &x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

RefinementResult least_squares_step(const DerivativeOperator &op, const RealField &q_s, const ComplexField &E1_s,
                                    const RefineOptions &opt) {
    if (!q_s.all_finite()) throw ParameterError("initial guess has non-finite values");
    const Grid &g = op.grid();
    RealField target = real_part(E1_s);
    RealField b = target - op.energy();

    RefinementResult res;
    double umin = std::numeric_limits<double>::infinity();
    for (const auto &v : op.u_ref().values()) umin = std::min(umin, std::abs(v));
    const EtaReport eta = eta_and_condition(q_s, g, g.star_constant(), umin);
    res.eta = eta.eta;
    res.condition_423_ok = eta.condition_423_ok;

    RealField c(g);
    const double nb = l2_norm(b);
    if (nb == 0.0) {
        res.q_star = q_s;
        res.q_star_clipped = clip(q_s, opt.q_min, opt.q_max);
        return res;
    }
    RealField s = op.apply_adjoint(b);
    const double ns0 = l2_norm(s);
    res.lambda = opt.lambda_rel * ns0 / nb;
    const double lambda = res.lambda;
    RealField r = b;
    RealField p = s;
    double gamma = inner(s, s);
    RealField best = c;
    double best_rel = 1.0;
    int it = 0;
    for (; it < opt.cg_max_iterations && best_rel > opt.cg_tolerance; ++it) {
        const RealField ap = op.apply(p);
        const double delta = inner(ap, ap) + lambda * inner(p, p);
        if (!(delta > 0.0)) break;
        const double alpha = gamma / delta;
        axpy(c, alpha, p);
        axpy(r, -alpha, ap);
        s = op.apply_adjoint(r);
        axpy(s, -lambda, c);
        const double gamma_new = inner(s, s);
        const double rel = std::sqrt(gamma_new) / ns0;
        if (rel < best_rel) {
            best_rel = rel;
            best = c;
        }
        const double beta = gamma_new / gamma;
        gamma = gamma_new;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = s[i] + beta * p[i];
    }
    res.ls_iterations = it;
    res.cg_relative_residual = best_rel;
    res.stagnated = best_rel > opt.cg_tolerance;
    res.q_star = q_s + best;
    res.q_star_clipped = clip(res.q_star, opt.q_min, opt.q_max);
    return res;
}

RefinementResult iterate_refinement(const DerivativeFactory &factory, const RealField &q0, const ComplexField &E1_s,
                                    const RefineOptions &opt) {
    if (opt.max_iters < 1) throw ConfigError("max_iters must be at least 1");
    const RealField target = real_part(E1_s);
    RefinementResult out;
    out.q_star = q0;
    out.q_star_clipped = clip(q0, opt.q_min, opt.q_max);

    std::optional<DerivativeOperator> cur;
    try {
        cur.emplace(factory(q0));
    } catch (const SolverError &) {
        out.solve_failed = true;
        return out;
    }
    RealField q_cur = q0;
    double j_cur = discrepancy(cur->energy(), target);
    out.residual_history.push_back(std::sqrt(j_cur));

    for (int iter = 0; iter < opt.max_iters; ++iter) {
        RefinementResult step = least_squares_step(*cur, q_cur, E1_s, opt);
        out.ls_iterations += step.ls_iterations;
        out.stagnated = out.stagnated || step.stagnated;
        out.lambda = step.lambda;
        out.cg_relative_residual = step.cg_relative_residual;
        if (iter == 0) {
            out.eta = step.eta;
            out.condition_423_ok = step.condition_423_ok;
        }
        const RealField c = step.q_star - q_cur;
        bool accepted = false;
        double t = 1.0;
        for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
            RealField unclipped = q_cur;
            axpy(unclipped, t, c);
            RealField cand = clip(unclipped, opt.q_min, opt.q_max);
            std::optional<DerivativeOperator> next;
            try {
                next.emplace(factory(cand));
            } catch (const SolverError &) {
                out.solve_failed = true;
                return out;
            }
            const double j_new = discrepancy(next->energy(), target);
            // The first step is always taken; later ones must not increase J.
            if (iter == 0 || j_new <= j_cur) {
                const double decrease = j_cur > 0.0 ? (j_cur - j_new) / j_cur : 0.0;
                out.q_star = std::move(unclipped);
                out.q_star_clipped = cand;
                out.residual_history.push_back(std::sqrt(j_new));
                ++out.outer_iterations;
                q_cur = std::move(cand);
                cur.emplace(std::move(*next));
                accepted = true;
                const bool small = iter > 0 && decrease < opt.min_decrease;
                j_cur = std::min(j_cur, j_new);
                if (iter == 0) j_cur = j_new;
                if (small) return out;
                break;
            }
        }
        if (!accepted) break;
    }
    return out;
}

}  // namespace qtat
