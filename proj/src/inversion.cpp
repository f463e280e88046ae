#include "qtat/inversion.hpp"

#include <algorithm>
#include <deque>

#include <Eigen/Dense>

namespace qtat {

double coverage(const Mask &mask) {
    if (mask.empty()) return 0.0;
    return static_cast<double>(std::count(mask.begin(), mask.end(), true)) / static_cast<double>(mask.size());
}

double coverage(const Mask &mask, const Grid &grid, std::size_t min_depth) {
    std::size_t total = 0, valid = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid.depth(i) < min_depth) continue;
        ++total;
        if (mask[i]) ++valid;
    }
    return total ? static_cast<double>(valid) / static_cast<double>(total) : 0.0;
}

RatioField form_ratios(const std::vector<ComplexField> &E, double e_floor) {
    if (E.size() < 2) throw ConfigError("need at least two energies");
    const Grid &g = E.front().grid();
    for (const auto &e : E) e.check_same(E.front());
    double e_max = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) e_max = std::max(e_max, E[0][i].real());
    const double floor = e_floor * e_max;
    RatioField r;
    r.mask.assign(g.size(), true);
    for (std::size_t j = 1; j < E.size(); ++j) r.alpha.emplace_back(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double e1 = E[0][i].real();
        if (!(e1 >= floor) || !(e1 > 0.0)) {
            r.mask[i] = false;
            ++r.floored;
            e1 = floor > 0.0 ? floor : 1.0;
        }
        // Noiseless E_1 is real; noisy E_1 keeps its measured complex value.
        const complexd denom = r.mask[i] ? E[0][i] : complexd(e1, 0.0);
        for (std::size_t j = 1; j < E.size(); ++j) r.alpha[j - 1][i] = E[j][i] / denom;
    }
    return r;
}

MatrixField assemble_A_and_rhs(const std::vector<ComplexField> &alpha, int accuracy) {
    if (alpha.empty()) throw ConfigError("no ratio fields");
    const int d = alpha.front().grid().dimension();
    if (static_cast<int>(alpha.size()) != d) throw ConfigError("need d ratio fields");
    MatrixField m;
    for (const auto &a : alpha) {
        m.rows.push_back(gradient(a, accuracy));
        m.rhs.push_back(laplacian(a, accuracy));
    }
    return m;
}

PointwiseSolution solve_for_a(const MatrixField &sys, double cond_max, const Mask &mask, double tolerance) {
    const Grid &g = sys.rhs.front().grid();
    const int d = g.dimension();
    if (static_cast<int>(sys.rows.size()) != d || static_cast<int>(sys.rhs.size()) != d) {
        throw ConfigError("matrix field must be d x d");
    }
    if (!mask.empty() && mask.size() != g.size()) throw ConfigError("mask size does not match grid");
    PointwiseSolution out{ComplexVectorField(g), RealField(g), mask.empty() ? Mask(g.size(), true) : mask, 0.0};
    Eigen::MatrixXcd A(d, d);
    Eigen::VectorXcd r(d);
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (int j = 0; j < d; ++j) {
            for (int l = 0; l < d; ++l) A(j, l) = sys.rows[j][l][i];
            r(j) = sys.rhs[j][i];
        }
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(A);
        const auto &sv = svd.singularValues();
        const double cond = sv(d - 1) > 0.0 ? sv(0) / sv(d - 1) : std::numeric_limits<double>::infinity();
        out.cond_A[i] = std::isfinite(cond) ? cond : std::numeric_limits<double>::max();
        if (!(cond <= cond_max)) {
            out.mask[i] = false;
            continue;
        }
        const Eigen::VectorXcd x = A.partialPivLu().solve(r);
        const double nr = r.norm();
        const double res = nr > 0.0 ? (A * x - r).norm() / nr : (A * x).norm();
        if (!(res <= tolerance) || !x.allFinite()) {
            out.mask[i] = false;
            continue;
        }
        for (int l = 0; l < d; ++l) out.a[l][i] = x(l);
        if (out.mask[i]) out.max_residual = std::max(out.max_residual, res);
    }
    return out;
}

template <typename T>
Field<T> nearest_fill(const Field<T> &f, const Mask &valid) {
    const Grid &g = f.grid();
    if (valid.size() != g.size()) throw ConfigError("mask size does not match grid");
    Field<T> out = f;
    std::vector<std::size_t> source(g.size(), g.size());
    std::deque<std::size_t> queue;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (valid[i]) {
            source[i] = i;
            queue.push_back(i);
        }
    }
    if (queue.empty()) {
        for (auto &v : out.values()) v = T{};
        return out;
    }
    while (!queue.empty()) {
        const std::size_t i = queue.front();
        queue.pop_front();
        for (int a = 0; a < g.dimension(); ++a) {
            const std::size_t s = g.stride(a);
            const std::size_t c = (i / s) % g.count(a);
            for (int dir : {-1, 1}) {
                if ((dir < 0 && c == 0) || (dir > 0 && c + 1 == g.count(a))) continue;
                const std::size_t nb = dir < 0 ? i - s : i + s;
                if (source[nb] != g.size()) continue;
                source[nb] = source[i];
                out[nb] = f[source[i]];
                queue.push_back(nb);
            }
        }
    }
    return out;
}

template RealField nearest_fill(const RealField &, const Mask &);
template ComplexField nearest_fill(const ComplexField &, const Mask &);

RealField exact_q(const ComplexVectorField &a, double k, int accuracy) {
    if (!(k > 0.0)) throw ParameterError("wavenumber k must be positive");
    const RealVectorField re = real_part(a);
    const RealVectorField im = imag_part(a);
    const RealField div = divergence(im, accuracy);
    const RealField dot_ri = dot(re, im);
    RealField q(a.grid());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = (-dot_ri[i] + div[i]) / (2.0 * k);
    return q;
}

RealVectorField beta_from_a(const ComplexVectorField &a, const ComplexField &E1, const RealField &q) {
    RealVectorField beta = imag_part(a);
    for (auto &c : beta.components) {
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i] = q[i] != 0.0 ? -E1[i].real() * c[i] / (2.0 * q[i]) : 0.0;
        }
    }
    return beta;
}

ExactReconstruction reconstruct(const std::vector<ComplexField> &E, double k, const InversionOptions &opt) {
    const Grid &g = E.front().grid();
    if (static_cast<int>(E.size()) != g.dimension() + 1) throw ConfigError("need d+1 energies");
    const RatioField ratios = form_ratios(E, opt.e_floor);
    const MatrixField sys = assemble_A_and_rhs(ratios.alpha, opt.stencil_accuracy);
    const PointwiseSolution sol = solve_for_a(sys, opt.cond_max, ratios.mask, opt.solve_tolerance);

    ComplexVectorField a = sol.a;
    for (auto &c : a.components) c = nearest_fill(c, sol.mask);
    RealField q = exact_q(a, k, opt.stencil_accuracy);

    ExactReconstruction rec;
    rec.mask = sol.mask;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g.depth(i) < opt.boundary_layer || g.edge_distance(i) < opt.corner_radius || !std::isfinite(q[i])) {
            rec.mask[i] = false;
        }
    }
    rec.q_hat = nearest_fill(q, rec.mask);
    rec.beta_from_a = beta_from_a(a, E[0], rec.q_hat);
    rec.coverage_interior = coverage(sol.mask, g, 1);
    rec.max_solve_residual = sol.max_residual;
    rec.floored = ratios.floored;
    std::vector<double> conds(sol.cond_A.values());
    std::sort(conds.begin(), conds.end());
    rec.median_cond = conds[conds.size() / 2];
    rec.max_cond = conds.back();
    return rec;
}

double check_divergence_identity(const ComplexField &u1, const RealField &q, double k, int accuracy,
                                 double corner_radius) {
    if (u1.grid() != q.grid()) throw ConfigError("u_1 and q live on different grids");
    const ComplexVectorField grad = gradient(u1, accuracy);
    RealVectorField beta(u1.grid());
    for (int a = 0; a < u1.grid().dimension(); ++a) {
        for (std::size_t i = 0; i < u1.size(); ++i) beta[a][i] = (std::conj(u1[i]) * grad[a][i]).imag();
    }
    const RealField div = divergence(beta, accuracy);
    const Grid &g = u1.grid();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g.depth(i) < 2 || g.edge_distance(i) < corner_radius) continue;
        const double ke = k * q[i] * std::norm(u1[i]);
        num += std::pow(div[i] + ke, 2);
        den += ke * ke;
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

ExactReconstruction initial_guess(const NoisyMeasurementSet &noisy, double k, const InversionOptions &options) {
    if (noisy.Es.empty()) throw ConfigError("smoothed data missing");
    return reconstruct(noisy.Es, k, options);
}

}  // namespace qtat
