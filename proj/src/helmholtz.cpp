#include "qtat/helmholtz.hpp"

#include <algorithm>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

namespace qtat {

using namespace std::complex_literals;

BoundaryTrace::BoundaryTrace(const Grid &grid, complexd fill)
    : grid_(grid), values_(grid.boundary_nodes().size(), fill) {}

BoundaryTrace::BoundaryTrace(const Grid &grid, std::vector<complexd> values)
    : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.boundary_nodes().size()) {
        throw ConfigError("boundary trace size does not match the grid's boundary node count");
    }
}

BoundaryTrace BoundaryTrace::from_field(const ComplexField &f) {
    BoundaryTrace g(f.grid());
    const auto &nodes = f.grid().boundary_nodes();
    for (std::size_t b = 0; b < nodes.size(); ++b) g.values_[b] = f[nodes[b]];
    return g;
}

ComplexField BoundaryTrace::to_field() const {
    ComplexField out(grid_);
    const auto &nodes = grid_.boundary_nodes();
    for (std::size_t b = 0; b < nodes.size(); ++b) out[nodes[b]] = values_[b];
    return out;
}

BoundaryTrace &BoundaryTrace::operator+=(const BoundaryTrace &o) {
    if (grid_ != o.grid_) throw ConfigError("boundary traces live on different grids");
    for (std::size_t b = 0; b < values_.size(); ++b) values_[b] += o.values_[b];
    return *this;
}

BoundaryTrace &BoundaryTrace::operator*=(complexd s) {
    for (auto &v : values_) v *= s;
    return *this;
}

HelmholtzProblem HelmholtzProblem::with_boundary(const RealField &q, double k, const BoundaryTrace &g) {
    return {q.grid(), k, q, g, ComplexField(q.grid())};
}

HelmholtzProblem HelmholtzProblem::with_source(const RealField &q, double k, const ComplexField &f) {
    return {q.grid(), k, q, BoundaryTrace(q.grid()), f};
}

bool is_pde_row(const Grid &grid, std::size_t index) { return grid.face_count(index) <= 1; }

namespace {

void validate(const Grid &grid, double k, const RealField &q) {
    if (!(k > 0.0) || !std::isfinite(k)) throw ParameterError("wavenumber k must be positive");
    if (q.grid() != grid) throw ConfigError("absorption field is not on the problem grid");
    if (!q.all_finite()) throw ParameterError("absorption field has non-finite entries");
}

// Boundary-condition rows are scaled by this factor so their magnitude is
// comparable with the 1/h^2 PDE rows.
double bc_row_scale(const Grid &grid) { return 2.0 / grid.min_spacing(); }

}  // namespace

SparseMatrix assemble_operator(const Grid &grid, double k, const RealField &q) {
    validate(grid, k, q);
    const int d = grid.dimension();
    std::vector<Eigen::Triplet<complexd, int>> triplets;
    triplets.reserve(grid.size() * (2 * d + 1));
    const double bc_scale = bc_row_scale(grid);

    for (std::size_t idx = 0; idx < grid.size(); ++idx) {
        const int row = static_cast<int>(idx);
        const int faces = grid.face_count(idx);
        if (faces <= 1) {
            complexd diag = k * k + 1.0i * k * q[idx];
            for (int a = 0; a < d; ++a) {
                const std::size_t n = grid.count(a);
                const std::size_t s = grid.stride(a);
                const std::size_t i = (idx / s) % n;
                const double h = grid.spacing(a);
                const double inv_h2 = 1.0 / (h * h);
                if (i == 0 || i + 1 == n) {
                    // Ghost u_out = u_in + 2h (i k u + g).
                    const std::size_t inner = (i == 0) ? idx + s : idx - s;
                    triplets.emplace_back(row, static_cast<int>(inner), 2.0 * inv_h2);
                    diag += -2.0 * inv_h2 + 2.0i * k / h;
                } else {
                    triplets.emplace_back(row, static_cast<int>(idx - s), inv_h2);
                    triplets.emplace_back(row, static_cast<int>(idx + s), inv_h2);
                    diag += -2.0 * inv_h2;
                }
            }
            triplets.emplace_back(row, row, diag);
        } else {
            // nu . grad u - i k u = g with one-sided second-order normal derivatives.
            const double w = bc_scale / std::sqrt(static_cast<double>(faces));
            complexd diag = -1.0i * k * bc_scale;
            for (int a = 0; a < d; ++a) {
                const std::size_t n = grid.count(a);
                const std::size_t s = grid.stride(a);
                const std::size_t i = (idx / s) % n;
                if (i != 0 && i + 1 != n) continue;
                const double c = w / (2.0 * grid.spacing(a));
                const std::size_t in1 = (i == 0) ? idx + s : idx - s;
                const std::size_t in2 = (i == 0) ? idx + 2 * s : idx - 2 * s;
                diag += 3.0 * c;
                triplets.emplace_back(row, static_cast<int>(in1), -4.0 * c);
                triplets.emplace_back(row, static_cast<int>(in2), c);
            }
            triplets.emplace_back(row, row, diag);
        }
    }
    const int n = static_cast<int>(grid.size());
    SparseMatrix m(n, n);
    m.setFromTriplets(triplets.begin(), triplets.end());
    m.makeCompressed();
    return m;
}

Eigen::VectorXcd assemble_load(const Grid &grid, double k, const ComplexField &f, const BoundaryTrace &g) {
    if (f.grid() != grid || g.grid() != grid) throw ConfigError("source or boundary data not on the problem grid");
    if (!(k > 0.0)) throw ParameterError("wavenumber k must be positive");
    Eigen::VectorXcd b(grid.size());
    for (std::size_t idx = 0; idx < grid.size(); ++idx) b[idx] = f[idx];
    const auto &nodes = grid.boundary_nodes();
    const double bc_scale = bc_row_scale(grid);
    for (std::size_t bi = 0; bi < nodes.size(); ++bi) {
        const std::size_t idx = nodes[bi];
        if (grid.face_count(idx) == 1) {
            for (int a = 0; a < grid.dimension(); ++a) {
                const std::size_t i = (idx / grid.stride(a)) % grid.count(a);
                if (i == 0 || i + 1 == grid.count(a)) b[idx] -= 2.0 * g[bi] / grid.spacing(a);
            }
        } else {
            b[idx] = bc_scale * g[bi];
        }
    }
    return b;
}

LinearSystem assemble(const HelmholtzProblem &p) {
    return {assemble_operator(p.grid, p.k, p.q), assemble_load(p.grid, p.k, p.f, p.g)};
}

struct HelmholtzOperator::Impl {
    // adjoint() is non-const in Eigen but only builds a view.
    mutable Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
    bool direct = true;
    SparseMatrix adjoint;
    Eigen::BiCGSTAB<SparseMatrix, Eigen::IncompleteLUT<complexd>> krylov;
    Eigen::BiCGSTAB<SparseMatrix, Eigen::IncompleteLUT<complexd>> krylov_adjoint;
};

HelmholtzOperator::HelmholtzOperator(const Grid &grid, double k, const RealField &q, SolveOptions options)
    : grid_(grid), k_(k), q_(q), options_(options), matrix_(assemble_operator(grid, k, q)) {
    auto impl = std::make_shared<Impl>();
    if (options.method == SolveOptions::Method::Direct) {
        impl->lu.analyzePattern(matrix_);
        impl->lu.factorize(matrix_);
        if (impl->lu.info() != Eigen::Success) {
            throw SolverError("sparse LU factorisation failed: " + impl->lu.lastErrorMessage(), 1.0);
        }
    } else {
        impl->direct = false;
        impl->adjoint = matrix_.adjoint();
        for (auto *s : {&impl->krylov, &impl->krylov_adjoint}) {
            s->setTolerance(options.iterative_tolerance * 0.5);
            s->setMaxIterations(options.max_iterations);
            s->preconditioner().setDroptol(1e-4);
            s->preconditioner().setFillfactor(20);
        }
        impl->krylov.compute(matrix_);
        impl->krylov_adjoint.compute(impl->adjoint);
        if (impl->krylov.info() != Eigen::Success || impl->krylov_adjoint.info() != Eigen::Success) {
            throw SolverError("incomplete LU preconditioner setup failed", 1.0);
        }
    }
    impl_ = impl;
}

namespace {

double relative_residual(const SparseMatrix &a, const Eigen::VectorXcd &x, const Eigen::VectorXcd &b) {
    const double nb = b.norm();
    if (nb == 0.0) return x.norm() == 0.0 ? 0.0 : (a * x).norm();
    return (a * x - b).norm() / nb;
}

}  // namespace

Eigen::VectorXcd HelmholtzOperator::solve_vector(const Eigen::VectorXcd &b, SolveReport *report) const {
    Eigen::VectorXcd x;
    int iterations = 0;
    double tol;
    if (impl_->direct) {
        x = impl_->lu.solve(b);
        tol = options_.direct_tolerance;
    } else {
        x = impl_->krylov.solve(b);
        iterations = static_cast<int>(impl_->krylov.iterations());
        tol = options_.iterative_tolerance;
    }
    const double res = relative_residual(matrix_, x, b);
    if (!(res <= tol)) throw SolverError("Helmholtz solve did not reach the residual tolerance", res);
    if (report) {
        report->residual_norm = res;
        report->iterations = iterations;
    }
    return x;
}

Eigen::VectorXcd HelmholtzOperator::solve_adjoint(const Eigen::VectorXcd &b, SolveReport *report) const {
    Eigen::VectorXcd x;
    int iterations = 0;
    double tol;
    if (impl_->direct) {
        x = impl_->lu.adjoint().solve(b);
        tol = options_.direct_tolerance;
    } else {
        x = impl_->krylov_adjoint.solve(b);
        iterations = static_cast<int>(impl_->krylov_adjoint.iterations());
        tol = options_.iterative_tolerance;
    }
    const double nb = b.norm();
    const double res = nb == 0.0 ? 0.0 : (matrix_.adjoint() * x - b).norm() / nb;
    if (!(res <= tol)) throw SolverError("adjoint Helmholtz solve did not reach the residual tolerance", res);
    if (report) {
        report->residual_norm = res;
        report->iterations = iterations;
    }
    return x;
}

ComplexField HelmholtzOperator::solve(const ComplexField &f, const BoundaryTrace &g, SolveReport *report) const {
    Eigen::VectorXcd x = solve_vector(assemble_load(grid_, k_, f, g), report);
    ComplexField u(grid_);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = x[i];
    return u;
}

HelmholtzSolution solve(const HelmholtzProblem &problem, SolveOptions options) {
    HelmholtzOperator op(problem.grid, problem.k, problem.q, options);
    HelmholtzSolution sol;
    sol.u = op.solve(problem.f, problem.g, &sol.report);
    const bool homogeneous_robin =
        std::all_of(problem.g.values().begin(), problem.g.values().end(), [](complexd v) { return v == 0.0; });
    if (homogeneous_robin && min_value(problem.q) > 0.0) {
        const BoundCheck bc = check_prop26_bounds(sol.u, problem.f, problem.k, problem.q);
        sol.report.bounds_evaluated = true;
        sol.report.bound_299_ok = bc.bound_299_ok;
        sol.report.bound_2_1010_ok = bc.bound_2_1010_ok;
    }
    return sol;
}

BoundCheck check_prop26_bounds(const ComplexField &u, const ComplexField &f, double k, const RealField &q,
                               double slack) {
    if (!(k > 0.0)) throw ParameterError("wavenumber k must be positive");
    const double qmin = min_value(q);
    if (!(qmin > 0.0)) throw ParameterError("bound diagnostics need min q > 0");
    u.check_same(f);
    BoundCheck out;
    const double nf = l2_norm(f);
    if (nf == 0.0) return out;
    const double nu = l2_norm(u);
    double grad2 = 0.0;
    for (const auto &c : gradient(u).components) grad2 += std::pow(l2_norm(c), 2);
    const double h1 = std::sqrt(nu * nu + grad2);
    const double kq = k * qmin;
    out.ratio_299 = nu / (nf / kq);
    out.ratio_2_1010 = h1 / (std::sqrt(k * k + 1.0 + kq) / kq * nf);
    out.bound_299_ok = out.ratio_299 <= 1.0 + slack;
    out.bound_2_1010_ok = out.ratio_2_1010 <= 1.0 + slack;
    return out;
}

}  // namespace qtat
