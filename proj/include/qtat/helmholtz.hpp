#pragma once

#include <memory>
#include <vector>

#include <Eigen/Sparse>

#include "qtat/grid.hpp"

namespace qtat {

// Values of a boundary datum g at grid.boundary_nodes(), in that order.
class BoundaryTrace {
public:
    BoundaryTrace() = default;
    explicit BoundaryTrace(const Grid &grid, complexd fill = 0.0);
    BoundaryTrace(const Grid &grid, std::vector<complexd> values);

    // fn(position, outward_normal) evaluated at every boundary node.
    template <typename Fn>
    static BoundaryTrace sample(const Grid &grid, Fn &&fn) {
        BoundaryTrace g(grid);
        const auto &nodes = grid.boundary_nodes();
        for (std::size_t b = 0; b < nodes.size(); ++b) {
            g.values_[b] = fn(grid.position(nodes[b]), grid.outward_normal(nodes[b]));
        }
        return g;
    }

    // Keeps the boundary values of f, ignores the interior.
    static BoundaryTrace from_field(const ComplexField &f);
    // Zero in the interior.
    ComplexField to_field() const;

    const Grid &grid() const { return grid_; }
    std::size_t size() const { return values_.size(); }
    complexd &operator[](std::size_t b) { return values_[b]; }
    const complexd &operator[](std::size_t b) const { return values_[b]; }
    const std::vector<complexd> &values() const { return values_; }

    BoundaryTrace &operator+=(const BoundaryTrace &o);
    BoundaryTrace &operator*=(complexd s);
    friend BoundaryTrace operator+(BoundaryTrace a, const BoundaryTrace &b) { return a += b; }
    friend BoundaryTrace operator*(complexd s, BoundaryTrace a) { return a *= s; }

private:
    Grid grid_;
    std::vector<complexd> values_;
};

// (Delta + k^2 + i k q) u = f in X,  nu . grad u - i k u = g on the boundary.
struct HelmholtzProblem {
    Grid grid;
    double k = 0.0;
    RealField q;
    BoundaryTrace g;
    ComplexField f;

    // Source-free problem.
    static HelmholtzProblem with_boundary(const RealField &q, double k, const BoundaryTrace &g);
    // Homogeneous Robin data.
    static HelmholtzProblem with_source(const RealField &q, double k, const ComplexField &f);
};

struct SolveOptions {
    enum class Method { Direct, Iterative };
    Method method = Method::Direct;
    double direct_tolerance = 1e-10;
    double iterative_tolerance = 1e-8;
    int max_iterations = 5000;
};

struct SolveReport {
    double residual_norm = 0.0;
    int iterations = 0;
    bool bounds_evaluated = false;
    bool bound_299_ok = false;
    bool bound_2_1010_ok = false;
};

using SparseMatrix = Eigen::SparseMatrix<complexd, Eigen::ColMajor, int>;

struct LinearSystem {
    SparseMatrix matrix;
    Eigen::VectorXcd rhs;
};

// True for rows that carry the PDE (interior and single-face nodes). Edge and
// corner rows carry the Robin condition itself, discretised one-sidedly with
// the averaged normal.
bool is_pde_row(const Grid &grid, std::size_t index);

// Interior rows: 5/7-point Laplacian + (k^2 + i k q). Single-face rows: the
// ghost node across the face is eliminated with the centred Robin condition.
SparseMatrix assemble_operator(const Grid &grid, double k, const RealField &q);
Eigen::VectorXcd assemble_load(const Grid &grid, double k, const ComplexField &f, const BoundaryTrace &g);
LinearSystem assemble(const HelmholtzProblem &problem);

// Factorised Helmholtz operator for a fixed (grid, k, q); reusable across
// right-hand sides and for adjoint solves. Immutable once built.
class HelmholtzOperator {
public:
    HelmholtzOperator(const Grid &grid, double k, const RealField &q, SolveOptions options = {});

    ComplexField solve(const ComplexField &f, const BoundaryTrace &g, SolveReport *report = nullptr) const;
    // A x = b and A^H x = b for raw row-space vectors.
    Eigen::VectorXcd solve_vector(const Eigen::VectorXcd &b, SolveReport *report = nullptr) const;
    Eigen::VectorXcd solve_adjoint(const Eigen::VectorXcd &b, SolveReport *report = nullptr) const;

    const SparseMatrix &matrix() const { return matrix_; }
    const Grid &grid() const { return grid_; }
    double k() const { return k_; }
    const RealField &q() const { return q_; }

private:
    struct Impl;
    Grid grid_;
    double k_;
    RealField q_;
    SolveOptions options_;
    SparseMatrix matrix_;
    std::shared_ptr<const Impl> impl_;
};

struct HelmholtzSolution {
    ComplexField u;
    SolveReport report;
};

HelmholtzSolution solve(const HelmholtzProblem &problem, SolveOptions options = {});

struct BoundCheck {
    bool bound_299_ok = true;
    bool bound_2_1010_ok = true;
    // lhs / rhs of each inequality (0 when f = 0).
    double ratio_299 = 0.0;
    double ratio_2_1010 = 0.0;
};

// L2 and H1 a-priori bounds for the homogeneous-Robin source problem:
//   ||u|| <= ||f|| / (k inf q),  ||u||_H1 <= sqrt(k^2 + 1 + k inf q) / (k inf q) ||f||.
// slack is the relative tolerance granted to the discrete norms.
BoundCheck check_prop26_bounds(const ComplexField &u, const ComplexField &f, double k, const RealField &q,
                               double slack = 0.05);

}  // namespace qtat
