#pragma once

#include <functional>
#include <vector>

#include "qtat/helmholtz.hpp"

namespace qtat {

// F[q] = q |u[q]|^2 with u[q] the solution for boundary data g.
RealField forward_energy(const RealField &q, double k, const BoundaryTrace &g, SolveOptions options = {});

// Linearisation of F at q_ref: DF rho = rho |u|^2 + 2 q Re(u conj(v)), with
// (Delta + k^2 + i k q) v = -i k rho u and homogeneous Robin data.
class DerivativeOperator {
public:
    DerivativeOperator(const RealField &q_ref, double k, const BoundaryTrace &g, SolveOptions options = {});

    RealField apply(const RealField &rho) const;
    // Adjoint in the nodal inner product: |u|^2 r + Re(-i k u conj(z)) on PDE
    // rows, z = A^{-H}(2 q u r).
    RealField apply_adjoint(const RealField &r) const;
    // With the sensitivity term switched off both reduce to rho |u|^2.
    RealField apply(const RealField &rho, bool sensitivity) const;
    RealField apply_adjoint(const RealField &r, bool sensitivity) const;

    // Sensitivity solution v(rho).
    ComplexField sensitivity(const RealField &rho) const;

    const RealField &q_ref() const { return q_; }
    const ComplexField &u_ref() const { return u_; }
    // F[q_ref].
    RealField energy() const;
    double k() const { return k_; }
    const Grid &grid() const { return q_.grid(); }

private:
    RealField q_;
    double k_;
    HelmholtzOperator op_;
    ComplexField u_;
    std::vector<bool> pde_row_;
};

RealField apply_DF(const DerivativeOperator &op, const RealField &rho);
RealField apply_DF_adjoint(const DerivativeOperator &op, const RealField &r);

// Pointwise projection onto [q_min, q_max].
RealField clip(const RealField &q, double q_min, double q_max);

struct EtaReport {
    double eta = 0.0;
    bool condition_423_ok = false;  // eta ||q||_inf < 1/4
    // 1 / (inf|u|^2 sqrt(1 - 4 eta ||q||_inf)) when the condition holds.
    double inv_bound = 0.0;
};

// eta = sqrt((8 (1 + 1/gamma)^2 + 2d + 29) / (11 - 2d)) max(rad, 1).
double eta_constant(int dimension, double gamma, double radius);
EtaReport eta_and_condition(const RealField &q, const Grid &grid, double gamma, double min_abs_u = 0.0);

// ||DF rho||^2 / (inf|u|^4 ||rho||^2).
double coercivity_ratio(const DerivativeOperator &op, const RealField &rho);

struct RefineOptions {
    // Tikhonov weight relative to ||DF* b|| / ||b||.
    double lambda_rel = 1e-6;
    double cg_tolerance = 1e-6;
    int cg_max_iterations = 200;
    double q_min = 0.01;
    double q_max = 0.07;
    int max_iters = 1;
    // Outer iterations stop once J decreases by less than this fraction.
    double min_decrease = 0.01;
    int max_halvings = 6;
    SolveOptions solve;
};

struct RefinementResult {
    RealField q_star;
    RealField q_star_clipped;
    // sqrt(J) at the starting point and after every accepted iterate.
    std::vector<double> residual_history;
    int ls_iterations = 0;
    int outer_iterations = 0;
    double lambda = 0.0;
    double cg_relative_residual = 0.0;
    bool stagnated = false;
    bool solve_failed = false;
    double eta = 0.0;
    bool condition_423_ok = false;
};

// J[q] = ||F[q] - target||^2 (nodal L2).
double discrepancy(const RealField &F_q, const RealField &target);

// min ||DF c - b||^2 + lambda ||c||^2 by CG on the normal equations, with
// b = Re(E1_s) - F[q_s]; q_* = q_s + c.
RefinementResult least_squares_step(const DerivativeOperator &op, const RealField &q_s, const ComplexField &E1_s,
                                    const RefineOptions &options = {});

using DerivativeFactory = std::function<DerivativeOperator(const RealField &)>;

// Gauss-Newton iteration with clipping and step halving on J.
RefinementResult iterate_refinement(const DerivativeFactory &factory, const RealField &q0, const ComplexField &E1_s,
                                    const RefineOptions &options = {});

}  // namespace qtat
