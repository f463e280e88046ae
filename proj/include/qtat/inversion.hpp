#pragma once

#include <vector>

#include "qtat/acquisition.hpp"

namespace qtat {

// Node validity flags (true = formula evaluated reliably at that node).
using Mask = std::vector<bool>;

double coverage(const Mask &mask);
// Fraction of valid nodes among those with depth >= min_depth.
double coverage(const Mask &mask, const Grid &grid, std::size_t min_depth);

struct InversionOptions {
    // Re E_1 below floor * max Re E_1 excludes the node.
    double e_floor = 1e-8;
    // Pointwise solves with cond(A) above this are masked.
    double cond_max = 1e8;
    double solve_tolerance = 1e-10;
    // Truncation order of the data-derivative stencils.
    int stencil_accuracy = 4;
    // Nodes closer than this to the boundary are infilled from the interior.
    std::size_t boundary_layer = 1;
    // Nodes within this distance of an edge or corner are infilled as well:
    // Robin data that is not compatible at a corner leaves the solution with
    // singular third derivatives there.
    double corner_radius = 0.05;
};

struct RatioField {
    std::vector<ComplexField> alpha;  // alpha_{j+1} = E_{j+1} / E_1, j = 1..d
    Mask mask;
    std::size_t floored = 0;
};

RatioField form_ratios(const std::vector<ComplexField> &E, double e_floor = 1e-8);

struct MatrixField {
    // rows[j][l] = d_l alpha_{j+1}
    std::vector<ComplexVectorField> rows;
    // rhs[j] = Laplacian alpha_{j+1}
    std::vector<ComplexField> rhs;
};

MatrixField assemble_A_and_rhs(const std::vector<ComplexField> &alpha, int accuracy = 4);

struct PointwiseSolution {
    ComplexVectorField a;
    RealField cond_A;
    Mask mask;
    double max_residual = 0.0;  // over unmasked nodes
};

// Solves A a = rhs node by node. `mask` (optional) marks nodes already excluded.
PointwiseSolution solve_for_a(const MatrixField &system, double cond_max = 1e8, const Mask &mask = {},
                              double tolerance = 1e-10);

// Replaces values at invalid nodes by the value of the nearest valid node
// (breadth-first over axis neighbours, ties broken by visiting order).
template <typename T>
Field<T> nearest_fill(const Field<T> &f, const Mask &valid);

struct ExactReconstruction {
    RealField q_hat;
    RealVectorField beta_from_a;
    // Nodes where the formula was evaluated (condition and floor masks, outside
    // the boundary layer).
    Mask mask;
    double coverage_interior = 0.0;
    double max_solve_residual = 0.0;
    double median_cond = 0.0;
    double max_cond = 0.0;
    std::size_t floored = 0;
};

// q = (-Re a . Im a + div Im a) / (2k). Masked nodes of a are infilled before
// the divergence; masked and boundary-layer nodes of q are infilled after.
RealField exact_q(const ComplexVectorField &a, double k, int accuracy = 4);

// beta = -E_1 Im(a) / (2 q).
RealVectorField beta_from_a(const ComplexVectorField &a, const ComplexField &E1, const RealField &q);

// Full chain: ratios, A and rhs, pointwise solves, formula, infill.
ExactReconstruction reconstruct(const std::vector<ComplexField> &E, double k, const InversionOptions &options = {});

// Relative L2 norm of div beta + k q |u_1|^2 with beta = Im(conj(u_1) grad u_1),
// over nodes of depth >= 2 and at least corner_radius away from edges/corners.
double check_divergence_identity(const ComplexField &u1, const RealField &q, double k, int accuracy = 2,
                                 double corner_radius = 0.05);

// Exact formula applied to the smoothed measured data.
ExactReconstruction initial_guess(const NoisyMeasurementSet &noisy, double k, const InversionOptions &options = {});

}  // namespace qtat
