#pragma once

#include <string>
#include <vector>

#include "qtat/helmholtz.hpp"

namespace qtat {

// Complex frequency xi with xi . xi = 0 (unconjugated); e^{xi.x} is harmonic.
struct ProbeVector {
    std::vector<complexd> xi;
    double scale_n = 0.0;

    // Unconjugated xi . xi.
    complexd null_form() const;
};

// n(e_j + i e_{j+1}) for j < d, n(e_d + i e_1), and
// n([sum_{j<d} e_j + sqrt(d-1) e_d] + i[sum_{j<d} e_j - sqrt(d-1) e_d]).
std::vector<ProbeVector> make_xi_family(double n, int dimension);

// Keeps Re xi and rescales Im xi so that zeta . zeta = -k^2: e^{zeta.x} then
// solves Delta u + k^2 u = 0 exactly and zeta -> xi as n -> infinity.
ProbeVector helmholtz_adapted(const ProbeVector &probe, double k);

enum class ProbeKind { Null, HelmholtzAdapted };

std::string to_string(ProbeKind kind);
ProbeKind probe_kind_from_string(const std::string &name);

// make_xi_family, optionally followed by helmholtz_adapted on every member.
std::vector<ProbeVector> make_probe_family(double n, int dimension, double k, ProbeKind kind);

// det of the (d+1)x(d+1) matrix with rows (1, xi_j).
complexd probe_determinant(const std::vector<ProbeVector> &family);

// g = nu . grad e^{xi.x} - i k e^{xi.x} on the boundary nodes.
BoundaryTrace probe_boundary_data(const ProbeVector &probe, double k, const Grid &grid);

// e^{xi . x} sampled on the grid.
ComplexField plane_wave(const ProbeVector &probe, const Grid &grid);

struct PropernessThresholds {
    // min |u_1| / max |u_1|
    double tau_u = 1e-6;
    // min over nodes of |det M| / prod_j |row_j|, rows (u_j, grad u_j)
    double tau_det = 1e-8;
};

struct PropernessReport {
    double min_abs_u1 = 0.0;       // relative to max |u_1|
    double min_abs_det = 0.0;      // row-normalised determinant
    double min_abs_u1_raw = 0.0;
    double min_abs_det_raw = 0.0;
    bool is_proper = false;
};

// Evaluates both properness conditions at every node; never throws on a
// non-proper set.
PropernessReport check_proper(const std::vector<ComplexField> &solutions, const PropernessThresholds &thresholds = {});

}  // namespace qtat
