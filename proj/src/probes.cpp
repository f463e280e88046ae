#include "qtat/probes.hpp"

#include <limits>

#include <Eigen/Dense>

namespace qtat {

using namespace std::complex_literals;

complexd ProbeVector::null_form() const {
    complexd s = 0.0;
    for (const auto &c : xi) s += c * c;
    return s;
}

std::vector<ProbeVector> make_xi_family(double n, int d) {
    if (d != 2 && d != 3) throw ConfigError("probe family supports d = 2 or 3");
    if (!(n > 0.0)) throw ParameterError("probe scale n must be positive");
    std::vector<ProbeVector> family;
    for (int j = 0; j < d; ++j) {
        ProbeVector p{std::vector<complexd>(d, 0.0), n};
        p.xi[j] += n;
        p.xi[(j + 1) % d] += 1.0i * n;
        family.push_back(p);
    }
    ProbeVector last{std::vector<complexd>(d, 0.0), n};
    const double r = std::sqrt(static_cast<double>(d - 1));
    for (int j = 0; j < d - 1; ++j) last.xi[j] = n * (1.0 + 1.0i);
    last.xi[d - 1] = n * (r - 1.0i * r);
    family.push_back(last);
    return family;
}

ProbeVector helmholtz_adapted(const ProbeVector &probe, double k) {
    if (!(k > 0.0)) throw ParameterError("wavenumber k must be positive");
    double re2 = 0.0;
    for (const auto &c : probe.xi) re2 += c.real() * c.real();
    if (!(re2 > 0.0)) throw ParameterError("probe needs a non-zero real part");
    const double scale = std::sqrt(1.0 + k * k / re2);
    ProbeVector out = probe;
    for (auto &c : out.xi) c = complexd(c.real(), scale * c.imag());
    return out;
}

std::string to_string(ProbeKind kind) { return kind == ProbeKind::Null ? "null" : "helmholtz"; }

ProbeKind probe_kind_from_string(const std::string &name) {
    if (name == "null") return ProbeKind::Null;
    if (name == "helmholtz") return ProbeKind::HelmholtzAdapted;
    throw ConfigError("unknown probe kind '" + name + "'");
}

std::vector<ProbeVector> make_probe_family(double n, int d, double k, ProbeKind kind) {
    auto family = make_xi_family(n, d);
    if (kind == ProbeKind::HelmholtzAdapted) {
        for (auto &p : family) p = helmholtz_adapted(p, k);
    }
    return family;
}

complexd probe_determinant(const std::vector<ProbeVector> &family) {
    const int m = static_cast<int>(family.size());
    Eigen::MatrixXcd mat(m, m);
    for (int j = 0; j < m; ++j) {
        if (static_cast<int>(family[j].xi.size()) + 1 != m) throw ConfigError("probe family must have d+1 members");
        mat(j, 0) = 1.0;
        for (int a = 0; a + 1 < m; ++a) mat(j, a + 1) = family[j].xi[a];
    }
    return mat.determinant();
}

namespace {

complexd xi_dot_x(const ProbeVector &p, const std::array<double, 3> &x) {
    complexd s = 0.0;
    for (std::size_t a = 0; a < p.xi.size(); ++a) s += p.xi[a] * x[a];
    return s;
}

}  // namespace

ComplexField plane_wave(const ProbeVector &probe, const Grid &grid) {
    if (static_cast<int>(probe.xi.size()) != grid.dimension()) throw ConfigError("probe dimension mismatch");
    return ComplexField::sample(grid, [&](const auto &x) { return std::exp(xi_dot_x(probe, x)); });
}

BoundaryTrace probe_boundary_data(const ProbeVector &probe, double k, const Grid &grid) {
    if (static_cast<int>(probe.xi.size()) != grid.dimension()) throw ConfigError("probe dimension mismatch");
    return BoundaryTrace::sample(grid, [&](const auto &x, const auto &nu) {
        complexd nu_xi = 0.0;
        for (std::size_t a = 0; a < probe.xi.size(); ++a) nu_xi += nu[a] * probe.xi[a];
        return (nu_xi - 1.0i * k) * std::exp(xi_dot_x(probe, x));
    });
}

PropernessReport check_proper(const std::vector<ComplexField> &u, const PropernessThresholds &thresholds) {
    if (u.empty()) throw ConfigError("no solutions given");
    const Grid &g = u.front().grid();
    const int d = g.dimension();
    const int m = d + 1;
    if (static_cast<int>(u.size()) != m) throw ConfigError("properness needs exactly d+1 solutions");
    std::vector<ComplexVectorField> grads;
    for (const auto &f : u) {
        f.check_same(u.front());
        grads.push_back(gradient(f));
    }
    PropernessReport r;
    const double max_u1 = max_abs(u.front());
    double min_u1 = std::numeric_limits<double>::infinity();
    double min_det = std::numeric_limits<double>::infinity();
    double min_det_raw = std::numeric_limits<double>::infinity();
    Eigen::MatrixXcd mat(m, m);
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
        min_u1 = std::min(min_u1, std::abs(u.front()[idx]));
        double row_prod = 1.0;
        for (int j = 0; j < m; ++j) {
            mat(j, 0) = u[j][idx];
            for (int a = 0; a < d; ++a) mat(j, a + 1) = grads[j][a][idx];
            row_prod *= mat.row(j).norm();
        }
        const double det = std::abs(mat.determinant());
        min_det_raw = std::min(min_det_raw, det);
        min_det = std::min(min_det, row_prod > 0.0 ? det / row_prod : 0.0);
    }
    r.min_abs_u1_raw = min_u1;
    r.min_abs_u1 = max_u1 > 0.0 ? min_u1 / max_u1 : 0.0;
    r.min_abs_det_raw = min_det_raw;
    r.min_abs_det = min_det;
    r.is_proper = r.min_abs_u1 > thresholds.tau_u && r.min_abs_det > thresholds.tau_det;
    return r;
}

}  // namespace qtat
