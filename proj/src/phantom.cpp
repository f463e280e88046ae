#include "qtat/phantom.hpp"

#include <cmath>

#include "qtat/errors.hpp"

namespace qtat {

std::string to_string(PhantomKind kind) {
    switch (kind) {
        case PhantomKind::Constant: return "constant";
        case PhantomKind::GaussianBumps: return "gaussian_bumps";
        case PhantomKind::SmoothInclusion: return "smooth_inclusion";
    }
    return "unknown";
}

PhantomKind phantom_kind_from_string(const std::string &name) {
    if (name == "constant") return PhantomKind::Constant;
    if (name == "gaussian_bumps") return PhantomKind::GaussianBumps;
    if (name == "smooth_inclusion") return PhantomKind::SmoothInclusion;
    throw ConfigError("unknown phantom kind '" + name + "'");
}

void Phantom::validate(int dimension) const {
    if (!(q_min > 0.0 && q_min < q_max)) throw ParameterError("phantom bounds need 0 < q_min < q_max");
    if (!std::isfinite(background)) throw ParameterError("phantom background must be finite");
    if (kind == PhantomKind::Constant) return;
    for (const auto &f : features) {
        if (static_cast<int>(f.center.size()) != dimension) throw ConfigError("phantom feature centre has wrong dimension");
        if (!(f.width > 0.0)) throw ParameterError("phantom feature width must be positive");
        if (kind == PhantomKind::SmoothInclusion && !(f.radius > 0.0)) {
            throw ParameterError("inclusion radius must be positive");
        }
    }
}

double Phantom::value(const std::array<double, 3> &x, int dimension) const {
    double q = background;
    if (kind == PhantomKind::Constant) return q;
    for (const auto &f : features) {
        double r2 = 0.0;
        for (int a = 0; a < dimension; ++a) r2 += (x[a] - f.center[a]) * (x[a] - f.center[a]);
        if (kind == PhantomKind::GaussianBumps) {
            q += f.amplitude * std::exp(-r2 / (2.0 * f.width * f.width));
        } else {
            q += f.amplitude * 0.5 * (1.0 - std::tanh((std::sqrt(r2) - f.radius) / f.width));
        }
    }
    return q;
}

RealField Phantom::sample(const Grid &grid) const {
    validate(grid.dimension());
    RealField q = RealField::sample(grid, [&](const auto &x) { return value(x, grid.dimension()); });
    if (min_value(q) < q_min || max_value(q) > q_max) {
        throw ParameterError("phantom leaves [q_min, q_max] on this grid");
    }
    return q;
}

Phantom default_phantom(int dimension) {
    Phantom p;
    p.kind = PhantomKind::GaussianBumps;
    p.background = 0.03;
    std::vector<double> c1(dimension, 0.0), c2(dimension, 0.0);
    c1[0] = -0.12;
    c1[1] = 0.1;
    c2[0] = 0.18;
    c2[1] = -0.15;
    p.features = {{c1, 0.12, 0.03, 0.0}, {c2, 0.1, 0.02, 0.0}};
    return p;
}

}  // namespace qtat
