#pragma once

#include <string>
#include <vector>

#include "qtat/grid.hpp"

namespace qtat {

enum class PhantomKind { Constant, GaussianBumps, SmoothInclusion };

std::string to_string(PhantomKind kind);
PhantomKind phantom_kind_from_string(const std::string &name);

// Gaussian bump: amplitude exp(-|x - c|^2 / (2 width^2)).
// Smooth inclusion: amplitude (1 - tanh((|x - c| - radius) / width)) / 2.
struct PhantomFeature {
    std::vector<double> center;
    double width = 0.1;
    double amplitude = 0.0;
    double radius = 0.0;
};

struct Phantom {
    PhantomKind kind = PhantomKind::GaussianBumps;
    double background = 0.03;
    std::vector<PhantomFeature> features;
    double q_min = 0.01;
    double q_max = 0.07;

    // Pointwise value; features must match the dimension of x.
    double value(const std::array<double, 3> &x, int dimension) const;
    // Throws ParameterError if any node leaves [q_min, q_max].
    RealField sample(const Grid &grid) const;
    void validate(int dimension) const;
};

// Two overlapping bumps on a 0.03 background, range about [0.03, 0.06].
Phantom default_phantom(int dimension = 2);

}  // namespace qtat
