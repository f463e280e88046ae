#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "qtat/probes.hpp"

namespace qtat {

// Noiseless data set: boundary data, solved fields, E_j = q u_j conj(u_1).
struct MeasurementSet {
    std::vector<BoundaryTrace> g;
    std::vector<ComplexField> u;
    std::vector<ComplexField> E;
    PropernessReport properness;
    // Probe family used for g; empty when the data were loaded from disk.
    std::vector<ProbeVector> probes;
};

enum class CovarianceKind { Gaussian, Exponential };

std::string to_string(CovarianceKind kind);
CovarianceKind covariance_from_string(const std::string &name);

struct NoiseSpec {
    // Noise amplitude. Relative to max E_1 when sigma_relative is set.
    double sigma = 1e-3;
    bool sigma_relative = true;
    // Correlation length of W_delta.
    double delta = 0.0;
    // Mollifier exponent, 0 < p < d/(d+6).
    double p = 0.125;
    CovarianceKind covariance = CovarianceKind::Gaussian;
    double clip_bound = 3.5;
    std::uint64_t seed = 0;
    // Unit of length for the mollifier: phi_delta has standard deviation
    // length_scale * (delta / length_scale)^p.
    double length_scale = 0.15;
    // Mollify E_j / c_j and multiply back by the probe carrier
    // c_j = exp(zeta_j . x) conj(exp(zeta_1 . x)) instead of mollifying E_j.
    bool demodulate = true;

    // Throws ParameterError outside the admissible ranges.
    void validate(int dimension) const;
    // R(z) at |z| = r, R(0) = 1.
    double covariance_at(double r) const;
    // Standard deviation of phi_delta for the given delta.
    double window(double delta_value) const;
    double window() const { return window(delta); }
};

RealField energy(const RealField &q, const ComplexField &u);

// Combines the four real energies q|u_1+u_j|^2, q|i u_1+u_j|^2, q|u_1|^2,
// q|u_j|^2 into q u_j conj(u_1).
ComplexField polarize(const RealField &q, const ComplexField &u1, const ComplexField &uj);

// Solves the forward problem for every probe, checks properness and forms
// the energies.
MeasurementSet measure(const RealField &q, double k, const std::vector<ProbeVector> &family,
                       const PropernessThresholds &thresholds = {}, SolveOptions options = {});

// Stationary Gaussian field with covariance R((x-y)/delta) and unit variance,
// generated by circulant embedding on a padded periodic extension of the grid.
// Fields are independent across (seed, stream) pairs.
class NoiseSampler {
public:
    NoiseSampler(const Grid &grid, const NoiseSpec &spec);
    ~NoiseSampler();
    NoiseSampler(const NoiseSampler &) = delete;
    NoiseSampler &operator=(const NoiseSampler &) = delete;

    // Two independent unclipped fields from one transform.
    std::pair<RealField, RealField> sample_pair(std::uint64_t stream) const;
    // count independent clipped fields for one realisation.
    std::vector<RealField> sample(std::size_t count, std::uint64_t realization) const;

    // Node counts of the periodic embedding.
    const std::vector<std::size_t> &embedding() const;
    // Magnitude of the negative circulant eigenvalues that were set to zero,
    // relative to the sum of all magnitudes.
    double clamped_fraction() const;

    struct Impl;

private:
    Grid grid_;
    NoiseSpec spec_;
    std::unique_ptr<Impl> impl_;
};

RealField clip(const RealField &f, double bound);

// Single clipped realisation of W_delta.
RealField sample_noise_field(const NoiseSpec &spec, const Grid &grid, std::uint64_t realization = 0);

struct NoisyMeasurementSet {
    std::vector<ComplexField> Em;
    std::vector<ComplexField> Es;
    std::uint64_t realization_id = 0;
    double sigma = 0.0;  // absolute amplitude used
    std::vector<RealField> W;  // the 3d+1 noise fields, W_1, W_j, W_1j, W_1j'
};

// Absolute sigma for a measurement set.
double effective_sigma(const NoiseSpec &spec, const MeasurementSet &ms);

// E^m_1 = E_1 + sigma W_1,  E^m_j = E_j + sigma U_j + i sigma V_j with
// U_j = (W_1j - W_1 - W_j)/2, V_j = (W_1j' - W_1 - W_j)/2, and E^s = E^m * phi
// (in the demodulated frame when spec.demodulate is set).
NoisyMeasurementSet corrupt(const MeasurementSet &ms, const NoiseSpec &spec, std::uint64_t realization = 0,
                            bool keep_noise = false);

// Separable truncated-Gaussian convolution (4 standard deviations), kernel
// mass renormalised over the in-domain nodes.
template <typename T>
Field<T> smooth(const Field<T> &f, const NoiseSpec &spec);
template <typename T>
Field<T> smooth_with_window(const Field<T> &f, double window);
// carrier * smooth(f / carrier).
ComplexField smooth_demodulated(const ComplexField &f, const ComplexField &carrier, const NoiseSpec &spec);
// Carriers c_j for a probe family, j = 1..d+1.
std::vector<ComplexField> probe_carriers(const std::vector<ProbeVector> &family, const Grid &grid);

struct Lemma51Report {
    int derivative_order = 0;
    std::vector<double> deltas;
    std::vector<double> windows;
    std::vector<double> variance;         // Monte-Carlo E|sigma W * d^gamma phi_delta|^2
    std::vector<double> variance_exact;   // Gaussian closed form, no truncation
    std::vector<double> variance_leading; // delta^d |R|_1 |d^gamma phi|^2 window^-(d+2|gamma|)
    double slope = 0.0;
    double predicted_slope = 0.0;  // d - (d + 2|gamma|) p
    double exact_slope = 0.0;      // least-squares slope of variance_exact
    double max_constant_ratio = 0.0;  // max |variance / variance_leading - 1|
};

// Monte-Carlo estimate of E|sigma W_delta * d_1^gamma phi_delta|^2 on the
// periodic torus with the grid spacing and torus_factor times the grid's
// node count per axis; every torus node contributes one sample.
Lemma51Report verify_lemma51(const NoiseSpec &spec, const Grid &grid, int derivative_order,
                             const std::vector<double> &deltas, std::size_t realizations,
                             std::size_t torus_factor = 2);

}  // namespace qtat
