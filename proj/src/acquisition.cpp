#include "qtat/acquisition.hpp"

#include <algorithm>
#include <mutex>
#include <numbers>
#include <random>

#include <fftw3.h>

namespace qtat {

using namespace std::complex_literals;

std::string to_string(CovarianceKind kind) {
    return kind == CovarianceKind::Gaussian ? "gaussian" : "exponential";
}

CovarianceKind covariance_from_string(const std::string &name) {
    if (name == "gaussian") return CovarianceKind::Gaussian;
    if (name == "exponential") return CovarianceKind::Exponential;
    throw ConfigError("unknown covariance kind '" + name + "'");
}

void NoiseSpec::validate(int d) const {
    const double p_max = static_cast<double>(d) / (d + 6);
    if (!(p > 0.0 && p < p_max)) throw ParameterError("smoothing exponent p must lie in (0, d/(d+6))");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("sigma must be non-negative");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw ParameterError("correlation length delta must be positive");
    if (!(clip_bound >= 0.0)) throw ParameterError("clip bound must be non-negative");
    if (!(length_scale > 0.0)) throw ParameterError("mollifier length scale must be positive");
}

double NoiseSpec::covariance_at(double r) const {
    return covariance == CovarianceKind::Gaussian ? std::exp(-0.5 * r * r) : std::exp(-r);
}

double NoiseSpec::window(double delta_value) const {
    return length_scale * std::pow(delta_value / length_scale, p);
}

RealField energy(const RealField &q, const ComplexField &u) {
    if (q.grid() != u.grid()) throw ConfigError("q and u live on different grids");
    RealField e(q.grid());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = q[i] * std::norm(u[i]);
    return e;
}

ComplexField polarize(const RealField &q, const ComplexField &u1, const ComplexField &uj) {
    u1.check_same(uj);
    if (q.grid() != u1.grid()) throw ConfigError("q and u live on different grids");
    const RealField e_sum = energy(q, u1 + uj);
    const RealField e_isum = energy(q, 1.0i * u1 + uj);
    const RealField e1 = energy(q, u1);
    const RealField ej = energy(q, uj);
    ComplexField out(q.grid());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = complexd(0.5 * (e_sum[i] - e1[i] - ej[i]), 0.5 * (e_isum[i] - e1[i] - ej[i]));
    }
    return out;
}

MeasurementSet measure(const RealField &q, double k, const std::vector<ProbeVector> &family,
                       const PropernessThresholds &thresholds, SolveOptions options) {
    const Grid &grid = q.grid();
    if (static_cast<int>(family.size()) != grid.dimension() + 1) throw ConfigError("need d+1 probes");
    HelmholtzOperator op(grid, k, q, options);
    MeasurementSet ms;
    const ComplexField zero(grid);
    for (const auto &probe : family) {
        ms.g.push_back(probe_boundary_data(probe, k, grid));
        ms.u.push_back(op.solve(zero, ms.g.back()));
    }
    ms.properness = check_proper(ms.u, thresholds);
    ms.probes = family;
    ms.E.push_back(to_complex(energy(q, ms.u[0])));
    for (std::size_t j = 1; j < ms.u.size(); ++j) ms.E.push_back(polarize(q, ms.u[0], ms.u[j]));
    return ms;
}

namespace {

// FFTW's planner is not thread-safe; execution on distinct arrays is.
std::mutex &planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftBuffer {
    explicit FftBuffer(std::size_t n) : size(n), data(fftw_alloc_complex(n)) {
        if (!data) throw std::bad_alloc();
    }
    ~FftBuffer() { fftw_free(data); }
    FftBuffer(const FftBuffer &) = delete;
    FftBuffer &operator=(const FftBuffer &) = delete;
    std::size_t size;
    fftw_complex *data;
};

// In-place complex DFT plan of fixed shape.
class FftPlan {
public:
    FftPlan(const std::vector<std::size_t> &dims, int sign) {
        std::vector<int> n(dims.begin(), dims.end());
        std::size_t total = 1;
        for (auto v : dims) total *= v;
        FftBuffer scratch(total);
        std::lock_guard<std::mutex> lock(planner_mutex());
        plan_ = fftw_plan_dft(static_cast<int>(n.size()), n.data(), scratch.data, scratch.data, sign, FFTW_ESTIMATE);
        if (!plan_) throw ConfigError("FFTW could not create a plan");
    }
    ~FftPlan() {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(plan_);
    }
    FftPlan(const FftPlan &) = delete;
    FftPlan &operator=(const FftPlan &) = delete;
    void execute(FftBuffer &b) const { fftw_execute_dft(plan_, b.data, b.data); }

private:
    fftw_plan plan_ = nullptr;
};

std::size_t product(const std::vector<std::size_t> &dims) {
    std::size_t t = 1;
    for (auto v : dims) t *= v;
    return t;
}

// Minimum-image offset of index i on a ring of n nodes.
double ring_offset(std::size_t i, std::size_t n) {
    return i <= n / 2 ? static_cast<double>(i) : static_cast<double>(i) - static_cast<double>(n);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace

// Circulant covariance on a periodic lattice with the grid spacing.
struct NoiseSampler::Impl {
    Impl(const std::vector<std::size_t> &dims_, const std::vector<double> &h, const NoiseSpec &spec)
        : dims(dims_), forward(dims_, FFTW_FORWARD) {
        const std::size_t total = product(dims);
        FftBuffer c(total);
        std::vector<std::size_t> idx(dims.size(), 0);
        for (std::size_t n = 0; n < total; ++n) {
            std::size_t rem = n;
            double r2 = 0.0;
            for (int a = static_cast<int>(dims.size()) - 1; a >= 0; --a) {
                const std::size_t i = rem % dims[a];
                rem /= dims[a];
                const double z = ring_offset(i, dims[a]) * h[a] / spec.delta;
                r2 += z * z;
            }
            c.data[n][0] = spec.covariance_at(std::sqrt(r2));
            c.data[n][1] = 0.0;
        }
        forward.execute(c);
        sqrt_lambda.resize(total);
        double neg = 0.0, all = 0.0;
        for (std::size_t n = 0; n < total; ++n) {
            const double lambda = c.data[n][0];
            all += std::abs(lambda);
            if (lambda < 0.0) neg += -lambda;
            sqrt_lambda[n] = std::sqrt(std::max(lambda, 0.0) / static_cast<double>(total));
        }
        clamped = all > 0.0 ? neg / all : 0.0;
    }

    // Fills b with F(sqrt(lambda/M) (Z1 + i Z2)); real and imaginary parts are
    // independent fields with the circulant covariance.
    void draw(FftBuffer &b, std::uint64_t seed, std::uint64_t stream) const {
        auto rng = stream_rng(seed, stream);
        std::normal_distribution<double> normal;
        for (std::size_t n = 0; n < b.size; ++n) {
            const double z1 = normal(rng);
            const double z2 = normal(rng);
            b.data[n][0] = sqrt_lambda[n] * z1;
            b.data[n][1] = sqrt_lambda[n] * z2;
        }
        forward.execute(b);
    }

    std::vector<std::size_t> dims;
    FftPlan forward;
    std::vector<double> sqrt_lambda;
    double clamped = 0.0;
};

namespace {

std::vector<double> spacings(const Grid &g) {
    std::vector<double> h;
    for (int a = 0; a < g.dimension(); ++a) h.push_back(g.spacing(a));
    return h;
}

std::vector<std::size_t> padded_dims(const Grid &g, const NoiseSpec &spec) {
    // R below 1e-16 beyond this many correlation lengths.
    const double cutoff = spec.covariance == CovarianceKind::Gaussian ? 8.6 : 37.0;
    std::vector<std::size_t> dims;
    for (int a = 0; a < g.dimension(); ++a) {
        const auto pad = static_cast<std::size_t>(std::ceil(cutoff * spec.delta / g.spacing(a)));
        std::size_t m = g.count(a) + pad;
        m += m % 2;
        dims.push_back(m);
    }
    return dims;
}

}  // namespace

NoiseSampler::NoiseSampler(const Grid &grid, const NoiseSpec &spec) : grid_(grid), spec_(spec) {
    spec.validate(grid.dimension());
    if (spec.delta < 2.0 * grid.min_spacing() * (1.0 - 1e-12)) {
        throw ParameterError("correlation length delta must be at least 2h");
    }
    impl_ = std::make_unique<Impl>(padded_dims(grid, spec), spacings(grid), spec);
}

NoiseSampler::~NoiseSampler() = default;

const std::vector<std::size_t> &NoiseSampler::embedding() const { return impl_->dims; }
double NoiseSampler::clamped_fraction() const { return impl_->clamped; }

std::pair<RealField, RealField> NoiseSampler::sample_pair(std::uint64_t stream) const {
    FftBuffer b(product(impl_->dims));
    impl_->draw(b, spec_.seed, stream);
    RealField re(grid_), im(grid_);
    const int d = grid_.dimension();
    for (std::size_t idx = 0; idx < grid_.size(); ++idx) {
        // Same multi-index in the embedding (row-major, axis 0 slowest).
        std::size_t e = 0;
        for (int a = 0; a < d; ++a) e = e * impl_->dims[a] + (idx / grid_.stride(a)) % grid_.count(a);
        re[idx] = b.data[e][0];
        im[idx] = b.data[e][1];
    }
    return {std::move(re), std::move(im)};
}

std::vector<RealField> NoiseSampler::sample(std::size_t count, std::uint64_t realization) const {
    std::vector<RealField> out;
    for (std::size_t m = 0; out.size() < count; ++m) {
        auto [a, b] = sample_pair((realization << 16) | m);
        out.push_back(clip(a, spec_.clip_bound));
        if (out.size() < count) out.push_back(clip(b, spec_.clip_bound));
    }
    return out;
}

RealField clip(const RealField &f, double bound) {
    RealField out(f);
    for (auto &v : out.values()) v = std::clamp(v, -bound, bound);
    return out;
}

RealField sample_noise_field(const NoiseSpec &spec, const Grid &grid, std::uint64_t realization) {
    return NoiseSampler(grid, spec).sample(1, realization).front();
}

double effective_sigma(const NoiseSpec &spec, const MeasurementSet &ms) {
    if (ms.E.empty()) throw ConfigError("empty measurement set");
    return spec.sigma_relative ? spec.sigma * max_abs(ms.E.front()) : spec.sigma;
}

NoisyMeasurementSet corrupt(const MeasurementSet &ms, const NoiseSpec &spec, std::uint64_t realization,
                            bool keep_noise) {
    const Grid &grid = ms.E.front().grid();
    const int d = grid.dimension();
    if (static_cast<int>(ms.E.size()) != d + 1) throw ConfigError("measurement set needs d+1 energies");
    spec.validate(d);
    NoisyMeasurementSet out;
    out.realization_id = realization;
    out.sigma = effective_sigma(spec, ms);
    double e_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) e_min = std::min(e_min, ms.E[0][i].real());
    if (out.sigma * spec.clip_bound >= e_min) {
        throw ParameterError("sigma * clip_bound must stay below min E_1 to keep the measured energy positive");
    }
    if (out.sigma == 0.0) {
        out.Em = ms.E;
    } else {
        NoiseSampler sampler(grid, spec);
        // W_1, then W_j, W_1j, W_1j' for j = 2..d+1.
        std::vector<RealField> w = sampler.sample(3 * d + 1, realization);
        const double s = out.sigma;
        out.Em.push_back(ms.E[0]);
        for (std::size_t i = 0; i < grid.size(); ++i) out.Em[0][i] += s * w[0][i];
        for (int j = 1; j <= d; ++j) {
            const RealField &wj = w[3 * (j - 1) + 1];
            const RealField &w1j = w[3 * (j - 1) + 2];
            const RealField &w1jp = w[3 * (j - 1) + 3];
            ComplexField em = ms.E[j];
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const double u = 0.5 * (w1j[i] - w[0][i] - wj[i]);
                const double v = 0.5 * (w1jp[i] - w[0][i] - wj[i]);
                em[i] += complexd(s * u, s * v);
            }
            out.Em.push_back(std::move(em));
        }
        if (keep_noise) out.W = std::move(w);
    }
    if (spec.demodulate) {
        if (static_cast<int>(ms.probes.size()) != d + 1) {
            throw ConfigError("demodulated smoothing needs the probe family of the measurement set");
        }
        const std::vector<ComplexField> carriers = probe_carriers(ms.probes, grid);
        for (int j = 0; j <= d; ++j) out.Es.push_back(smooth_demodulated(out.Em[j], carriers[j], spec));
    } else {
        for (const auto &em : out.Em) out.Es.push_back(smooth(em, spec));
    }
    return out;
}

std::vector<ComplexField> probe_carriers(const std::vector<ProbeVector> &family, const Grid &grid) {
    if (family.empty()) throw ConfigError("empty probe family");
    const ComplexField w1 = plane_wave(family.front(), grid);
    std::vector<ComplexField> out;
    for (const auto &probe : family) {
        ComplexField c = plane_wave(probe, grid);
        for (std::size_t i = 0; i < c.size(); ++i) c[i] *= std::conj(w1[i]);
        out.push_back(std::move(c));
    }
    return out;
}

ComplexField smooth_demodulated(const ComplexField &f, const ComplexField &carrier, const NoiseSpec &spec) {
    f.check_same(carrier);
    ComplexField base(f.grid());
    for (std::size_t i = 0; i < f.size(); ++i) base[i] = f[i] / carrier[i];
    ComplexField out = smooth(base, spec);
    for (std::size_t i = 0; i < f.size(); ++i) out[i] *= carrier[i];
    return out;
}

template <typename T>
Field<T> smooth_with_window(const Field<T> &f, double window) {
    const Grid &g = f.grid();
    if (!(window >= 2.0 * g.min_spacing() * (1.0 - 1e-12))) {
        throw ParameterError("mollifier window must be at least 2h");
    }
    Field<T> cur = f;
    for (int a = 0; a < g.dimension(); ++a) {
        const std::size_t n = g.count(a);
        const long s = static_cast<long>(g.stride(a));
        const double h = g.spacing(a);
        const long r = static_cast<long>(std::ceil(4.0 * window / h));
        std::vector<double> w(2 * r + 1);
        for (long j = -r; j <= r; ++j) w[j + r] = std::exp(-0.5 * std::pow(j * h / window, 2));
        Field<T> next(g);
        for (std::size_t idx = 0; idx < g.size(); ++idx) {
            const long i = static_cast<long>((idx / s) % n);
            const long lo = std::max(-r, -i);
            const long hi = std::min(r, static_cast<long>(n) - 1 - i);
            T acc{};
            double mass = 0.0;
            for (long j = lo; j <= hi; ++j) {
                acc += w[j + r] * cur[static_cast<std::size_t>(static_cast<long>(idx) + j * s)];
                mass += w[j + r];
            }
            next[idx] = acc / mass;
        }
        cur = std::move(next);
    }
    return cur;
}

template <typename T>
Field<T> smooth(const Field<T> &f, const NoiseSpec &spec) {
    spec.validate(f.grid().dimension());
    return smooth_with_window(f, spec.window());
}

template Field<double> smooth(const Field<double> &, const NoiseSpec &);
template Field<complexd> smooth(const Field<complexd> &, const NoiseSpec &);
template Field<double> smooth_with_window(const Field<double> &, double);
template Field<complexd> smooth_with_window(const Field<complexd> &, double);

namespace {

// d^m/dz^m of exp(-z^2/2) divided by exp(-z^2/2): (-1)^m He_m(z).
double hermite_factor(int m, double z) {
    switch (m) {
    case 0: return 1.0;
    case 1: return -z;
    case 2: return z * z - 1.0;
    case 3: return -(z * z * z - 3.0 * z);
    default: throw ParameterError("derivative order must be 0..3");
    }
}

double least_squares_slope(const std::vector<double> &x, const std::vector<double> &y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

Lemma51Report verify_lemma51(const NoiseSpec &spec, const Grid &grid, int m, const std::vector<double> &deltas,
                             std::size_t realizations, std::size_t torus_factor) {
    if (realizations < 20) throw ConfigError("variance check needs at least 20 realisations");
    if (m < 0 || m > 3) throw ParameterError("derivative order must be 0..3");
    if (deltas.size() < 2) throw ConfigError("variance check needs at least two delta values");
    const int d = grid.dimension();
    const std::vector<double> h = spacings(grid);
    std::vector<std::size_t> dims;
    for (int a = 0; a < d; ++a) dims.push_back(grid.count(a) * std::max<std::size_t>(torus_factor, 1));
    const std::size_t total = product(dims);
    FftPlan forward(dims, FFTW_FORWARD), backward(dims, FFTW_BACKWARD);

    // Integral of |d_1^m phi|^2 for the standard Gaussian phi in d dimensions.
    const double c_gamma = std::tgamma(m + 0.5) / (2.0 * std::numbers::pi) *
                           std::pow(std::tgamma(0.5) / (2.0 * std::numbers::pi), d - 1);
    const bool gaussian = spec.covariance == CovarianceKind::Gaussian;
    // Integral of R over R^d.
    const double r_integral = gaussian ? std::pow(2.0 * std::numbers::pi, 0.5 * d)
                                       : (d == 2 ? 2.0 * std::numbers::pi : 8.0 * std::numbers::pi);
    double cell = 1.0;
    for (double v : h) cell *= v;

    Lemma51Report rep;
    rep.derivative_order = m;
    rep.predicted_slope = d - (d + 2.0 * m) * spec.p;
    for (double delta : deltas) {
        NoiseSpec s = spec;
        s.delta = delta;
        s.validate(d);
        if (delta < 2.0 * grid.min_spacing() * (1.0 - 1e-12)) throw ParameterError("delta must be at least 2h");
        const double w = s.window();
        if (w < 2.0 * grid.min_spacing()) throw ParameterError("mollifier window must be at least 2h");

        // Kernel transform: DFT of the sampled, periodised d_1^m phi_delta times h^d / M.
        FftBuffer kernel(total);
        for (std::size_t n = 0; n < total; ++n) {
            std::size_t rem = n;
            double r2 = 0.0, z1 = 0.0;
            for (int a = d - 1; a >= 0; --a) {
                const double z = ring_offset(rem % dims[a], dims[a]) * h[a] / w;
                rem /= dims[a];
                r2 += z * z;
                if (a == 0) z1 = z;
            }
            const double phi = std::exp(-0.5 * r2) / std::pow(2.0 * std::numbers::pi, 0.5 * d) / std::pow(w, d);
            kernel.data[n][0] = phi * hermite_factor(m, z1) / std::pow(w, m) * cell / static_cast<double>(total);
            kernel.data[n][1] = 0.0;
        }
        forward.execute(kernel);

        NoiseSampler::Impl sampler(dims, h, s);
        FftBuffer b(total);
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t r = 0; 2 * r < realizations; ++r) {
            sampler.draw(b, s.seed, r);
            for (std::size_t n = 0; n < total; ++n) {
                b.data[n][0] = s.sigma * std::clamp(b.data[n][0], -s.clip_bound, s.clip_bound);
                b.data[n][1] = s.sigma * std::clamp(b.data[n][1], -s.clip_bound, s.clip_bound);
            }
            forward.execute(b);
            for (std::size_t n = 0; n < total; ++n) {
                const complexd v = complexd(b.data[n][0], b.data[n][1]) * complexd(kernel.data[n][0], kernel.data[n][1]);
                b.data[n][0] = v.real();
                b.data[n][1] = v.imag();
            }
            backward.execute(b);
            // Real part carries the first field, imaginary part the second.
            const bool both = 2 * r + 1 < realizations;
            for (std::size_t n = 0; n < total; ++n) {
                acc += b.data[n][0] * b.data[n][0];
                if (both) acc += b.data[n][1] * b.data[n][1];
            }
            count += both ? 2 : 1;
        }
        const double var = acc / static_cast<double>(count * total);
        const double sig2 = s.sigma * s.sigma;
        rep.deltas.push_back(delta);
        rep.windows.push_back(w);
        rep.variance.push_back(var);
        rep.variance_leading.push_back(sig2 * std::pow(delta, d) * r_integral * c_gamma * std::pow(w, -(d + 2.0 * m)));
        // Closed form only for the Gaussian covariance; the leading term otherwise.
        rep.variance_exact.push_back(gaussian ? sig2 * std::pow(delta, d) * r_integral * c_gamma *
                                                    std::pow(w * w + 0.5 * delta * delta, -(0.5 * d + m))
                                              : rep.variance_leading.back());
    }
    std::vector<double> lx, ly, le;
    for (std::size_t i = 0; i < rep.deltas.size(); ++i) {
        lx.push_back(std::log(rep.deltas[i]));
        if (rep.variance[i] > 0.0) ly.push_back(std::log(rep.variance[i]));
        le.push_back(std::log(std::max(rep.variance_exact[i], std::numeric_limits<double>::min())));
        if (rep.variance_leading[i] > 0.0) {
            rep.max_constant_ratio =
                std::max(rep.max_constant_ratio, std::abs(rep.variance[i] / rep.variance_leading[i] - 1.0));
        }
    }
    rep.slope = ly.size() == lx.size() ? least_squares_slope(lx, ly) : 0.0;
    rep.exact_slope = spec.sigma > 0.0 ? least_squares_slope(lx, le) : 0.0;
    return rep;
}

}  // namespace qtat
