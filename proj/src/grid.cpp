#include "qtat/grid.hpp"

#include <algorithm>
#include <limits>

namespace qtat {

Grid::Grid(int dimension, std::size_t nodes_per_axis, double half_width)
    : Grid(std::vector<std::size_t>(dimension > 0 ? dimension : 0, nodes_per_axis), half_width) {
    if (dimension != 2 && dimension != 3) throw ConfigError("grid dimension must be 2 or 3");
}

Grid::Grid(std::vector<std::size_t> counts, double half_width) : half_width_(half_width) {
    if (counts.size() != 2 && counts.size() != 3) throw ConfigError("grid dimension must be 2 or 3");
    if (!(half_width > 0.0) || !std::isfinite(half_width)) throw ConfigError("grid half width must be positive");
    dim_ = static_cast<int>(counts.size());
    for (int a = 0; a < dim_; ++a) {
        if (counts[a] < 3) throw ConfigError("grid needs at least 3 nodes per axis");
        counts_[a] = counts[a];
    }
    init();
}

void Grid::init() {
    size_ = 1;
    for (int a = dim_ - 1; a >= 0; --a) {
        strides_[a] = size_;
        size_ *= counts_[a];
        spacing_[a] = 2.0 * half_width_ / static_cast<double>(counts_[a] - 1);
    }
    boundary_.clear();
    for (std::size_t i = 0; i < size_; ++i) {
        if (face_count(i) > 0) boundary_.push_back(i);
    }
}

double Grid::min_spacing() const {
    double h = spacing_[0];
    for (int a = 1; a < dim_; ++a) h = std::min(h, spacing_[a]);
    return h;
}

double Grid::cell_volume() const {
    double v = 1.0;
    for (int a = 0; a < dim_; ++a) v *= spacing_[a];
    return v;
}

std::array<std::size_t, 3> Grid::unravel(std::size_t index) const {
    std::array<std::size_t, 3> ijk{0, 0, 0};
    for (int a = 0; a < dim_; ++a) ijk[a] = (index / strides_[a]) % counts_[a];
    return ijk;
}

std::size_t Grid::ravel(const std::array<std::size_t, 3> &ijk) const {
    std::size_t idx = 0;
    for (int a = 0; a < dim_; ++a) idx += ijk[a] * strides_[a];
    return idx;
}

std::array<double, 3> Grid::position(std::size_t index) const {
    std::array<double, 3> x{0, 0, 0};
    for (int a = 0; a < dim_; ++a) x[a] = coordinate(a, (index / strides_[a]) % counts_[a]);
    return x;
}

int Grid::face_count(std::size_t index) const {
    int faces = 0;
    for (int a = 0; a < dim_; ++a) {
        std::size_t i = (index / strides_[a]) % counts_[a];
        if (i == 0 || i + 1 == counts_[a]) ++faces;
    }
    return faces;
}

std::array<double, 3> Grid::outward_normal(std::size_t index) const {
    std::array<double, 3> nu{0, 0, 0};
    double norm2 = 0.0;
    for (int a = 0; a < dim_; ++a) {
        std::size_t i = (index / strides_[a]) % counts_[a];
        if (i == 0) nu[a] = -1.0;
        else if (i + 1 == counts_[a]) nu[a] = 1.0;
        norm2 += nu[a] * nu[a];
    }
    if (norm2 > 0.0) {
        double s = 1.0 / std::sqrt(norm2);
        for (auto &c : nu) c *= s;
    }
    return nu;
}

std::size_t Grid::depth(std::size_t index) const {
    std::size_t d = std::numeric_limits<std::size_t>::max();
    for (int a = 0; a < dim_; ++a) {
        std::size_t i = (index / strides_[a]) % counts_[a];
        d = std::min({d, i, counts_[a] - 1 - i});
    }
    return d;
}

double Grid::edge_distance(std::size_t index) const {
    const auto x = position(index);
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < dim_; ++a) {
        for (int b = a + 1; b < dim_; ++b) {
            best = std::min(best, std::hypot(half_width_ - std::abs(x[a]), half_width_ - std::abs(x[b])));
        }
    }
    return best;
}

bool Grid::operator==(const Grid &other) const {
    if (dim_ != other.dim_ || half_width_ != other.half_width_) return false;
    for (int a = 0; a < dim_; ++a) {
        if (counts_[a] != other.counts_[a]) return false;
    }
    return true;
}

template <typename T>
bool Field<T>::all_finite() const {
    for (const auto &v : values_) {
        if constexpr (std::is_same_v<T, complexd>) {
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
        } else {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

template class Field<double>;
template class Field<complexd>;

namespace {

void check_axis(const Grid &g, int axis) {
    if (axis < 0 || axis >= g.dimension()) throw ConfigError("axis out of range for grid dimension");
}

// Per-node stencils along one axis: offsets relative to the node and weights
// (already divided by h^m).
struct AxisStencils {
    std::vector<std::vector<long>> offsets;
    std::vector<std::vector<double>> weights;
};

AxisStencils axis_stencils(std::size_t n, double h, int derivative, int accuracy) {
    if (accuracy < 2 || accuracy % 2 != 0) throw ConfigError("finite-difference accuracy must be an even order >= 2");
    const long r = accuracy / 2;
    const long one_sided = derivative + accuracy;
    if (static_cast<long>(n) < one_sided) throw ConfigError("too few nodes along an axis for the requested stencil");
    const double scale = std::pow(h, -derivative);
    AxisStencils st;
    st.offsets.resize(n);
    st.weights.resize(n);
    auto build = [&](std::size_t i, long lo, long count) {
        std::vector<double> x;
        for (long j = 0; j < count; ++j) {
            st.offsets[i].push_back(lo + j - static_cast<long>(i));
            x.push_back(static_cast<double>(lo + j - static_cast<long>(i)));
        }
        st.weights[i] = fd_weights(x, derivative);
        for (auto &w : st.weights[i]) w *= scale;
    };
    const long nl = static_cast<long>(n);
    for (long i = 0; i < nl; ++i) {
        if (i >= r && i <= nl - 1 - r) build(i, i - r, 2 * r + 1);
        else if (i < r) build(i, 0, one_sided);
        else build(i, nl - one_sided, one_sided);
    }
    return st;
}

template <typename T>
Field<T> apply_axis(const Field<T> &f, int axis, int derivative, int accuracy) {
    const Grid &g = f.grid();
    check_axis(g, axis);
    const std::size_t n = g.count(axis);
    const long s = static_cast<long>(g.stride(axis));
    const AxisStencils st = axis_stencils(n, g.spacing(axis), derivative, accuracy);
    Field<T> out(g);
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
        const std::size_t i = (idx / s) % n;
        const auto &off = st.offsets[i];
        const auto &w = st.weights[i];
        T acc{};
        for (std::size_t j = 0; j < off.size(); ++j) acc += w[j] * f[static_cast<std::size_t>(idx + off[j] * s)];
        out[idx] = acc;
    }
    return out;
}

}  // namespace

std::vector<double> fd_weights(const std::vector<double> &x, int m) {
    // Fornberg (1988), weights at z = 0.
    const int n = static_cast<int>(x.size()) - 1;
    if (n < m) throw ConfigError("not enough points for the requested derivative");
    std::vector<std::vector<double>> c(n + 1, std::vector<double>(m + 1, 0.0));
    double c1 = 1.0;
    double c4 = x[0];
    c[0][0] = 1.0;
    for (int i = 1; i <= n; ++i) {
        const int mn = std::min(i, m);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = x[i];
        for (int j = 0; j < i; ++j) {
            const double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(n + 1);
    for (int i = 0; i <= n; ++i) w[i] = c[i][m];
    return w;
}

template <typename T>
Field<T> partial(const Field<T> &f, int axis, int accuracy) {
    return apply_axis(f, axis, 1, accuracy);
}

template <typename T>
Field<T> second_partial(const Field<T> &f, int axis, int accuracy) {
    return apply_axis(f, axis, 2, accuracy);
}

template <typename T>
VectorField<T> gradient(const Field<T> &f, int accuracy) {
    VectorField<T> v;
    for (int a = 0; a < f.grid().dimension(); ++a) v.components.push_back(partial(f, a, accuracy));
    return v;
}

template <typename T>
Field<T> divergence(const VectorField<T> &v, int accuracy) {
    if (v.components.empty()) throw ConfigError("empty vector field");
    const Grid &g = v.grid();
    if (v.dimension() != g.dimension()) throw ConfigError("vector field component count must equal grid dimension");
    Field<T> out(g);
    for (int a = 0; a < g.dimension(); ++a) {
        v[a].check_same(v[0]);
        out += partial(v[a], a, accuracy);
    }
    return out;
}

template <typename T>
Field<T> laplacian(const Field<T> &f, int accuracy) {
    Field<T> out(f.grid());
    for (int a = 0; a < f.grid().dimension(); ++a) out += second_partial(f, a, accuracy);
    return out;
}

template Field<double> partial(const Field<double> &, int, int);
template Field<complexd> partial(const Field<complexd> &, int, int);
template Field<double> second_partial(const Field<double> &, int, int);
template Field<complexd> second_partial(const Field<complexd> &, int, int);
template VectorField<double> gradient(const Field<double> &, int);
template VectorField<complexd> gradient(const Field<complexd> &, int);
template Field<double> divergence(const VectorField<double> &, int);
template Field<complexd> divergence(const VectorField<complexd> &, int);
template Field<double> laplacian(const Field<double> &, int);
template Field<complexd> laplacian(const Field<complexd> &, int);

RealField real_part(const ComplexField &f) {
    RealField out(f.grid());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i].real();
    return out;
}

RealField imag_part(const ComplexField &f) {
    RealField out(f.grid());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i].imag();
    return out;
}

RealField abs_squared(const ComplexField &f) {
    RealField out(f.grid());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = std::norm(f[i]);
    return out;
}

ComplexField to_complex(const RealField &f) {
    ComplexField out(f.grid());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i];
    return out;
}

RealVectorField real_part(const ComplexVectorField &v) {
    RealVectorField out;
    for (const auto &c : v.components) out.components.push_back(real_part(c));
    return out;
}

RealVectorField imag_part(const ComplexVectorField &v) {
    RealVectorField out;
    for (const auto &c : v.components) out.components.push_back(imag_part(c));
    return out;
}

RealField dot(const RealVectorField &a, const RealVectorField &b) {
    if (a.dimension() != b.dimension()) throw ConfigError("vector field dimensions differ");
    RealField out(a.grid());
    for (int c = 0; c < a.dimension(); ++c) {
        a[c].check_same(b[c]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += a[c][i] * b[c][i];
    }
    return out;
}

template <typename T>
double l2_norm(const Field<T> &f) {
    double s = 0.0;
    for (const auto &v : f.values()) s += std::norm(v);
    return std::sqrt(s * f.grid().cell_volume());
}

template double l2_norm(const Field<double> &);
template double l2_norm(const Field<complexd> &);

template <typename T>
double l2_norm_interior(const Field<T> &f, std::size_t min_depth) {
    double s = 0.0;
    const Grid &g = f.grid();
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (g.depth(i) >= min_depth) s += std::norm(f[i]);
    }
    return std::sqrt(s * g.cell_volume());
}

template double l2_norm_interior(const Field<double> &, std::size_t);
template double l2_norm_interior(const Field<complexd> &, std::size_t);

double inner(const RealField &a, const RealField &b) {
    a.check_same(b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s * a.grid().cell_volume();
}

template <typename T>
double max_abs(const Field<T> &f) {
    double m = 0.0;
    for (const auto &v : f.values()) m = std::max(m, std::abs(v));
    return m;
}

template double max_abs(const Field<double> &);
template double max_abs(const Field<complexd> &);

double min_value(const RealField &f) { return *std::min_element(f.values().begin(), f.values().end()); }
double max_value(const RealField &f) { return *std::max_element(f.values().begin(), f.values().end()); }

}  // namespace qtat
