#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <vector>

#include "qtat/errors.hpp"

namespace qtat {

using complexd = std::complex<double>;

// Node-centred uniform grid on the centred box [-L, L]^d. Boundary nodes sit on
// the faces, node order is row-major with axis 0 slowest.
class Grid {
public:
    Grid() = default;
    Grid(int dimension, std::size_t nodes_per_axis, double half_width);
    Grid(std::vector<std::size_t> counts, double half_width);

    int dimension() const { return dim_; }
    std::size_t count(int axis) const { return counts_[axis]; }
    double spacing(int axis) const { return spacing_[axis]; }
    double min_spacing() const;
    double half_width() const { return half_width_; }
    std::size_t size() const { return size_; }
    std::size_t stride(int axis) const { return strides_[axis]; }
    // Volume element of the Riemann-sum quadrature used by every L2 norm.
    double cell_volume() const;

    std::array<std::size_t, 3> unravel(std::size_t index) const;
    std::size_t ravel(const std::array<std::size_t, 3> &ijk) const;
    double coordinate(int axis, std::size_t i) const { return -half_width_ + spacing_[axis] * i; }
    std::array<double, 3> position(std::size_t index) const;

    // Number of faces the node lies on (0 interior, 1 face, 2 edge/corner, 3 corner in 3D).
    int face_count(std::size_t index) const;
    bool on_boundary(std::size_t index) const { return face_count(index) > 0; }
    // Outward unit normal; on edges and corners the normalised average of the
    // incident face normals.
    std::array<double, 3> outward_normal(std::size_t index) const;
    // Boundary node indices in increasing order.
    const std::vector<std::size_t> &boundary_nodes() const { return boundary_; }
    // Distance (in nodes) to the nearest face.
    std::size_t depth(std::size_t index) const;
    // Euclidean distance to the nearest edge or corner (where two faces meet).
    double edge_distance(std::size_t index) const;

    // rad(X) = sup |x| over the boundary and the star-shape constant gamma with
    // x . nu >= gamma rad(X).
    double radius() const { return half_width_ * std::sqrt(static_cast<double>(dim_)); }
    double star_constant() const { return 1.0 / std::sqrt(static_cast<double>(dim_)); }

    bool operator==(const Grid &other) const;
    bool operator!=(const Grid &other) const { return !(*this == other); }

private:
    void init();

    int dim_ = 0;
    std::array<std::size_t, 3> counts_{1, 1, 1};
    std::array<double, 3> spacing_{0, 0, 0};
    std::array<std::size_t, 3> strides_{0, 0, 0};
    double half_width_ = 0.0;
    std::size_t size_ = 0;
    std::vector<std::size_t> boundary_;
};

template <typename T>
class Field {
public:
    using value_type = T;

    Field() = default;
    explicit Field(const Grid &grid, T fill = T{}) : grid_(grid), values_(grid.size(), fill) {}
    Field(const Grid &grid, std::vector<T> values) : grid_(grid), values_(std::move(values)) {
        if (values_.size() != grid_.size()) {
            throw ConfigError("field value count does not match grid size");
        }
    }

    // Samples fn(x) at every node.
    template <typename Fn>
    static Field sample(const Grid &grid, Fn &&fn) {
        Field out(grid);
        for (std::size_t i = 0; i < grid.size(); ++i) out.values_[i] = fn(grid.position(i));
        return out;
    }

    const Grid &grid() const { return grid_; }
    std::size_t size() const { return values_.size(); }
    T &operator[](std::size_t i) { return values_[i]; }
    const T &operator[](std::size_t i) const { return values_[i]; }
    std::vector<T> &values() { return values_; }
    const std::vector<T> &values() const { return values_; }

    Field &operator+=(const Field &o) {
        check_same(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
        return *this;
    }
    Field &operator-=(const Field &o) {
        check_same(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
        return *this;
    }
    Field &operator*=(T s) {
        for (auto &v : values_) v *= s;
        return *this;
    }
    friend Field operator+(Field a, const Field &b) { return a += b; }
    friend Field operator-(Field a, const Field &b) { return a -= b; }
    friend Field operator*(Field a, T s) { return a *= s; }
    friend Field operator*(T s, Field a) { return a *= s; }

    bool all_finite() const;

    void check_same(const Field &o) const {
        if (grid_ != o.grid_) throw ConfigError("fields live on different grids");
    }

private:
    Grid grid_;
    std::vector<T> values_;
};

using RealField = Field<double>;
using ComplexField = Field<complexd>;

template <typename T>
struct VectorField {
    VectorField() = default;
    explicit VectorField(const Grid &grid) : components(grid.dimension(), Field<T>(grid)) {}
    const Grid &grid() const { return components.front().grid(); }
    int dimension() const { return static_cast<int>(components.size()); }
    Field<T> &operator[](int a) { return components[a]; }
    const Field<T> &operator[](int a) const { return components[a]; }

    std::vector<Field<T>> components;
};

using RealVectorField = VectorField<double>;
using ComplexVectorField = VectorField<complexd>;

// Finite-difference weights for the derivative of the given order at 0 from
// samples at the given offsets (Fornberg's recursion).
std::vector<double> fd_weights(const std::vector<double> &offsets, int derivative);

// Finite-difference calculus. Central differences in the interior, one-sided
// stencils of the same accuracy on the faces. `accuracy` is the (even) order
// of the truncation error; 2 is the default everywhere.
template <typename T>
Field<T> partial(const Field<T> &f, int axis, int accuracy = 2);
template <typename T>
Field<T> second_partial(const Field<T> &f, int axis, int accuracy = 2);
template <typename T>
VectorField<T> gradient(const Field<T> &f, int accuracy = 2);
template <typename T>
Field<T> divergence(const VectorField<T> &v, int accuracy = 2);
template <typename T>
Field<T> laplacian(const Field<T> &f, int accuracy = 2);

// Component-wise helpers.
RealField real_part(const ComplexField &f);
RealField imag_part(const ComplexField &f);
RealField abs_squared(const ComplexField &f);
ComplexField to_complex(const RealField &f);
RealVectorField real_part(const ComplexVectorField &v);
RealVectorField imag_part(const ComplexVectorField &v);
RealField dot(const RealVectorField &a, const RealVectorField &b);

// Riemann-sum L2 norm and inner product (volume element h^d).
template <typename T>
double l2_norm(const Field<T> &f);
double inner(const RealField &a, const RealField &b);
template <typename T>
double max_abs(const Field<T> &f);
double min_value(const RealField &f);
double max_value(const RealField &f);

// L2 norm restricted to nodes with depth >= min_depth.
template <typename T>
double l2_norm_interior(const Field<T> &f, std::size_t min_depth);

}  // namespace qtat
