#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace kbl {

using Vec3 = std::array<double, 3>;
using NodeValues = Eigen::VectorXd;

/// One corner of a trilinear interpolation stencil.
struct StencilEntry {
    std::size_t node;
    double weight;
};

/// Up to eight corners; corners falling outside the node hull are dropped
/// (zero extension), so the weights may sum to less than one near the box.
struct InterpolationStencil {
    std::array<StencilEntry, 8> entries{};
    int size = 0;
};

/// Truncated tensor-product velocity lattice on [-v_max, v_max]^3.
///
/// With staggering the nodes are the cell centres of n uniform cells per axis
/// (midpoint rule, no coordinate is ever zero). Without staggering the nodes
/// include both box faces and carry trapezoidal weights.
class VelocityGrid {
public:
    VelocityGrid(int n_per_axis, double v_max, bool stagger);

    int n_per_axis() const noexcept { return n_; }
    double v_max() const noexcept { return v_max_; }
    double spacing() const noexcept { return h_; }
    bool staggered() const noexcept { return stagger_; }
    /// Shift of the first node away from -v_max (h/2 when staggered).
    double stagger_offset() const noexcept { return offset_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    const Vec3& node(std::size_t i) const { return nodes_[i]; }
    double weight(std::size_t i) const { return weights_[i]; }
    const std::vector<Vec3>& nodes() const noexcept { return nodes_; }
    const NodeValues& weights() const noexcept { return weights_; }

    /// 1D coordinate of lattice index k along any axis.
    double coordinate(int k) const noexcept { return -v_max_ + offset_ + k * h_; }
    std::size_t index(int i1, int i2, int i3) const noexcept {
        return (static_cast<std::size_t>(i1) * n_ + i2) * n_ + i3;
    }
    std::array<int, 3> lattice_index(std::size_t i) const noexcept;

    /// Index of (v1, v2, -v3).
    std::size_t specular_map(std::size_t i) const noexcept { return specular_[i]; }

    /// Nodes with v3 > 0 (incoming at x = 0) and v3 < 0, both in index order.
    const std::vector<std::size_t>& positive_v3() const noexcept { return positive_; }
    const std::vector<std::size_t>& negative_v3() const noexcept { return negative_; }
    bool has_grazing_nodes() const noexcept { return grazing_; }
    double min_abs_v3() const noexcept;

    InterpolationStencil stencil(const Vec3& p) const noexcept;
    /// Trilinear interpolation with zero extension; zero outside the box.
    double interpolate(const NodeValues& values, const Vec3& p) const;

    /// Compact description used in manifests and CSV keys.
    std::string signature() const;

private:
    int n_;
    double v_max_;
    bool stagger_;
    double h_;
    double offset_;
    std::vector<Vec3> nodes_;
    NodeValues weights_;
    std::vector<std::size_t> specular_;
    std::vector<std::size_t> positive_;
    std::vector<std::size_t> negative_;
    bool grazing_ = false;
};

/// Validating factory: n_per_axis >= 4 and v_max > 0.
VelocityGrid build_grid(int n_per_axis, double v_max, bool stagger = true);

inline double dot(const Vec3& a, const Vec3& b) noexcept {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm2(const Vec3& a) noexcept { return dot(a, a); }

}  // namespace kbl
