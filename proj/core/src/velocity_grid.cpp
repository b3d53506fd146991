#include "kbl/velocity_grid.hpp"

#include "kbl/errors.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace kbl {

VelocityGrid::VelocityGrid(int n_per_axis, double v_max, bool stagger)
    : n_(n_per_axis), v_max_(v_max), stagger_(stagger) {
    if (n_per_axis < 4) {
        throw ConfigError("velocity grid: n_per_axis must be >= 4 (got " +
                          std::to_string(n_per_axis) + ")");
    }
    if (!(v_max > 0.0) || !std::isfinite(v_max)) {
        throw ConfigError("velocity grid: v_max must be positive and finite");
    }
    if (stagger_) {
        h_ = 2.0 * v_max_ / n_;
        offset_ = 0.5 * h_;
    } else {
        h_ = 2.0 * v_max_ / (n_ - 1);
        offset_ = 0.0;
    }

    std::vector<double> w1(n_, h_);
    if (!stagger_) {
        w1.front() *= 0.5;
        w1.back() *= 0.5;
    }
    std::vector<double> c1(n_);
    for (int k = 0; k < n_; ++k) c1[k] = coordinate(k);
    // Symmetrize explicitly so that the specular image is an exact node.
    for (int k = 0; k < n_ / 2; ++k) {
        const double a = 0.5 * (c1[n_ - 1 - k] - c1[k]);
        c1[k] = -a;
        c1[n_ - 1 - k] = a;
    }
    if (n_ % 2 == 1) c1[n_ / 2] = 0.0;

    const std::size_t total = static_cast<std::size_t>(n_) * n_ * n_;
    nodes_.resize(total);
    weights_.resize(static_cast<Eigen::Index>(total));
    specular_.resize(total);
    for (int a = 0; a < n_; ++a) {
        for (int b = 0; b < n_; ++b) {
            for (int c = 0; c < n_; ++c) {
                const std::size_t i = index(a, b, c);
                nodes_[i] = {c1[a], c1[b], c1[c]};
                weights_[static_cast<Eigen::Index>(i)] = w1[a] * w1[b] * w1[c];
                specular_[i] = index(a, b, n_ - 1 - c);
                if (c1[c] > 0.0) {
                    positive_.push_back(i);
                } else if (c1[c] < 0.0) {
                    negative_.push_back(i);
                } else {
                    grazing_ = true;
                }
            }
        }
    }
}

std::array<int, 3> VelocityGrid::lattice_index(std::size_t i) const noexcept {
    const int c = static_cast<int>(i % n_);
    const int b = static_cast<int>((i / n_) % n_);
    const int a = static_cast<int>(i / (static_cast<std::size_t>(n_) * n_));
    return {a, b, c};
}

double VelocityGrid::min_abs_v3() const noexcept {
    double m = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n_; ++k) m = std::min(m, std::abs(nodes_[index(0, 0, k)][2]));
    return m;
}

InterpolationStencil VelocityGrid::stencil(const Vec3& p) const noexcept {
    InterpolationStencil s;
    int lo[3];
    double t[3];
    for (int d = 0; d < 3; ++d) {
        if (!(std::abs(p[d]) <= v_max_)) return s;
        const double u = (p[d] + v_max_ - offset_) / h_;
        int k = static_cast<int>(std::floor(u));
        double frac = u - k;
        // Grid points with exact lattice coordinates land on a single corner.
        if (k == n_ - 1 && frac < 1e-14) frac = 0.0;
        lo[d] = k;
        t[d] = frac;
    }
    for (int corner = 0; corner < 8; ++corner) {
        int idx[3];
        double w = 1.0;
        bool inside = true;
        for (int d = 0; d < 3; ++d) {
            const int bit = (corner >> (2 - d)) & 1;
            idx[d] = lo[d] + bit;
            w *= bit ? t[d] : 1.0 - t[d];
            if (idx[d] < 0 || idx[d] >= n_) inside = false;
        }
        if (!inside || w == 0.0) continue;
        s.entries[s.size++] = {index(idx[0], idx[1], idx[2]), w};
    }
    return s;
}

double VelocityGrid::interpolate(const NodeValues& values, const Vec3& p) const {
    const InterpolationStencil s = stencil(p);
    double acc = 0.0;
    for (int k = 0; k < s.size; ++k) {
        acc += s.entries[k].weight * values[static_cast<Eigen::Index>(s.entries[k].node)];
    }
    return acc;
}

std::string VelocityGrid::signature() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "n%d_vmax%.6g_%s", n_, v_max_, stagger_ ? "stag" : "trap");
    return buf;
}

VelocityGrid build_grid(int n_per_axis, double v_max, bool stagger) {
    return VelocityGrid(n_per_axis, v_max, stagger);
}

}  // namespace kbl
