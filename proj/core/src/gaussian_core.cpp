#include "kbl/gaussian_core.hpp"

#include "kbl/errors.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <numbers>

namespace kbl {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

double maxwellian(const Vec3& v) noexcept {
    return std::pow(kTwoPi, -1.5) * std::exp(-0.5 * norm2(v));
}

void WeightSpec::validate() const {
    if (!(beta >= 3.0) || !std::isfinite(beta)) {
        throw ConfigError("weight: beta must satisfy beta >= 3");
    }
    if (!(varpi >= 0.0 && varpi < 0.125)) {
        throw ConfigError("weight: varpi must satisfy 0 <= varpi < 1/8");
    }
}

double weight(const Vec3& v, const WeightSpec& spec) {
    spec.validate();
    const double r2 = norm2(v);
    return std::pow(1.0 + r2, 0.5 * spec.beta) * std::exp(spec.varpi * r2);
}

MaxwellianContext::MaxwellianContext(const VelocityGrid& grid) : grid_(&grid) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    mu_.resize(n);
    sqrt_mu_.resize(n);
    raw_.resize(n, 5);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3& v = grid.node(static_cast<std::size_t>(i));
        mu_[i] = maxwellian(v);
        sqrt_mu_[i] = std::sqrt(mu_[i]);
        raw_(i, 0) = sqrt_mu_[i];
        raw_(i, 1) = v[0] * sqrt_mu_[i];
        raw_(i, 2) = v[1] * sqrt_mu_[i];
        raw_(i, 3) = v[2] * sqrt_mu_[i];
        raw_(i, 4) = (0.5 * norm2(v) - 1.5) * sqrt_mu_[i];
    }
    const NodeValues& w = grid.weights();
    raw_gram_ = raw_.transpose() * w.asDiagonal() * raw_;

    // Modified Gram-Schmidt, two passes.
    ortho_ = raw_;
    for (int pass = 0; pass < 2; ++pass) {
        for (int k = 0; k < 5; ++k) {
            for (int j = 0; j < k; ++j) {
                const double c = (ortho_.col(j).array() * ortho_.col(k).array() * w.array()).sum();
                ortho_.col(k) -= c * ortho_.col(j);
            }
            const double nk = std::sqrt((ortho_.col(k).array().square() * w.array()).sum());
            if (!(nk > 0.0)) throw NumericalError("invariant basis is degenerate on this grid");
            ortho_.col(k) /= nk;
        }
    }

    double s = 0.0;
    for (std::size_t i : grid.negative_v3()) {
        const auto e = static_cast<Eigen::Index>(i);
        s += w[e] * std::sqrt(kTwoPi) * mu_[e] * std::abs(grid.node(i)[2]);
    }
    if (!(s > 0.0)) throw NumericalError("wall normalization vanished");
    wall_kappa_ = 1.0 / s;
    wall_profile_ = (kTwoPi * mu_.array()).sqrt() * wall_kappa_;
}

double MaxwellianContext::inner(const NodeValues& f, const NodeValues& g) const {
    return (f.array() * g.array() * weights().array()).sum();
}

double MaxwellianContext::norm(const NodeValues& f) const { return std::sqrt(inner(f, f)); }

Eigen::Matrix<double, 5, 1> MaxwellianContext::invariant_moments(const NodeValues& f) const {
    return ortho_.transpose() * (weights().array() * f.array()).matrix();
}

NodeValues MaxwellianContext::project(const NodeValues& f) const {
    return ortho_ * invariant_moments(f);
}

NodeValues MaxwellianContext::project_out(const NodeValues& f) const { return f - project(f); }

HydroCoeffs MaxwellianContext::coefficients(const NodeValues& f) const {
    const Eigen::Matrix<double, 5, 1> rhs = raw_.transpose() * (weights().array() * f.array()).matrix();
    const Eigen::Matrix<double, 5, 1> c = raw_gram_.ldlt().solve(rhs);
    return {c[0], {c[1], c[2], c[3]}, c[4]};
}

NodeValues MaxwellianContext::from_coefficients(const HydroCoeffs& c) const {
    return c.a * raw_.col(0) + c.b[0] * raw_.col(1) + c.b[1] * raw_.col(2) + c.b[2] * raw_.col(3) +
           c.c * raw_.col(4);
}

HydroProjection MaxwellianContext::hydro_project(const NodeValues& f) const {
    return {project(f), coefficients(f)};
}

double MaxwellianContext::wall_flux(const NodeValues& f) const {
    const NodeValues& w = weights();
    double z = 0.0;
    for (std::size_t i : grid_->negative_v3()) {
        const auto e = static_cast<Eigen::Index>(i);
        z += w[e] * std::abs(grid_->node(i)[2]) * sqrt_mu_[e] * f[e];
    }
    return z;
}

double MaxwellianContext::wall_flux_trace(const NodeValues& trace) const {
    const auto& neg = grid_->negative_v3();
    if (static_cast<std::size_t>(trace.size()) != neg.size()) {
        throw PreconditionError("pgamma: trace length does not match the outgoing half-grid");
    }
    const NodeValues& w = weights();
    double z = 0.0;
    for (std::size_t k = 0; k < neg.size(); ++k) {
        const auto e = static_cast<Eigen::Index>(neg[k]);
        z += w[e] * std::abs(grid_->node(neg[k])[2]) * sqrt_mu_[e] * trace[static_cast<Eigen::Index>(k)];
    }
    return z;
}

NodeValues MaxwellianContext::pgamma(const NodeValues& f) const { return wall_flux(f) * wall_profile_; }

NodeValues MaxwellianContext::pgamma_trace(const NodeValues& trace) const {
    return wall_flux_trace(trace) * wall_profile_;
}

double MaxwellianContext::wall_measure() const {
    const NodeValues& w = weights();
    double s = 0.0;
    for (std::size_t i : grid_->negative_v3()) {
        const auto e = static_cast<Eigen::Index>(i);
        s += w[e] * std::sqrt(kTwoPi) * mu_[e] * std::abs(grid_->node(i)[2]);
    }
    return s * wall_kappa_;
}

MomentFunctionals MaxwellianContext::moment_functionals() const {
    MomentFunctionals m;
    const auto n = static_cast<Eigen::Index>(size());
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) m.A[i][j].resize(n);
        m.B[i].resize(n);
    }
    for (Eigen::Index k = 0; k < n; ++k) {
        const Vec3& v = grid_->node(static_cast<std::size_t>(k));
        const double r2 = norm2(v);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                m.A[i][j][k] = (v[i] * v[j] - (i == j ? r2 / 3.0 : 0.0)) * sqrt_mu_[k];
            }
            m.B[i][k] = 0.5 * v[i] * (r2 - 5.0) * sqrt_mu_[k];
        }
    }
    return m;
}

std::vector<MomentIdentity> MaxwellianContext::verify_gaussian_moments() const {
    struct Item {
        const char* label;
        double expected;
        double (*integrand)(const Vec3&);
    };
    // Expected values are exact standard-normal moments.
    static const Item items[] = {
        {"v3^2 (|v|^2-3)(|v|^2-5)", 10.0,
         [](const Vec3& v) { const double r = norm2(v); return v[2] * v[2] * (r - 3.0) * (r - 5.0); }},
        {"v3^2 (|v|^2-5)", 0.0,
         [](const Vec3& v) { return v[2] * v[2] * (norm2(v) - 5.0); }},
        {"v3^2 (v3^2-1)", 2.0,
         [](const Vec3& v) { return v[2] * v[2] * (v[2] * v[2] - 1.0); }},
        {"|v|^2 v1^2 v3^2", 7.0,
         [](const Vec3& v) { return norm2(v) * v[0] * v[0] * v[2] * v[2]; }},
        {"v3^2 (|v|^2-10)", -5.0,
         [](const Vec3& v) { return v[2] * v[2] * (norm2(v) - 10.0); }},
        {"(|v|^2-3) v3^2 (|v|^2-10)", 0.0,
         [](const Vec3& v) { const double r = norm2(v); return (r - 3.0) * v[2] * v[2] * (r - 10.0); }},
    };
    std::vector<MomentIdentity> out;
    const NodeValues& w = weights();
    for (const Item& it : items) {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            const auto e = static_cast<Eigen::Index>(i);
            s += w[e] * mu_[e] * it.integrand(grid_->node(i));
        }
        out.push_back({it.label, s, it.expected, std::abs(s - it.expected)});
    }
    return out;
}

NodeValues MaxwellianContext::sample(double (*fn)(const Vec3&)) const {
    return sample_with(fn);
}

NodeValues MaxwellianContext::weight_values(const WeightSpec& spec) const {
    spec.validate();
    return sample_with([&](const Vec3& v) {
        const double r2 = norm2(v);
        return std::pow(1.0 + r2, 0.5 * spec.beta) * std::exp(spec.varpi * r2);
    });
}

}  // namespace kbl
