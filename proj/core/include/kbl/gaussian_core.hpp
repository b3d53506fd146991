#pragma once

#include "kbl/velocity_grid.hpp"

#include <Eigen/Core>

#include <array>
#include <string>
#include <vector>

namespace kbl {

using InvariantBasis = Eigen::Matrix<double, Eigen::Dynamic, 5>;

double maxwellian(const Vec3& v) noexcept;

/// Polynomial-exponential velocity weight (1+|v|^2)^{beta/2} exp(varpi |v|^2).
struct WeightSpec {
    double beta = 3.0;
    double varpi = 0.0;

    /// Throws ConfigError unless beta >= 3 and 0 <= varpi < 1/8.
    void validate() const;
};

double weight(const Vec3& v, const WeightSpec& spec);

/// Coefficients in the raw basis {sqrt(mu), v_i sqrt(mu), (|v|^2/2 - 3/2) sqrt(mu)}.
struct HydroCoeffs {
    double a = 0.0;
    std::array<double, 3> b{};
    double c = 0.0;
};

struct HydroProjection {
    NodeValues projected;
    HydroCoeffs coeffs;
};

struct MomentFunctionals {
    /// A[i][j] = (v_i v_j - delta_ij |v|^2/3) sqrt(mu)
    std::array<std::array<NodeValues, 3>, 3> A;
    /// B[i] = v_i (|v|^2 - 5) sqrt(mu) / 2
    std::array<NodeValues, 3> B;
};

struct MomentIdentity {
    std::string label;
    double computed;
    double expected;
    double defect;
};

/// Maxwellian samples, discrete inner product, hydrodynamic projection and the
/// diffuse wall operator on a fixed grid.
class MaxwellianContext {
public:
    explicit MaxwellianContext(const VelocityGrid& grid);

    const VelocityGrid& grid() const noexcept { return *grid_; }
    std::size_t size() const noexcept { return grid_->size(); }
    const NodeValues& mu() const noexcept { return mu_; }
    const NodeValues& sqrt_mu() const noexcept { return sqrt_mu_; }
    const NodeValues& weights() const noexcept { return grid_->weights(); }
    /// Columns: sqrt(mu), v1 sqrt(mu), v2 sqrt(mu), v3 sqrt(mu), (|v|^2/2-3/2) sqrt(mu).
    const InvariantBasis& raw_basis() const noexcept { return raw_; }
    /// Orthonormal under the discrete inner product, same span as raw_basis.
    const InvariantBasis& invariant_basis() const noexcept { return ortho_; }

    double inner(const NodeValues& f, const NodeValues& g) const;
    double norm(const NodeValues& f) const;

    HydroProjection hydro_project(const NodeValues& f) const;
    NodeValues project(const NodeValues& f) const;
    NodeValues project_out(const NodeValues& f) const;  // (I - P) f
    HydroCoeffs coefficients(const NodeValues& f) const;
    NodeValues from_coefficients(const HydroCoeffs& c) const;

    /// Discrete inner products <chi_k, f> with the orthonormal invariants.
    Eigen::Matrix<double, 5, 1> invariant_moments(const NodeValues& f) const;

    /// Outgoing wall flux z = sum_{v3<0} w |v3| sqrt(mu) f.
    double wall_flux(const NodeValues& f) const;
    /// Same, taking the outgoing trace only (ordered like grid().negative_v3()).
    double wall_flux_trace(const NodeValues& trace) const;
    /// Renormalization making sum_{v3<0} w sqrt(2 pi) mu |v3| exactly one.
    double wall_normalization() const noexcept { return wall_kappa_; }
    /// Diffuse wall profile sqrt(2 pi mu) * wall_normalization(), on all nodes.
    const NodeValues& wall_profile() const noexcept { return wall_profile_; }
    /// Diffuse reflection applied to a full-grid vector (uses its v3<0 part).
    NodeValues pgamma(const NodeValues& f) const;
    /// Diffuse reflection applied to an outgoing trace.
    NodeValues pgamma_trace(const NodeValues& trace) const;
    /// Discrete dsigma measure sum_{v3<0} w sqrt(2 pi) mu |v3| * normalization.
    double wall_measure() const;

    MomentFunctionals moment_functionals() const;
    std::vector<MomentIdentity> verify_gaussian_moments() const;

    NodeValues sample(double (*fn)(const Vec3&)) const;
    template <class Fn>
    NodeValues sample_with(Fn&& fn) const {
        NodeValues out(static_cast<Eigen::Index>(size()));
        for (std::size_t i = 0; i < size(); ++i) out[static_cast<Eigen::Index>(i)] = fn(grid_->node(i));
        return out;
    }

    NodeValues weight_values(const WeightSpec& spec) const;

private:
    const VelocityGrid* grid_;
    NodeValues mu_;
    NodeValues sqrt_mu_;
    InvariantBasis raw_;
    InvariantBasis ortho_;
    Eigen::Matrix<double, 5, 5> raw_gram_;
    double wall_kappa_ = 1.0;
    NodeValues wall_profile_;
};

}  // namespace kbl
