#pragma once

#include "kbl/gaussian_core.hpp"
#include "kbl/velocity_grid.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <memory>
#include <string>
#include <vector>

namespace kbl {

/// Unit-sphere quadrature: Gauss-Legendre in cos(theta) on the upper
/// hemisphere times a uniform azimuth, mirrored to the full sphere through
/// the evenness of the hard-sphere integrand in omega.
struct SphereRule {
    int n_polar = 0;
    int n_azimuth = 0;
    std::vector<Vec3> nodes;      // upper-hemisphere representatives
    std::vector<double> weights;  // already doubled; they sum to 4 pi

    static SphereRule hemisphere_product(int n_polar, int n_azimuth);
    std::size_t size() const noexcept { return nodes.size(); }
    std::string description() const;
};

/// How post-collision values are read off the lattice.
enum class InterpolationMode {
    /// Trilinear interpolation of f itself.
    Trilinear,
    /// Trilinear interpolation of f / sqrt(mu), rescaled by sqrt(mu) at the
    /// target; exact for the collision invariants up to box truncation.
    MaxwellianWeighted,
    /// Interpolate f, then rescale by sqrt(mu) at the target over the
    /// interpolated sqrt(mu); exact for sqrt(mu) and bounded near the box edge.
    MaxwellianRatio,
};

const char* to_string(InterpolationMode m) noexcept;
InterpolationMode interpolation_mode_from_string(const std::string& s);

struct CollisionOptions {
    int sphere_polar = 4;
    int sphere_azimuth = 8;
    InterpolationMode interpolation = InterpolationMode::MaxwellianRatio;
    /// Dense K is refused above this many velocity nodes.
    std::size_t max_nodes = 6000;
};

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

/// Precomputed collision geometry on a uniform lattice. For lattice nodes
/// v and u the post-collision offsets depend only on the index difference
/// and the sphere node, so the interpolation data is tabulated once.
class CollisionQuadrature {
public:
    CollisionQuadrature(const MaxwellianContext& ctx, const CollisionOptions& opts);
    ~CollisionQuadrature();
    CollisionQuadrature(CollisionQuadrature&&) noexcept;
    CollisionQuadrature& operator=(CollisionQuadrature&&) noexcept;

    const MaxwellianContext& context() const noexcept { return *ctx_; }
    const SphereRule& sphere() const noexcept { return sphere_; }
    const CollisionOptions& options() const noexcept { return opts_; }

    /// nu(v_i) = sum_j sum_s w_j omega_s |(v_i - u_j) . omega_s| mu(u_j)
    NodeValues collision_frequency() const;

    /// Raw K = K2 - K1 before any conservation repair.
    Eigen::MatrixXd assemble_raw_K() const;

    /// Gamma(f, g) = mu^{-1/2} Q(sqrt(mu) f, sqrt(mu) g), one velocity vector.
    NodeValues gamma(const NodeValues& f, const NodeValues& g) const;
    /// Column-wise Gamma over a slab field (rows = velocity nodes).
    Eigen::MatrixXd gamma_columns(const Eigen::MatrixXd& f, const Eigen::MatrixXd& g) const;
    /// Q(F1, F2) gain and loss parts, evaluated with the same quadrature.
    NodeValues q_gain(const NodeValues& F1, const NodeValues& F2) const;
    NodeValues q_loss(const NodeValues& F1, const NodeValues& F2) const;

private:
    struct Table;
    const MaxwellianContext* ctx_;
    CollisionOptions opts_;
    SphereRule sphere_;
    std::unique_ptr<Table> table_;
};

/// Conservation and symmetry defects of the raw quadrature, before repair.
struct RawOperatorDefects {
    /// ||L0 chi_k||_inf / (||K0||_inf ||chi_k||_inf) for the five orthonormal invariants.
    std::array<double, 5> null_space{};
    double null_space_max = 0.0;
    /// ||W K0 - (W K0)^T||_max / ||W K0||_max
    double symmetry = 0.0;
};

/// L = diag(nu) - K with the exact discrete null space N.
class LinearizedOperator {
public:
    LinearizedOperator(const MaxwellianContext& ctx, NodeValues nu, Eigen::MatrixXd raw_K,
                       std::string sphere_description, InterpolationMode mode);

    const MaxwellianContext& context() const noexcept { return *ctx_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(nu_.size()); }
    const NodeValues& nu() const noexcept { return nu_; }
    const Eigen::MatrixXd& K() const noexcept { return K_; }
    const Eigen::MatrixXd& L() const noexcept { return L_; }
    const RawOperatorDefects& raw_defects() const noexcept { return raw_; }
    const std::string& sphere_description() const noexcept { return sphere_; }
    InterpolationMode interpolation() const noexcept { return mode_; }

    NodeValues apply_L(const NodeValues& f) const;
    Eigen::MatrixXd apply_L_columns(const Eigen::MatrixXd& f) const;
    Eigen::MatrixXd apply_K_columns(const Eigen::MatrixXd& f) const;

    /// Solves L x = y with x orthogonal to N; y must already lie in N-perp.
    NodeValues solve_Linv(const NodeValues& y) const;
    /// Projects y onto N-perp first (for functionals whose orthogonality is
    /// only exact up to quadrature), then solves.
    NodeValues solve_Linv_projected(const NodeValues& y) const;

    /// ||W K - (W K)^T||_max / ||W K||_max after the repair.
    double symmetry_defect() const;
    /// max_k ||L chi_k||_inf over the orthonormal invariants.
    double null_space_defect() const;

private:
    const MaxwellianContext* ctx_;
    NodeValues nu_;
    Eigen::MatrixXd K_;
    Eigen::MatrixXd L_;
    Eigen::LLT<Eigen::MatrixXd> shifted_;  // factor of W (L + P)
    RawOperatorDefects raw_;
    std::string sphere_;
    InterpolationMode mode_;
};

/// Assembles nu and K by grid x sphere quadrature and repairs conservation.
LinearizedOperator assemble_operator(const MaxwellianContext& ctx, const CollisionOptions& opts = {});

NodeValues collision_frequency(const MaxwellianContext& ctx, const CollisionOptions& opts = {});

NodeValues apply_L(const LinearizedOperator& op, const NodeValues& f);
NodeValues solve_Linv(const LinearizedOperator& op, const NodeValues& y);

struct Kappas {
    double kappa1 = 0.0;      // <A31, L^{-1} A31>
    double kappa1_alt = 0.0;  // <A32, L^{-1} A32>
    double kappa2 = 0.0;      // <B3, L^{-1} B3>
};

/// Cached inverse images used by the far-field machinery.
struct TransportFunctionals {
    MomentFunctionals moments;
    NodeValues Linv_A31;
    NodeValues Linv_A32;
    NodeValues Linv_B3;
    Kappas kappas;
};

/// Throws NumericalError on a non-positive kappa.
Kappas kappas(const LinearizedOperator& op, const MomentFunctionals& fun);
TransportFunctionals transport_functionals(const LinearizedOperator& op);

struct CoercivityResult {
    double c0 = 0.0;
    int iterations = 0;
    bool converged = false;
    NodeValues mode;
};

/// Smallest value of <f, L f> / <f, nu f> over N-perp by inverse iteration.
CoercivityResult estimate_c0(const LinearizedOperator& op, double tol = 1e-6, int max_iter = 5000);

NodeValues apply_Q(const CollisionQuadrature& q, const NodeValues& F1, const NodeValues& F2);
NodeValues gamma_bilinear(const CollisionQuadrature& q, const NodeValues& f, const NodeValues& g);

}  // namespace kbl
