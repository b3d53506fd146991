#pragma once

#include "kbl/collision_op.hpp"
#include "kbl/slab_solver.hpp"

#include <Eigen/Core>

#include <array>
#include <functional>
#include <string>
#include <vector>

namespace kbl {

/// Non-decaying Maxwellian state left behind by the boundary layer.
struct FarFieldState {
    std::array<double, 4> phi{};    // phi0, phi1, phi2, phi3 at d_used
    std::array<double, 2> b_inf{};  // -phi1, -phi2
    double c_inf = 0.0;             // -phi3
    double d_used = 0.0;
    /// The sqrt(mu) coefficient is invisible to the wall operator and is
    /// dropped from f_inf.
    std::string normalization = "phi0_inf = 0";

    static FarFieldState from_phi(const std::array<double, 4>& phi, double d);
    bool consistent() const noexcept;
};

/// f_inf(v) = (b1 v1 + b2 v2 + c (|v|^2/2 - 3/2)) sqrt(mu)
NodeValues far_field_profile(const MaxwellianContext& ctx, const FarFieldState& s);
/// Phi(v) = (phi0 + phi1 v1 + phi2 v2 + phi3 (|v|^2/2 - 3/2)) sqrt(mu)
NodeValues phi_profile(const MaxwellianContext& ctx, const std::array<double, 4>& phi);

/// Coefficients of P f per x column, in the raw invariant basis.
struct MacroFields {
    std::vector<double> x;
    Eigen::VectorXd a, b1, b2, b3, c;

    std::size_t size() const noexcept { return x.size(); }
};

MacroFields macro_moments(const MaxwellianContext& ctx, const Eigen::MatrixXd& columns,
                          const std::vector<double>& x);

struct GammaMassSplit {
    SlabField barf;
    double z = 0.0;
};

/// barf = f - wall_profile * z with z the outgoing wall flux of f.
GammaMassSplit subtract_gamma_mass(const MaxwellianContext& ctx, const SlabField& f);

/// Matrix of the far-end moment conditions in the unknowns (phi0..phi3).
Eigen::Matrix4d phi_matrix(const Kappas& k);

/// Right-hand side (before the sign flip) of the far-end conditions.
Eigen::Vector4d phi_rhs(const NodeValues& barf_at_d, const LinearizedOperator& op, const TransportFunctionals& fun);

std::array<double, 4> solve_phi_system(const NodeValues& barf_at_d, const LinearizedOperator& op,
                                       const TransportFunctionals& fun);

struct CompatibilityReport {
    bool ok = true;
    /// Largest |<g(x), chi_k>| over x per orthonormal invariant.
    std::array<double, 5> source_moments{};
    double wall_flux = 0.0;  // sum_{v3>0} w v3 sqrt(mu) r
    std::string failure;
};

/// g in N-perp at every column and zero net incoming mass flux of r. The
/// tolerance is scaled by max(1, largest column norm) of the data checked.
CompatibilityReport check_source_compatibility(const MaxwellianContext& ctx, const Eigen::MatrixXd& g,
                                               const NodeValues& r, double tol = 1e-8);

struct FarFieldConfig {
    double d = 8.0;
    int n_x = 160;
    double p_E0 = 1.0;
    double compat_tol = 1e-8;
    SlabSolverOptions solver{};
};

struct FarFieldResult {
    SlabGrid slab;
    SlabField f;        // solution of the truncated problem
    SlabField barf;     // after the wall-mass subtraction
    SlabField tilde_f;  // barf + Phi
    double z = 0.0;
    FarFieldState state;
    SolveReport report;
    /// sup over x in [d/2, d] of w |.| for barf and tilde_f
    double bar_tail = 0.0;
    double tilde_tail = 0.0;
};

/// The far-field map G(g, r) by the truncated-slab construction. g holds
/// edge samples (N_v x (n_x+1)) or is empty; r uses its v3 > 0 entries.
FarFieldResult far_field_G(const Eigen::MatrixXd& g, const NodeValues& r, const LinearizedOperator& op,
                           const TransportFunctionals& fun, const FarFieldConfig& cfg = {});

/// Macroscopic coefficients of barf at the edges recovered from its wall
/// trace, its microscopic part and running integrals of the cell sources.
MacroFields reconstruct_macro_from_boundary(const SlabField& barf, const Eigen::MatrixXd& g, const SlabGrid& slab,
                                            const LinearizedOperator& op, const TransportFunctionals& fun,
                                            SourceSampling sampling = SourceSampling::LeftEdge);

/// Sup over edges with x >= x_from of w |f|.
double tail_sup(const Eigen::MatrixXd& edges, const SlabGrid& slab, const NodeValues& w, double x_from);

using SourceFn = std::function<NodeValues(double x)>;

struct DStudyRow {
    double d = 0.0;
    int n_x = 0;
    std::array<double, 4> phi{};
    FarFieldState state;
    SolveReport report;
};

struct DStudy {
    std::vector<DStudyRow> rows;
    /// |phi(d_{k+1}) - phi(d_k)| (Euclidean), one fewer than rows.
    std::vector<double> gaps;
    bool gaps_decreasing = false;
    /// Least-squares slope of log gap against d; negative means decay.
    double log_gap_slope = 0.0;
    /// exp(slope * mean d spacing): the per-step geometric ratio.
    double geometric_ratio = 0.0;
};

/// Runs far_field_G for each d at a fixed cell size dx = cfg.d / cfg.n_x.
/// An empty source means g = 0.
DStudy d_convergence_study(const SourceFn& g, const NodeValues& r, const std::vector<double>& d_list,
                           const LinearizedOperator& op, const TransportFunctionals& fun, const FarFieldConfig& cfg = {});

}  // namespace kbl
