#pragma once

#include "kbl/collision_op.hpp"
#include "kbl/farfield.hpp"
#include "kbl/slab_solver.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace kbl {

struct NonlinearProblem {
    Eigen::MatrixXd S;  // N_v x (n_x + 1) edge samples; empty means zero
    NodeValues R;       // incoming wall perturbation, v3 > 0 entries used; empty means zero
    double p_E0 = 1.0;
    WeightSpec weight{};
    double sigma0 = 0.5;
};

/// sup_x e^{sigma0 x} |w S / nu| + sup_{v3>0} |w R|
double data_size(const NonlinearProblem& p, const SlabGrid& slab, const LinearizedOperator& op);

struct CompatibilityTable {
    /// Rows: edges; columns: <S(x), chi_k> for the orthonormal invariants.
    Eigen::MatrixXd source_moments;
    double wall_flux = 0.0;
    double tol = 1e-8;
    bool ok = true;
    std::string failure;
};

CompatibilityTable check_compatibility(const NonlinearProblem& p, const MaxwellianContext& ctx, double tol = 1e-8);

enum class BoundaryCorrection {
    /// Wall data carries -(I - P_gamma) f_inf; the far-field map supplies f_inf.
    FarField,
    /// Wall data is R alone; the sqrt(mu) mode is pinned by a(d) = 0.
    None,
};

struct NonlinearConfig {
    FarFieldConfig farfield{};
    double tol = 1e-9;
    int max_iter = 40;
    /// Inputs with data_size above this are refused before iterating.
    double delta_max = 1.0;
    /// Consecutive difference ratios >= 1 that count as divergence.
    int divergence_window = 3;
    BoundaryCorrection correction = BoundaryCorrection::FarField;
};

struct PicardStep {
    int j = 0;
    /// ||e^{sigma0 x / 2} w (f_j - f_{j-1})||_inf + |(b1, b2, c) jump|
    double diff = 0.0;
    double ratio = 0.0;
    FarFieldState state;
    /// max_k |<Gamma(f,f), chi_k>| / ||Gamma(f,f)|| before and after re-projection
    double gamma_defect_raw = 0.0;
    double gamma_defect_projected = 0.0;
};

struct NonlinearResult {
    SlabGrid slab;
    SlabField f;
    FarFieldState state;
    SolveReport report;
    std::vector<PicardStep> history;
    double delta = 0.0;
};

/// Picard iteration from f_0 = 0: each step solves the linear layer with
/// source Gamma(f_j, f_j) + S and the far-field correction.
NonlinearResult solve_nonlinear(const NonlinearProblem& p, const CollisionQuadrature& q, const LinearizedOperator& op,
                                const TransportFunctionals& fun, const NonlinearConfig& cfg = {});

/// One more Picard step from a given state.
NonlinearResult picard_step(const NonlinearProblem& p, const SlabField& f, const CollisionQuadrature& q,
                            const LinearizedOperator& op, const TransportFunctionals& fun, const NonlinearConfig& cfg);

/// Gamma(f, f) per edge, re-projected onto N-perp.
Eigen::MatrixXd projected_gamma(const CollisionQuadrature& q, const Eigen::MatrixXd& f, double* raw_defect = nullptr,
                                double* projected_defect = nullptr);

double picard_norm(const Eigen::MatrixXd& edges, const SlabGrid& slab, const NodeValues& w, double sigma0);

struct ScaleSearch {
    double t_max = 0.0;  // largest scale accepted
    double ratio_at_t_max = 0.0;
    std::vector<std::pair<double, double>> trials;  // (t, observed ratio); inf when diverged
};

/// Largest t in [t_lo, t_hi] (bisected in log t) at which the Picard
/// difference ratio stays at or below target for inputs (t S, t R).
ScaleSearch largest_contracting_scale(const NonlinearProblem& p, const CollisionQuadrature& q,
                                      const LinearizedOperator& op, const TransportFunctionals& fun,
                                      const NonlinearConfig& cfg, double t_lo, double t_hi, double target = 0.9,
                                      int steps = 6, int probe_iterations = 6);

/// R = -(I - P_gamma) f_inf + r where f_inf is the far state of the
/// nonlinear solve with wall data r.
NodeValues manifold_boundary(const NonlinearProblem& p_with_r, const CollisionQuadrature& q,
                             const LinearizedOperator& op, const TransportFunctionals& fun, const NonlinearConfig& cfg,
                             NonlinearResult* solved = nullptr);

struct DependenceFit {
    /// Output change over input change per direction.
    std::vector<double> constants;
    double mean = 0.0;
    double rel_spread = 0.0;  // (max - min) / mean
};

/// Perturbs (S, R) along random compatible directions of relative size eps
/// and records ||f_1 - f_2|| + |f_inf jump| over the input difference.
DependenceFit continuous_dependence(const NonlinearProblem& p, const CollisionQuadrature& q,
                                    const LinearizedOperator& op, const TransportFunctionals& fun,
                                    const NonlinearConfig& cfg, int directions, double eps, unsigned seed);

/// Zero-flux projection of incoming wall data: r - wall_profile * flux(r).
NodeValues remove_wall_flux(const MaxwellianContext& ctx, const NodeValues& r);

}  // namespace kbl
