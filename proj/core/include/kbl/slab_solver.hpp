#pragma once

#include "kbl/collision_op.hpp"
#include "kbl/gaussian_core.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace kbl {

/// Uniform partition of (0, d) into n_x cells.
struct SlabGrid {
    double d = 0.0;
    int n_x = 0;
    std::vector<double> x_nodes;

    double dx() const noexcept { return d / n_x; }
    int n_edges() const noexcept { return n_x + 1; }
};

SlabGrid make_slab(double d, int n_x);

/// Distribution on the space x velocity lattice. Edge values carry the
/// transport solution; cell values are the cell averages that feed the
/// collision operator.
struct SlabField {
    Eigen::MatrixXd edges;  // N_v x (n_x + 1)
    Eigen::MatrixXd cells;  // N_v x n_x

    static SlabField zero(std::size_t n_v, int n_x);
    NodeValues wall_trace() const { return edges.col(0); }
    NodeValues far_trace() const { return edges.col(edges.cols() - 1); }
    /// Values at x = 0 on the v3 > 0 (resp. v3 < 0) nodes, in half-grid order.
    NodeValues wall_incoming(const VelocityGrid& g) const;
    NodeValues wall_outgoing(const VelocityGrid& g) const;
};

enum class SourceSampling {
    /// The cell source is the left-edge sample of g.
    LeftEdge,
    /// The cell source is the mean of the two edge samples.
    CellAverage,
};

/// Per-cell source from edge samples; empty g gives zeros.
Eigen::MatrixXd cell_sources(const Eigen::MatrixXd& g, std::size_t n_v, int n_x, SourceSampling sampling);

/// v3 f_x + eps f + p L f = g on (0, d); diffuse wall at 0, specular wall at d.
struct LinearSlabProblem {
    Eigen::MatrixXd g;  // N_v x (n_x + 1) edge samples; empty means zero
    NodeValues r;       // incoming wall data (v3 > 0 entries used); empty means zero
    NodeValues extra_incoming;
    std::optional<NodeValues> far_inflow_override;  // v3 < 0 entries used
    double epsilon = 0.0;
    double p_E0 = 1.0;

    void validate(std::size_t n_v, const SlabGrid& slab) const;
};

enum class SlabMethod { Gmres, SourceIteration };

const char* to_string(SlabMethod m) noexcept;
SlabMethod slab_method_from_string(const std::string& s);

struct SlabSolverOptions {
    double tol = 1e-9;
    int max_iter = 500;
    SlabMethod method = SlabMethod::Gmres;
    int gmres_restart = 40;
    double gmres_rtol = 1e-12;
    /// Right preconditioner from a Galerkin solve on cell-wise invariants.
    bool coarse_correction = true;
    SourceSampling sampling = SourceSampling::LeftEdge;
    WeightSpec weight{};
};

struct SolveReport {
    bool converged = false;
    int iterations = 0;
    std::string method;
    /// Per iteration: w-weighted sup of the cell-field update (source
    /// iteration) or the relative Krylov residual (GMRES).
    std::vector<double> residual_history;
    /// w-weighted sup of T(X) - X at the returned state.
    double final_update = 0.0;
    /// Observed geometric contraction factor (median ratio after warm-up).
    double contraction = 0.0;
    double wall_bc_defect = 0.0;
    double specular_defect = 0.0;
    double min_abs_v3 = 0.0;
    double seconds = 0.0;
};

/// Characteristic sweep with exact exponential attenuation along each
/// velocity and a piecewise-constant source in each cell.
class Sweeper {
public:
    Sweeper(const VelocityGrid& grid, const SlabGrid& slab, NodeValues sigma);

    /// cell_source: N_v x n_x. inflow_at_0 uses v3 > 0 entries; the far
    /// inflow uses the specular image of the upward trace unless overridden.
    SlabField sweep(const Eigen::MatrixXd& cell_source, const NodeValues& inflow_at_0,
                    const NodeValues* inflow_at_d = nullptr) const;

    const NodeValues& sigma() const noexcept { return sigma_; }

private:
    const VelocityGrid* grid_;
    SlabGrid slab_;
    NodeValues sigma_;
    NodeValues decay_;     // exp(-tau)
    NodeValues avg_;       // (1 - exp(-tau)) / tau
    std::vector<char> up_;
};

struct LinearSolveResult {
    SlabField field;
    SolveReport report;
};

LinearSolveResult solve_linear_slab(const LinearSlabProblem& problem, const SlabGrid& slab,
                                    const LinearizedOperator& op, const SlabSolverOptions& opts = {});

struct ResidualNorms {
    double sup_defect = 0.0;
    double weighted_sup_defect = 0.0;
    /// Rows: edges; columns: mass, mom1, mom2, mom3, energy flux.
    Eigen::MatrixXd flux_profile;
};

/// Pointwise defect v3 (f_{k+1} - f_k)/dx + (eps + p nu) F_k - p K F_k - G_k per cell.
ResidualNorms residual_norms(const SlabField& field, const LinearSlabProblem& problem, const SlabGrid& slab,
                             const LinearizedOperator& op, const WeightSpec& weight = {},
                             SourceSampling sampling = SourceSampling::LeftEdge);

/// <v3 chi_k, f(x)> for the raw invariants at every edge.
Eigen::MatrixXd flux_moments(const MaxwellianContext& ctx, const Eigen::MatrixXd& edges);

/// max over nodes and columns of w |f|.
double weighted_sup(const Eigen::MatrixXd& f, const NodeValues& w);

}  // namespace kbl
