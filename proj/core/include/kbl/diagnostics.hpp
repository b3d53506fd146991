#pragma once

#include "kbl/collision_op.hpp"
#include "kbl/slab_solver.hpp"

#include <Eigen/Core>

#include <array>
#include <vector>

namespace kbl {

struct DecayFit {
    bool identically_zero = false;
    double sigma_fit = 0.0;  // profile ~ exp(-sigma_fit x)
    double intercept = 0.0;
    double r_squared = 0.0;
    double x_lo = 0.0;
    double x_hi = 0.0;
    int points_used = 0;
    /// Profile values below floor_rel * max are treated as rounding and skipped.
    double floor_rel = 0.0;
    bool monotone = true;
    std::vector<double> profile;  // per-edge weighted sup norm
};

/// Least-squares fit of log sup_v w|f(x, v)| over x in [x_lo, x_hi].
/// A negative x_hi means d + x_hi.
DecayFit fit_decay_rate(const Eigen::MatrixXd& edges, const SlabGrid& slab, const NodeValues& w, double x_lo = 1.0,
                        double x_hi = -1.0, double floor_rel = 1e-11);

struct ConservationReport {
    /// Rows: edges; columns: mass, momentum 1..3, energy flux.
    Eigen::MatrixXd flux;
    std::array<double, 5> drift{};  // max_x |flux(x) - flux(0)|
    double max_drift = 0.0;
    /// max_x |<g(x), chi_k>|, zero when no source is given
    std::array<double, 5> source_moments{};
};

ConservationReport conservation_report(const Eigen::MatrixXd& edges, const Eigen::MatrixXd& g,
                                       const MaxwellianContext& ctx);

struct EnergyCheck {
    double wall_term = 0.0;         // |(I - P_gamma) f(0)|^2 on outgoing nodes
    double dissipation = 0.0;       // int e^{2 s x} ||(I - P) f||_nu^2
    double lhs = 0.0;
    double rhs = 0.0;               // |r|^2 on incoming nodes + int e^{2 s x} ||g||^2
    double ratio = 0.0;
    bool finite = true;
};

EnergyCheck energy_dissipation_check(const Eigen::MatrixXd& barf_edges, const NodeValues& r, const Eigen::MatrixXd& g,
                                     const SlabGrid& slab, const LinearizedOperator& op, double sigma1);

/// Inverse iteration for the coercivity constant; throws NumericalError if
/// the estimate is not positive.
CoercivityResult coercivity_estimate(const LinearizedOperator& op, double tol = 1e-6, int max_iter = 5000);

struct OrderFit {
    double order = 0.0;
    double r_squared = 0.0;
    std::vector<double> ratios;  // err_k / err_{k+1}
};

/// Slope of log err against log h.
OrderFit fit_convergence_order(const std::vector<double>& h, const std::vector<double>& err);

}  // namespace kbl
