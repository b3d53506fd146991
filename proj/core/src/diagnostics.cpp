#include "kbl/diagnostics.hpp"

#include "kbl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kbl {

namespace {

using Index = Eigen::Index;

struct LineFit {
    double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    LineFit f;
    const double n = double(x.size());
    if (x.size() < 2) return f;
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxx += (x[k] - mx) * (x[k] - mx);
        sxy += (x[k] - mx) * (y[k] - my);
        syy += (y[k] - my) * (y[k] - my);
    }
    if (sxx == 0.0) return f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
    return f;
}

}  // namespace

DecayFit fit_decay_rate(const Eigen::MatrixXd& edges, const SlabGrid& slab, const NodeValues& w, double x_lo,
                        double x_hi, double floor_rel) {
    if (!edges.allFinite()) throw NumericalError("decay fit: field is not finite");
    if (x_hi < 0.0) x_hi = slab.d + x_hi;
    if (!(x_hi > x_lo) || x_lo < 0.0 || x_hi > slab.d + 1e-12) throw ConfigError("decay fit: degenerate window");
    DecayFit out;
    out.x_lo = x_lo;
    out.x_hi = x_hi;
    out.floor_rel = floor_rel;
    out.profile.resize(std::size_t(edges.cols()));
    for (Index k = 0; k < edges.cols(); ++k) out.profile[std::size_t(k)] = edges.col(k).cwiseAbs().cwiseProduct(w).maxCoeff();
    const double top = *std::max_element(out.profile.begin(), out.profile.end());
    if (top == 0.0) {
        out.identically_zero = true;
        return out;
    }
    std::vector<double> xs, ys;
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < out.profile.size(); ++k) {
        const double x = slab.x_nodes[k];
        if (x < x_lo - 1e-12 || x > x_hi + 1e-12) continue;
        const double p = out.profile[k];
        if (p <= floor_rel * top) continue;
        if (p > prev) out.monotone = false;
        prev = p;
        xs.push_back(x);
        ys.push_back(std::log(p));
    }
    out.points_used = int(xs.size());
    const LineFit f = least_squares(xs, ys);
    out.sigma_fit = -f.slope;
    out.intercept = f.intercept;
    out.r_squared = f.r2;
    return out;
}

ConservationReport conservation_report(const Eigen::MatrixXd& edges, const Eigen::MatrixXd& g,
                                       const MaxwellianContext& ctx) {
    ConservationReport out;
    out.flux = flux_moments(ctx, edges);
    for (int j = 0; j < 5; ++j) {
        out.drift[j] = (out.flux.col(j).array() - out.flux(0, j)).abs().maxCoeff();
        out.max_drift = std::max(out.max_drift, out.drift[j]);
    }
    for (Index k = 0; k < g.cols(); ++k) {
        const Eigen::Matrix<double, 5, 1> m = ctx.invariant_moments(g.col(k));
        for (int j = 0; j < 5; ++j) out.source_moments[j] = std::max(out.source_moments[j], std::abs(m[j]));
    }
    return out;
}

EnergyCheck energy_dissipation_check(const Eigen::MatrixXd& barf_edges, const NodeValues& r, const Eigen::MatrixXd& g,
                                     const SlabGrid& slab, const LinearizedOperator& op, double sigma1) {
    const MaxwellianContext& ctx = op.context();
    const VelocityGrid& grid = ctx.grid();
    EnergyCheck out;
    const NodeValues f0 = barf_edges.col(0);
    const NodeValues micro0 = f0 - ctx.pgamma(f0);
    for (std::size_t i : grid.negative_v3()) {
        out.wall_term += grid.weight(i) * std::abs(grid.node(i)[2]) * micro0[Index(i)] * micro0[Index(i)];
    }
    double rr = 0.0;
    if (r.size()) {
        for (std::size_t i : grid.positive_v3()) rr += grid.weight(i) * grid.node(i)[2] * r[Index(i)] * r[Index(i)];
    }
    const NodeValues wnu = grid.weights().cwiseProduct(op.nu());
    const double dx = slab.dx();
    double gg = 0.0;
    for (int k = 0; k < slab.n_edges(); ++k) {
        const double trap = (k == 0 || k == slab.n_x) ? 0.5 * dx : dx;
        const double e = std::exp(2.0 * sigma1 * slab.x_nodes[std::size_t(k)]);
        const NodeValues m = ctx.project_out(barf_edges.col(k));
        out.dissipation += trap * e * m.cwiseProduct(m).dot(wnu);
        if (g.size()) gg += trap * e * ctx.inner(g.col(k), g.col(k));
    }
    out.lhs = out.wall_term + out.dissipation;
    out.rhs = rr + gg;
    out.ratio = out.rhs > 0.0 ? out.lhs / out.rhs : 0.0;
    out.finite = std::isfinite(out.lhs) && std::isfinite(out.rhs);
    return out;
}

CoercivityResult coercivity_estimate(const LinearizedOperator& op, double tol, int max_iter) {
    CoercivityResult c = estimate_c0(op, tol, max_iter);
    if (!(c.c0 > 0.0)) throw NumericalError("coercivity estimate is not positive; the operator is broken");
    return c;
}

OrderFit fit_convergence_order(const std::vector<double>& h, const std::vector<double>& err) {
    if (h.size() != err.size() || h.size() < 2) throw ConfigError("order fit: need matching h/err lists of length >= 2");
    OrderFit out;
    std::vector<double> lx, ly;
    for (std::size_t k = 0; k < h.size(); ++k) {
        if (!(h[k] > 0.0) || !(err[k] > 0.0)) throw NumericalError("order fit: h and err must be positive");
        lx.push_back(std::log(h[k]));
        ly.push_back(std::log(err[k]));
        if (k > 0) out.ratios.push_back(err[k - 1] / err[k]);
    }
    const LineFit f = least_squares(lx, ly);
    out.order = f.slope;
    out.r_squared = f.r2;
    return out;
}

}  // namespace kbl
