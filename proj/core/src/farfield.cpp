#include "kbl/farfield.hpp"

#include "kbl/errors.hpp"

#include <Eigen/LU>

#include <cmath>
#include <cstdio>

namespace kbl {

namespace {

using Index = Eigen::Index;

const char* const kInvariantNames[5] = {"mass", "momentum_1", "momentum_2", "momentum_3", "energy"};

NodeValues times_v3(const MaxwellianContext& ctx, const NodeValues& f) {
    const VelocityGrid& g = ctx.grid();
    NodeValues out(f.size());
    for (Index i = 0; i < f.size(); ++i) out[i] = g.node(std::size_t(i))[2] * f[i];
    return out;
}

}  // namespace

FarFieldState FarFieldState::from_phi(const std::array<double, 4>& phi, double d) {
    FarFieldState s;
    s.phi = phi;
    s.b_inf = {-phi[1], -phi[2]};
    s.c_inf = -phi[3];
    s.d_used = d;
    return s;
}

bool FarFieldState::consistent() const noexcept {
    for (double p : phi) {
        if (!std::isfinite(p)) return false;
    }
    return b_inf[0] == -phi[1] && b_inf[1] == -phi[2] && c_inf == -phi[3];
}

NodeValues far_field_profile(const MaxwellianContext& ctx, const FarFieldState& s) {
    HydroCoeffs h;
    h.b = {s.b_inf[0], s.b_inf[1], 0.0};
    h.c = s.c_inf;
    return ctx.from_coefficients(h);
}

NodeValues phi_profile(const MaxwellianContext& ctx, const std::array<double, 4>& phi) {
    HydroCoeffs h;
    h.a = phi[0];
    h.b = {phi[1], phi[2], 0.0};
    h.c = phi[3];
    return ctx.from_coefficients(h);
}

MacroFields macro_moments(const MaxwellianContext& ctx, const Eigen::MatrixXd& columns, const std::vector<double>& x) {
    if (Index(x.size()) != columns.cols()) throw PreconditionError("macro_moments: x and column counts differ");
    const Index m = columns.cols();
    MacroFields out;
    out.x = x;
    out.a.resize(m);
    out.b1.resize(m);
    out.b2.resize(m);
    out.b3.resize(m);
    out.c.resize(m);
    for (Index k = 0; k < m; ++k) {
        const HydroCoeffs h = ctx.coefficients(columns.col(k));
        out.a[k] = h.a;
        out.b1[k] = h.b[0];
        out.b2[k] = h.b[1];
        out.b3[k] = h.b[2];
        out.c[k] = h.c;
    }
    return out;
}

GammaMassSplit subtract_gamma_mass(const MaxwellianContext& ctx, const SlabField& f) {
    if (f.edges.cols() == 0) throw PreconditionError("subtract_gamma_mass: field has no wall trace");
    GammaMassSplit out;
    out.z = ctx.wall_flux(f.edges.col(0));
    out.barf = f;
    out.barf.edges.colwise() -= out.z * ctx.wall_profile();
    if (out.barf.cells.size()) out.barf.cells.colwise() -= out.z * ctx.wall_profile();
    return out;
}

Eigen::Matrix4d phi_matrix(const Kappas& k) {
    Eigen::Matrix4d M;
    M << 1.0, 0.0, 0.0, 1.0,
         0.0, k.kappa1, 0.0, 0.0,
         0.0, 0.0, k.kappa1, 0.0,
         0.0, 0.0, 0.0, k.kappa2;
    return M;
}

Eigen::Vector4d phi_rhs(const NodeValues& barf_at_d, const LinearizedOperator& op, const TransportFunctionals& fun) {
    const MaxwellianContext& ctx = op.context();
    const HydroProjection hp = ctx.hydro_project(barf_at_d);
    const NodeValues micro = barf_at_d - hp.projected;
    const NodeValues v3micro = times_v3(ctx, micro);
    const Kappas& k = fun.kappas;
    Eigen::Vector4d rhs;
    rhs[0] = hp.coeffs.a + hp.coeffs.c + ctx.inner(micro, fun.moments.A[2][2]);
    rhs[1] = k.kappa1 * hp.coeffs.b[0] + ctx.inner(v3micro, fun.Linv_A31);
    rhs[2] = k.kappa1 * hp.coeffs.b[1] + ctx.inner(v3micro, fun.Linv_A32);
    rhs[3] = k.kappa2 * hp.coeffs.c + ctx.inner(v3micro, fun.Linv_B3);
    return rhs;
}

std::array<double, 4> solve_phi_system(const NodeValues& barf_at_d, const LinearizedOperator& op,
                                       const TransportFunctionals& fun) {
    const Kappas& k = fun.kappas;
    if (!(k.kappa1 > 0.0) || !(k.kappa2 > 0.0)) throw NumericalError("phi system: kappas must be positive");
    const Eigen::Vector4d phi = phi_matrix(k).partialPivLu().solve(-phi_rhs(barf_at_d, op, fun));
    return {phi[0], phi[1], phi[2], phi[3]};
}

CompatibilityReport check_source_compatibility(const MaxwellianContext& ctx, const Eigen::MatrixXd& g,
                                               const NodeValues& r, double tol) {
    CompatibilityReport rep;
    double g_scale = 1.0;
    for (Index k = 0; k < g.cols(); ++k) {
        const Eigen::Matrix<double, 5, 1> m = ctx.invariant_moments(g.col(k));
        for (int j = 0; j < 5; ++j) rep.source_moments[j] = std::max(rep.source_moments[j], std::abs(m[j]));
        g_scale = std::max(g_scale, ctx.norm(g.col(k)));
    }
    for (int j = 0; j < 5; ++j) {
        if (rep.source_moments[j] > tol * g_scale && rep.ok) {
            rep.ok = false;
            char buf[160];
            std::snprintf(buf, sizeof buf, "source %s moment %.3e exceeds %.1e", kInvariantNames[j],
                          rep.source_moments[j], tol * g_scale);
            rep.failure = buf;
        }
    }
    if (r.size()) {
        const VelocityGrid& grid = ctx.grid();
        double s = 0.0;
        for (std::size_t i : grid.positive_v3()) {
            s += grid.weight(i) * grid.node(i)[2] * ctx.sqrt_mu()[Index(i)] * r[Index(i)];
        }
        rep.wall_flux = s;
        if (std::abs(s) > tol * std::max(1.0, ctx.norm(r)) && rep.ok) {
            rep.ok = false;
            char buf[160];
            std::snprintf(buf, sizeof buf, "incoming wall mass flux %.3e exceeds %.1e", s, tol);
            rep.failure = buf;
        }
    }
    return rep;
}

double tail_sup(const Eigen::MatrixXd& edges, const SlabGrid& slab, const NodeValues& w, double x_from) {
    double out = 0.0;
    for (int k = 0; k < slab.n_edges(); ++k) {
        if (slab.x_nodes[std::size_t(k)] < x_from - 1e-12) continue;
        out = std::max(out, (edges.col(k).cwiseAbs().cwiseProduct(w)).maxCoeff());
    }
    return out;
}

FarFieldResult far_field_G(const Eigen::MatrixXd& g, const NodeValues& r, const LinearizedOperator& op,
                           const TransportFunctionals& fun, const FarFieldConfig& cfg) {
    const MaxwellianContext& ctx = op.context();
    FarFieldResult out;
    out.slab = make_slab(cfg.d, cfg.n_x);
    const CompatibilityReport comp = check_source_compatibility(ctx, g, r, cfg.compat_tol);
    if (!comp.ok) throw PreconditionError("far field: " + comp.failure);

    LinearSlabProblem prob;
    prob.g = g;
    prob.r = r;
    prob.p_E0 = cfg.p_E0;
    LinearSolveResult lin = solve_linear_slab(prob, out.slab, op, cfg.solver);
    if (!lin.report.converged) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "far field: slab solve did not converge (update %.3e after %d sweeps)",
                      lin.report.final_update, lin.report.iterations);
        throw SolverError(buf);
    }
    out.f = std::move(lin.field);
    out.report = std::move(lin.report);

    GammaMassSplit split = subtract_gamma_mass(ctx, out.f);
    out.z = split.z;
    out.barf = std::move(split.barf);

    const std::array<double, 4> phi = solve_phi_system(out.barf.far_trace(), op, fun);
    out.state = FarFieldState::from_phi(phi, cfg.d);
    const NodeValues Phi = phi_profile(ctx, phi);
    out.tilde_f = out.barf;
    out.tilde_f.edges.colwise() += Phi;
    out.tilde_f.cells.colwise() += Phi;

    const NodeValues w = ctx.weight_values(cfg.solver.weight);
    out.bar_tail = tail_sup(out.barf.edges, out.slab, w, 0.5 * cfg.d);
    out.tilde_tail = tail_sup(out.tilde_f.edges, out.slab, w, 0.5 * cfg.d);
    return out;
}

MacroFields reconstruct_macro_from_boundary(const SlabField& barf, const Eigen::MatrixXd& g, const SlabGrid& slab,
                                            const LinearizedOperator& op, const TransportFunctionals& fun,
                                            SourceSampling sampling) {
    const MaxwellianContext& ctx = op.context();
    const Index N = Index(ctx.size());
    const int n = slab.n_x;
    if (barf.edges.cols() != slab.n_edges()) throw PreconditionError("reconstruction: field and slab disagree");
    const Kappas& k = fun.kappas;

    const NodeValues v3A31 = times_v3(ctx, fun.Linv_A31);
    const NodeValues v3A32 = times_v3(ctx, fun.Linv_A32);
    const NodeValues v3B3 = times_v3(ctx, fun.Linv_B3);
    const NodeValues v3v3mu = times_v3(ctx, ctx.raw_basis().col(3));
    const NodeValues v3mu = ctx.raw_basis().col(3);
    const double v3v3_norm = ctx.inner(v3mu, v3mu);

    // Wall data: (I - P_gamma) barf(0) on outgoing nodes and r on incoming ones.
    const NodeValues wall = barf.edges.col(0) - ctx.pgamma(barf.edges.col(0));
    const double w_A31 = ctx.inner(wall, v3A31);
    const double w_A32 = ctx.inner(wall, v3A32);
    const double w_B3 = ctx.inner(wall, v3B3);
    const double w_33 = ctx.inner(wall, v3v3mu);
    const double w_mass = ctx.inner(wall, v3mu);

    const Eigen::MatrixXd G = cell_sources(g, std::size_t(N), n, sampling);
    const double dx = slab.dx();

    MacroFields out;
    out.x = slab.x_nodes;
    const Index m = slab.n_edges();
    out.a.resize(m);
    out.b1.resize(m);
    out.b2.resize(m);
    out.b3.resize(m);
    out.c.resize(m);
    double i_A31 = 0.0, i_A32 = 0.0, i_B3 = 0.0, i_mass = 0.0;
    for (Index e = 0; e < m; ++e) {
        if (e > 0) {
            const NodeValues gc = G.col(e - 1);
            i_A31 += dx * ctx.inner(gc, fun.Linv_A31);
            i_A32 += dx * ctx.inner(gc, fun.Linv_A32);
            i_B3 += dx * ctx.inner(gc, fun.Linv_B3);
            i_mass += dx * ctx.inner(gc, ctx.sqrt_mu());
        }
        const NodeValues micro = ctx.project_out(barf.edges.col(e));
        out.b1[e] = (-ctx.inner(micro, v3A31) + w_A31 + i_A31) / k.kappa1;
        out.b2[e] = (-ctx.inner(micro, v3A32) + w_A32 + i_A32) / k.kappa1;
        out.c[e] = (-ctx.inner(micro, v3B3) + w_B3 + i_B3) / k.kappa2;
        out.a[e] = -out.c[e] - ctx.inner(micro, fun.moments.A[2][2]) + w_33;
        out.b3[e] = (w_mass + i_mass) / v3v3_norm;
    }
    return out;
}

DStudy d_convergence_study(const SourceFn& g, const NodeValues& r, const std::vector<double>& d_list,
                           const LinearizedOperator& op, const TransportFunctionals& fun, const FarFieldConfig& cfg) {
    if (d_list.empty()) throw ConfigError("d study: empty d list");
    for (std::size_t k = 1; k < d_list.size(); ++k) {
        if (!(d_list[k] > d_list[k - 1])) throw ConfigError("d study: d values must increase");
    }
    const double dx = cfg.d / cfg.n_x;
    const Index N = Index(op.size());
    DStudy out;
    for (double d : d_list) {
        FarFieldConfig c = cfg;
        c.d = d;
        c.n_x = std::max(1, int(std::lround(d / dx)));
        Eigen::MatrixXd gm;
        if (g) {
            const SlabGrid s = make_slab(d, c.n_x);
            gm.resize(N, s.n_edges());
            for (int e = 0; e < s.n_edges(); ++e) gm.col(e) = g(s.x_nodes[std::size_t(e)]);
        }
        FarFieldResult res = far_field_G(gm, r, op, fun, c);
        DStudyRow row;
        row.d = d;
        row.n_x = c.n_x;
        row.phi = res.state.phi;
        row.state = res.state;
        row.report = std::move(res.report);
        out.rows.push_back(std::move(row));
    }
    for (std::size_t k = 1; k < out.rows.size(); ++k) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) s += std::pow(out.rows[k].phi[j] - out.rows[k - 1].phi[j], 2);
        out.gaps.push_back(std::sqrt(s));
    }
    out.gaps_decreasing = out.gaps.size() >= 2;
    for (std::size_t k = 1; k < out.gaps.size(); ++k) {
        if (!(out.gaps[k] < out.gaps[k - 1])) out.gaps_decreasing = false;
    }
    // Fit log gap against the midpoint of each d interval.
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < out.gaps.size(); ++k) {
        if (out.gaps[k] > 0.0) {
            xs.push_back(0.5 * (out.rows[k].d + out.rows[k + 1].d));
            ys.push_back(std::log(out.gaps[k]));
        }
    }
    if (xs.size() >= 2) {
        double mx = 0, my = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            mx += xs[k];
            my += ys[k];
        }
        mx /= double(xs.size());
        my /= double(xs.size());
        double sxy = 0, sxx = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            sxy += (xs[k] - mx) * (ys[k] - my);
            sxx += (xs[k] - mx) * (xs[k] - mx);
        }
        out.log_gap_slope = sxy / sxx;
        const double step = (d_list.back() - d_list.front()) / double(d_list.size() - 1);
        out.geometric_ratio = std::exp(out.log_gap_slope * step);
    }
    return out;
}

}  // namespace kbl
