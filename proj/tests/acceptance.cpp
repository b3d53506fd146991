// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include "kbl/diagnostics.hpp"
#include "kbl/errors.hpp"
#include "kbl/farfield.hpp"
#include "kbl/harness.hpp"
#include "kbl/nonlinear_driver.hpp"
#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

using namespace kbl;
using kbl::test::bundle;
using kbl::test::sup;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Line {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

constexpr unsigned kSeed = 20240611;

Line moment_identities() {
    const auto t0 = Clock::now();
    const VelocityGrid grid = build_grid(16, 6.0, true);
    const MaxwellianContext ctx(grid);
    const auto ids = ctx.verify_gaussian_moments();
    const double reference[6] = {10.0, 0.0, 2.0, 7.0, 5.0, 0.0};
    Line out;
    out.pass = ids.size() == 6;
    std::string misses;
    for (std::size_t k = 0; k < ids.size() && k < 6; ++k) {
        const double err = std::abs(ids[k].computed - reference[k]);
        if (err > 1e-3 * std::max(1.0, std::abs(reference[k]))) {
            out.pass = false;
            misses += " [" + ids[k].label + ": computed " + fmt("%.6g", ids[k].computed) + ", reference " +
                      fmt("%g", reference[k]) + "]";
        }
    }
    const double t = seconds_since(t0);
    if (t >= 10.0) out.pass = false;
    out.detail = "n=16 v_max=6, " + fmt("%.2f s", t) + (misses.empty() ? "" : "; mismatches:" + misses);
    return out;
}

Line null_space() {
    const auto& b8 = bundle(8);
    const auto& b12 = bundle(12);
    const double post8 = b8.op->null_space_defect(), post12 = b12.op->null_space_defect();
    const double raw8 = b8.op->raw_defects().null_space_max, raw12 = b12.op->raw_defects().null_space_max;
    const double ratio = raw12 / raw8;
    Line out;
    out.pass = post8 <= 1e-12 && post12 <= 1e-12 && ratio <= 0.7;
    out.detail = "post-fix-up " + fmt("%.2e", std::max(post8, post12)) + ", raw n=8 " + fmt("%.3e", raw8) + " n=12 " +
                 fmt("%.3e", raw12) + " ratio " + fmt("%.3f", ratio);
    return out;
}

Line coercivity() {
    const auto t0 = Clock::now();
    const auto& b = bundle(12);
    const CoercivityResult c0 = estimate_c0(*b.op);
    const Kappas& k = b.fun->kappas;
    const double t = seconds_since(t0);
    const double sym = b.op->symmetry_defect();
    const double split = std::abs(k.kappa1 - k.kappa1_alt) / k.kappa1;
    Line out;
    out.pass = c0.c0 > 0.0 && k.kappa1 > 0.0 && k.kappa2 > 0.0 && split <= 0.01 && sym <= 1e-8 && t < 300.0;
    out.detail = "n=12 c0 " + fmt("%.4f", c0.c0) + " kappa1 " + fmt("%.5f", k.kappa1) + " kappa2 " +
                 fmt("%.5f", k.kappa2) + " split " + fmt("%.1e", split) + " symmetry " + fmt("%.1e", sym) + ", " +
                 fmt("%.1f s", t);
    return out;
}

Line wall_operator() {
    const auto& b = bundle(8);
    const MaxwellianContext& ctx = *b.ctx;
    std::mt19937 rng(kSeed);
    double idem = 0.0;
    for (int trial = 0; trial < 8; ++trial) {
        const NodeValues f = kbl::test::random_profile(ctx, rng);
        const NodeValues once = ctx.pgamma(f);
        idem = std::max(idem, (ctx.pgamma(once) - once).cwiseAbs().maxCoeff() / std::max(1e-300, once.cwiseAbs().maxCoeff()));
    }
    const NodeValues fixed = ctx.pgamma(ctx.sqrt_mu());
    double fix = 0.0;
    for (std::size_t i : ctx.grid().positive_v3()) fix = std::max(fix, std::abs(fixed[Eigen::Index(i)] - ctx.sqrt_mu()[Eigen::Index(i)]));
    const double measure = std::abs(ctx.wall_measure() - 1.0);
    Line out;
    out.pass = idem <= 1e-12 && fix <= 1e-10 && measure <= 1e-14;
    out.detail = "idempotence " + fmt("%.1e", idem) + ", sqrt(mu) defect " + fmt("%.1e", fix) + ", measure-1 " +
                 fmt("%.1e", measure);
    return out;
}

Line zero_data() {
    const auto& b = bundle(8);
    const SlabGrid slab = make_slab(4.0, 40);
    const LinearSolveResult lin = solve_linear_slab(LinearSlabProblem{}, slab, *b.op);
    NonlinearProblem p;
    NonlinearConfig nc;
    nc.farfield.d = 4.0;
    nc.farfield.n_x = 40;
    const NonlinearResult nl = solve_nonlinear(p, *b.quad, *b.op, *b.fun, nc);
    const double s1 = sup(lin.field.edges), s2 = sup(nl.f.edges);
    Line out;
    out.pass = lin.report.converged && nl.report.converged && s1 <= 1e-12 && s2 <= 1e-12;
    out.detail = "linear sup " + fmt("%.1e", s1) + " (" + std::to_string(lin.report.iterations) + " it), nonlinear sup " +
                 fmt("%.1e", s2) + " (" + std::to_string(nl.report.iterations) + " it)";
    return out;
}

Line mms() {
    const auto& b = bundle(12);
    std::vector<double> h, err;
    double worst = 0.0;
    bool conv = true;
    for (int nx : {40, 80, 160, 320}) {
        const SlabGrid slab = make_slab(4.0, nx);
        const ManufacturedCase m = manufactured_case("exp_decay", slab, *b.op);
        const auto t0 = Clock::now();
        const LinearSolveResult r = solve_linear_slab(m.problem, slab, *b.op);
        worst = std::max(worst, seconds_since(t0));
        conv = conv && r.report.converged;
        h.push_back(slab.dx());
        err.push_back((r.field.edges - m.exact).cwiseAbs().maxCoeff());
    }
    const OrderFit f = fit_convergence_order(h, err);
    Line out;
    out.pass = conv && f.order >= 0.8 && f.order <= 1.2 && worst < 120.0;
    out.detail = "n=12 d=4 n_x 40..320: order " + fmt("%.3f", f.order) + ", errors " + fmt("%.3e", err.front()) + " .. " +
                 fmt("%.3e", err.back()) + ", slowest solve " + fmt("%.1f s", worst);
    return out;
}

Line conservation() {
    const auto& b = bundle(8);
    const MaxwellianContext& ctx = *b.ctx;
    const SlabGrid slab = make_slab(8.0, 160);
    LinearSlabProblem p;
    p.g = decaying_source(generic_source_profile(ctx), slab, 0.5);
    p.r = generic_wall_data(ctx);
    const LinearSolveResult r = solve_linear_slab(p, slab, *b.op);
    const GammaMassSplit split = subtract_gamma_mass(ctx, r.field);
    const ConservationReport c = conservation_report(split.barf.edges, p.g, ctx);
    const MacroFields m = macro_moments(ctx, split.barf.edges, slab.x_nodes);
    const double b3 = m.b3.cwiseAbs().maxCoeff();
    Line out;
    out.pass = r.report.converged && c.max_drift <= 1e-8 && b3 <= 1e-8;
    out.detail = "max flux drift " + fmt("%.2e", c.max_drift) + ", sup |b3| " + fmt("%.2e", b3);
    return out;
}

Line farfield_efficacy() {
    const auto& b = bundle(8);
    const MaxwellianContext& ctx = *b.ctx;
    FarFieldConfig cfg;
    const SlabGrid slab = make_slab(cfg.d, cfg.n_x);
    const Eigen::MatrixXd g = decaying_source(generic_source_profile(ctx), slab, 0.5);
    const FarFieldResult r = far_field_G(g, generic_wall_data(ctx), *b.op, *b.fun, cfg);
    const DecayFit fit = fit_decay_rate(r.tilde_f.edges, slab, ctx.weight_values({}));
    const double ratio = r.tilde_tail / r.bar_tail;
    Line out;
    out.pass = ratio <= 0.1 && fit.sigma_fit > 0.0 && fit.r_squared > 0.99;
    out.detail = "tail ratio " + fmt("%.2e", ratio) + ", sigma_fit " + fmt("%.4f", fit.sigma_fit) + " r2 " +
                 fmt("%.5f", fit.r_squared) + " over " + std::to_string(fit.points_used) + " points";
    return out;
}

Line d_robustness() {
    const auto& b = bundle(8);
    const MaxwellianContext& ctx = *b.ctx;
    const NodeValues prof = generic_source_profile(ctx);
    const SourceFn g = [&prof](double x) { return NodeValues(prof * std::exp(-0.5 * x)); };
    FarFieldConfig cfg;
    cfg.d = 8.0;
    cfg.n_x = 80;
    const DStudy st = d_convergence_study(g, generic_wall_data(ctx), {4.0, 6.0, 8.0, 10.0}, *b.op, *b.fun, cfg);
    Line out;
    out.pass = st.gaps_decreasing && st.geometric_ratio < 1.0;
    out.detail = "gaps";
    for (double x : st.gaps) out.detail += " " + fmt("%.3e", x);
    out.detail += ", geometric ratio " + fmt("%.4f", st.geometric_ratio);
    return out;
}

Line additivity() {
    const auto& b = bundle(8);
    const MaxwellianContext& ctx = *b.ctx;
    FarFieldConfig cfg;
    cfg.n_x = 80;
    const SlabGrid slab = make_slab(cfg.d, cfg.n_x);
    std::mt19937 rng(kSeed);
    double worst = 0.0;
    for (int pair = 0; pair < 3; ++pair) {
        auto draw = [&](Eigen::MatrixXd& g, NodeValues& r) {
            g = decaying_source(ctx.project_out(kbl::test::random_profile(ctx, rng)), slab, 0.5);
            r = remove_wall_flux(ctx, kbl::test::random_profile(ctx, rng));
            for (std::size_t i : ctx.grid().negative_v3()) r[Eigen::Index(i)] = 0.0;
        };
        Eigen::MatrixXd g1, g2;
        NodeValues r1, r2;
        draw(g1, r1);
        draw(g2, r2);
        const FarFieldResult a = far_field_G(g1, r1, *b.op, *b.fun, cfg);
        const FarFieldResult c = far_field_G(g2, r2, *b.op, *b.fun, cfg);
        const FarFieldResult s = far_field_G(g1 + g2, r1 + r2, *b.op, *b.fun, cfg);
        double d = 0.0;
        for (int k = 0; k < 2; ++k) d = std::max(d, std::abs(s.state.b_inf[k] - a.state.b_inf[k] - c.state.b_inf[k]));
        d = std::max(d, std::abs(s.state.c_inf - a.state.c_inf - c.state.c_inf));
        worst = std::max(worst, d);
    }
    const double tol = SlabSolverOptions{}.tol;
    Line out;
    out.pass = worst <= 10.0 * tol;
    out.detail = "3 random pairs, max |G(a+b) - G(a) - G(b)| " + fmt("%.2e", worst) + " vs " + fmt("%.0e", 10.0 * tol);
    return out;
}

Line nonlinear_contraction() {
    const auto& b = bundle(8);
    const MaxwellianContext& ctx = *b.ctx;
    NonlinearConfig nc;
    nc.farfield.d = 8.0;
    nc.farfield.n_x = 40;
    nc.tol = 1e-12;
    const SlabGrid slab = make_slab(nc.farfield.d, nc.farfield.n_x);
    NonlinearProblem base;
    base.S = decaying_source(generic_source_profile(ctx), slab, 1.0);
    base.R = generic_wall_data(ctx);

    NonlinearProblem small = base;
    small.S *= 0.05;
    small.R *= 0.05;
    const NonlinearResult run = solve_nonlinear(small, *b.quad, *b.op, *b.fun, nc);
    double worst_ratio = 0.0;
    for (const auto& st : run.history) {
        if (st.j >= 3 && st.diff > 1e-13) worst_ratio = std::max(worst_ratio, st.ratio);
    }

    const NonlinearResult lin = picard_step(base, SlabField::zero(ctx.size(), nc.farfield.n_x), *b.quad, *b.op, *b.fun, nc);
    const NodeValues w = ctx.weight_values({});
    std::vector<double> ts{1e-3, 1e-2}, defects;
    for (double t : ts) {
        NonlinearProblem s = base;
        s.S *= t;
        s.R *= t;
        const NonlinearResult r = solve_nonlinear(s, *b.quad, *b.op, *b.fun, nc);
        defects.push_back(weighted_sup(r.f.edges - t * lin.f.edges, w));
    }
    const double slope = std::log(defects[1] / defects[0]) / std::log(ts[1] / ts[0]);
    Line out;
    out.pass = run.report.converged && worst_ratio <= 0.5 && slope >= 1.8;
    out.detail = "delta " + fmt("%.3f", run.delta) + ", max ratio after step 2 " + fmt("%.3f", worst_ratio) +
                 ", quadratic slope " + fmt("%.3f", slope) + " (defects " + fmt("%.2e", defects[0]) + ", " +
                 fmt("%.2e", defects[1]) + ")";
    return out;
}

Line gamma_orthogonality() {
    const auto& b = bundle(12);
    const MaxwellianContext& ctx = *b.ctx;
    std::mt19937 rng(kSeed);
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        const NodeValues f = kbl::test::random_profile(ctx, rng);
        const NodeValues gam = b.quad->gamma(f, f);
        const auto m = ctx.invariant_moments(gam);
        worst = std::max(worst, m.cwiseAbs().maxCoeff() / ctx.norm(gam));
    }
    const NodeValues mu = ctx.mu();
    const NodeValues loss = b.quad->q_loss(mu, mu);
    const NodeValues net = b.quad->q_gain(mu, mu) - loss;
    const double qmm = ctx.norm(net) / ctx.norm(loss);
    Line out;
    out.pass = worst <= 1e-4 && qmm <= 5e-3;
    out.detail = "n=12 max |<Gamma(f,f),chi>|/|Gamma| " + fmt("%.2e", worst) + " (bound 1e-4), Q(mu,mu)/loss " +
                 fmt("%.2e", qmm) + " (bound 5e-3)";
    return out;
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Line()>>> criteria = {
        {"Gaussian moment identities", moment_identities},
        {"operator null space", null_space},
        {"coercivity and kappa positivity", coercivity},
        {"wall operator", wall_operator},
        {"zero data gives zero solution", zero_data},
        {"manufactured-solution convergence", mms},
        {"flux conservation", conservation},
        {"far-field correction efficacy", farfield_efficacy},
        {"slab-length robustness", d_robustness},
        {"additivity of the far-field map", additivity},
        {"nonlinear contraction", nonlinear_contraction},
        {"Gamma orthogonality", gamma_orthogonality},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        Line l;
        const auto t0 = Clock::now();
        try {
            l = criteria[k].second();
        } catch (const std::exception& e) {
            l.pass = false;
            l.detail = std::string("exception: ") + e.what();
        }
        if (!l.pass) ++failed;
        std::printf("%s %2zu %s: %s [%.1f s]\n", l.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, l.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
