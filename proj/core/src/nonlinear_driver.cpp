#include "kbl/nonlinear_driver.hpp"

#include "kbl/errors.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace kbl {

namespace {

using Index = Eigen::Index;

double state_jump(const FarFieldState& a, const FarFieldState& b) {
    return std::sqrt(std::pow(a.b_inf[0] - b.b_inf[0], 2) + std::pow(a.b_inf[1] - b.b_inf[1], 2) +
                     std::pow(a.c_inf - b.c_inf, 2));
}

struct StepOutput {
    SlabField f;
    FarFieldState state;
    double raw = 0.0;
    double projected = 0.0;
};

StepOutput advance(const NonlinearProblem& p, const SlabGrid& slab, const SlabField* prev, const CollisionQuadrature& q,
                   const LinearizedOperator& op, const TransportFunctionals& fun, const NonlinearConfig& cfg) {
    const MaxwellianContext& ctx = op.context();
    const Index N = Index(op.size());
    StepOutput out;
    Eigen::MatrixXd g = p.S.size() ? p.S : Eigen::MatrixXd::Zero(N, slab.n_edges());
    if (prev) g += projected_gamma(q, prev->edges, &out.raw, &out.projected);

    if (cfg.correction == BoundaryCorrection::FarField) {
        FarFieldConfig fc = cfg.farfield;
        fc.p_E0 = p.p_E0;
        FarFieldResult res = far_field_G(g, p.R, op, fun, fc);
        out.f = std::move(res.tilde_f);
        out.state = res.state;
        return out;
    }
    LinearSlabProblem lp;
    lp.g = std::move(g);
    lp.r = p.R;
    lp.p_E0 = p.p_E0;
    LinearSolveResult lin = solve_linear_slab(lp, slab, op, cfg.farfield.solver);
    if (!lin.report.converged) throw SolverError("nonlinear: inner slab solve did not converge");
    const double a_far = ctx.coefficients(lin.field.far_trace()).a;
    lin.field.edges.colwise() -= a_far * ctx.sqrt_mu();
    lin.field.cells.colwise() -= a_far * ctx.sqrt_mu();
    out.f = std::move(lin.field);
    return out;
}

}  // namespace

double data_size(const NonlinearProblem& p, const SlabGrid& slab, const LinearizedOperator& op) {
    const MaxwellianContext& ctx = op.context();
    const NodeValues w = ctx.weight_values(p.weight);
    const NodeValues w_over_nu = w.cwiseQuotient(op.nu());
    double s = 0.0;
    for (Index k = 0; k < p.S.cols(); ++k) {
        const double e = std::exp(p.sigma0 * slab.x_nodes[std::size_t(k)]);
        s = std::max(s, e * p.S.col(k).cwiseAbs().cwiseProduct(w_over_nu).maxCoeff());
    }
    double r = 0.0;
    if (p.R.size()) {
        for (std::size_t i : ctx.grid().positive_v3()) r = std::max(r, w[Index(i)] * std::abs(p.R[Index(i)]));
    }
    return s + r;
}

CompatibilityTable check_compatibility(const NonlinearProblem& p, const MaxwellianContext& ctx, double tol) {
    static const char* names[5] = {"mass", "momentum_1", "momentum_2", "momentum_3", "energy"};
    CompatibilityTable t;
    t.tol = tol;
    t.source_moments.resize(p.S.cols(), 5);
    for (Index k = 0; k < p.S.cols(); ++k) t.source_moments.row(k) = ctx.invariant_moments(p.S.col(k)).transpose();
    char buf[200];
    for (Index k = 0; k < p.S.cols() && t.ok; ++k) {
        for (int j = 0; j < 5; ++j) {
            if (std::abs(t.source_moments(k, j)) > tol) {
                t.ok = false;
                std::snprintf(buf, sizeof buf, "source %s moment %.3e at edge %ld exceeds %.1e", names[j],
                              t.source_moments(k, j), long(k), tol);
                t.failure = buf;
                break;
            }
        }
    }
    if (p.R.size()) {
        const VelocityGrid& g = ctx.grid();
        for (std::size_t i : g.positive_v3()) t.wall_flux += g.weight(i) * g.node(i)[2] * ctx.sqrt_mu()[Index(i)] * p.R[Index(i)];
        if (std::abs(t.wall_flux) > tol && t.ok) {
            t.ok = false;
            std::snprintf(buf, sizeof buf, "incoming wall mass flux %.3e exceeds %.1e", t.wall_flux, tol);
            t.failure = buf;
        }
    }
    return t;
}

Eigen::MatrixXd projected_gamma(const CollisionQuadrature& q, const Eigen::MatrixXd& f, double* raw_defect,
                                double* projected_defect) {
    const MaxwellianContext& ctx = q.context();
    Eigen::MatrixXd G = q.gamma_columns(f, f);
    double raw = 0.0, proj = 0.0;
    for (Index k = 0; k < G.cols(); ++k) {
        const double nrm = ctx.norm(G.col(k));
        if (raw_defect && nrm > 0.0) raw = std::max(raw, ctx.invariant_moments(G.col(k)).cwiseAbs().maxCoeff() / nrm);
        G.col(k) = ctx.project_out(G.col(k));
        if (projected_defect && nrm > 0.0) {
            proj = std::max(proj, ctx.invariant_moments(G.col(k)).cwiseAbs().maxCoeff() / nrm);
        }
    }
    if (raw_defect) *raw_defect = raw;
    if (projected_defect) *projected_defect = proj;
    return G;
}

double picard_norm(const Eigen::MatrixXd& edges, const SlabGrid& slab, const NodeValues& w, double sigma0) {
    double s = 0.0;
    for (Index k = 0; k < edges.cols(); ++k) {
        const double e = std::exp(0.5 * sigma0 * slab.x_nodes[std::size_t(k)]);
        s = std::max(s, e * edges.col(k).cwiseAbs().cwiseProduct(w).maxCoeff());
    }
    return s;
}

NonlinearResult solve_nonlinear(const NonlinearProblem& p, const CollisionQuadrature& q, const LinearizedOperator& op,
                                const TransportFunctionals& fun, const NonlinearConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const MaxwellianContext& ctx = op.context();
    NonlinearResult out;
    out.slab = make_slab(cfg.farfield.d, cfg.farfield.n_x);
    if (p.S.size() && (p.S.rows() != Index(op.size()) || p.S.cols() != out.slab.n_edges())) {
        throw PreconditionError("nonlinear: source has the wrong shape");
    }
    if (p.R.size() && p.R.size() != Index(op.size())) throw PreconditionError("nonlinear: R has the wrong length");
    p.weight.validate();
    if (!(p.sigma0 > 0.0)) throw ConfigError("nonlinear: sigma0 must be positive");
    const CompatibilityTable comp = check_compatibility(p, ctx, cfg.farfield.compat_tol);
    if (!comp.ok) throw PreconditionError("nonlinear: " + comp.failure);

    out.delta = data_size(p, out.slab, op);
    if (out.delta > cfg.delta_max) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "nonlinear: data size delta = %.4g exceeds the configured limit %.4g",
                      out.delta, cfg.delta_max);
        throw SmallnessError(buf, out.delta);
    }

    const NodeValues w = ctx.weight_values(p.weight);
    out.report.method = "picard";
    SlabField f = SlabField::zero(op.size(), out.slab.n_x);
    FarFieldState state;
    bool first = true;
    int growing = 0;
    for (int j = 1; j <= cfg.max_iter; ++j) {
        StepOutput next;
        try {
            next = advance(p, out.slab, first ? nullptr : &f, q, op, fun, cfg);
        } catch (const SolverError& e) {
            // A blown-up iterate defeats the absolute inner tolerance.
            if (growing == 0) throw;
            throw SmallnessError(std::string("nonlinear: Picard differences were growing when the inner solve failed (") +
                                     e.what() + ")",
                                 out.delta);
        }
        PicardStep step;
        step.j = j;
        step.diff = picard_norm(next.f.edges - f.edges, out.slab, w, p.sigma0) + state_jump(next.state, state);
        step.ratio = out.history.empty() || out.history.back().diff == 0.0 ? 0.0 : step.diff / out.history.back().diff;
        step.state = next.state;
        step.gamma_defect_raw = next.raw;
        step.gamma_defect_projected = next.projected;
        f = std::move(next.f);
        state = next.state;
        first = false;
        out.history.push_back(step);
        out.report.residual_history.push_back(step.diff);
        out.report.iterations = j;
        if (step.diff < cfg.tol) {
            out.report.converged = true;
            break;
        }
        growing = (j > 1 && step.ratio >= 1.0) ? growing + 1 : 0;
        if (growing >= cfg.divergence_window) {
            char buf[200];
            std::snprintf(buf, sizeof buf,
                          "nonlinear: Picard differences grew for %d consecutive steps (delta = %.4g); the data is "
                          "too large for contraction",
                          growing, out.delta);
            throw SmallnessError(buf, out.delta);
        }
    }
    out.report.final_update = out.history.empty() ? 0.0 : out.history.back().diff;
    if (out.history.size() >= 3) {
        std::vector<double> r;
        for (std::size_t k = 2; k < out.history.size(); ++k) r.push_back(out.history[k].ratio);
        std::nth_element(r.begin(), r.begin() + r.size() / 2, r.end());
        out.report.contraction = r[r.size() / 2];
    }
    out.f = std::move(f);
    out.state = state;
    out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

NonlinearResult picard_step(const NonlinearProblem& p, const SlabField& f, const CollisionQuadrature& q,
                            const LinearizedOperator& op, const TransportFunctionals& fun, const NonlinearConfig& cfg) {
    NonlinearResult out;
    out.slab = make_slab(cfg.farfield.d, cfg.farfield.n_x);
    StepOutput next = advance(p, out.slab, &f, q, op, fun, cfg);
    out.f = std::move(next.f);
    out.state = next.state;
    out.report.iterations = 1;
    out.report.method = "picard";
    out.delta = data_size(p, out.slab, op);
    return out;
}

ScaleSearch largest_contracting_scale(const NonlinearProblem& p, const CollisionQuadrature& q,
                                      const LinearizedOperator& op, const TransportFunctionals& fun,
                                      const NonlinearConfig& cfg, double t_lo, double t_hi, double target, int steps,
                                      int probe_iterations) {
    if (!(t_lo > 0.0) || !(t_hi > t_lo)) throw ConfigError("scale search: need 0 < t_lo < t_hi");
    ScaleSearch out;
    NonlinearConfig c = cfg;
    c.max_iter = probe_iterations;
    c.delta_max = std::numeric_limits<double>::infinity();
    c.tol = 0.0;
    auto probe = [&](double t) {
        NonlinearProblem s = p;
        s.S *= t;
        s.R *= t;
        double ratio = 0.0;
        try {
            const NonlinearResult r = solve_nonlinear(s, q, op, fun, c);
            const double floor = 1e-13 * (1.0 + r.history.front().diff);
            for (std::size_t k = 2; k < r.history.size(); ++k) {
                if (r.history[k - 1].diff > floor) ratio = std::max(ratio, r.history[k].ratio);
            }
        } catch (const SmallnessError&) {
            ratio = std::numeric_limits<double>::infinity();
        } catch (const NumericalError&) {
            ratio = std::numeric_limits<double>::infinity();
        }
        out.trials.emplace_back(t, ratio);
        return ratio;
    };
    const double r_hi = probe(t_hi);
    if (r_hi <= target) {
        out.t_max = t_hi;
        out.ratio_at_t_max = r_hi;
        return out;
    }
    const double r_lo = probe(t_lo);
    if (r_lo > target) return out;
    double lo = t_lo, hi = t_hi, best = r_lo;
    for (int k = 0; k < steps; ++k) {
        const double mid = std::sqrt(lo * hi);
        const double r = probe(mid);
        if (r <= target) {
            lo = mid;
            best = r;
        } else {
            hi = mid;
        }
    }
    out.t_max = lo;
    out.ratio_at_t_max = best;
    return out;
}

NodeValues manifold_boundary(const NonlinearProblem& p_with_r, const CollisionQuadrature& q,
                             const LinearizedOperator& op, const TransportFunctionals& fun, const NonlinearConfig& cfg,
                             NonlinearResult* solved) {
    const MaxwellianContext& ctx = op.context();
    NonlinearConfig c = cfg;
    c.correction = BoundaryCorrection::FarField;
    NonlinearResult res = solve_nonlinear(p_with_r, q, op, fun, c);
    const NodeValues finf = far_field_profile(ctx, res.state);
    NodeValues R = -(finf - ctx.pgamma(finf));
    if (p_with_r.R.size()) R += p_with_r.R;
    for (std::size_t i : ctx.grid().negative_v3()) R[Index(i)] = 0.0;
    if (solved) *solved = std::move(res);
    return R;
}

NodeValues remove_wall_flux(const MaxwellianContext& ctx, const NodeValues& r) {
    const VelocityGrid& g = ctx.grid();
    double flux = 0.0, prof = 0.0;
    for (std::size_t i : g.positive_v3()) {
        const double a = g.weight(i) * g.node(i)[2] * ctx.sqrt_mu()[Index(i)];
        flux += a * r[Index(i)];
        prof += a * ctx.wall_profile()[Index(i)];
    }
    return r - (flux / prof) * ctx.wall_profile();
}

DependenceFit continuous_dependence(const NonlinearProblem& p, const CollisionQuadrature& q,
                                    const LinearizedOperator& op, const TransportFunctionals& fun,
                                    const NonlinearConfig& cfg, int directions, double eps, unsigned seed) {
    const MaxwellianContext& ctx = op.context();
    const SlabGrid slab = make_slab(cfg.farfield.d, cfg.farfield.n_x);
    const Index N = Index(op.size());
    const NodeValues w = ctx.weight_values(p.weight);
    const NonlinearResult base = solve_nonlinear(p, q, op, fun, cfg);
    const double scale = std::max(base.delta, 1e-300);

    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    DependenceFit out;
    for (int k = 0; k < directions; ++k) {
        NodeValues shapeS(N), shapeR(N);
        for (Index i = 0; i < N; ++i) {
            shapeS[i] = U(rng) * ctx.sqrt_mu()[i] * op.nu()[i];
            shapeR[i] = U(rng) * ctx.sqrt_mu()[i];
        }
        shapeS = ctx.project_out(shapeS);
        shapeR = remove_wall_flux(ctx, shapeR);
        NonlinearProblem d;
        d.S.resize(N, slab.n_edges());
        for (int e = 0; e < slab.n_edges(); ++e) d.S.col(e) = shapeS * std::exp(-p.sigma0 * slab.x_nodes[std::size_t(e)]);
        d.R = shapeR;
        d.weight = p.weight;
        d.sigma0 = p.sigma0;
        const double dsize = data_size(d, slab, op);
        const double factor = eps * scale / dsize;
        NonlinearProblem pert = p;
        pert.S = (p.S.size() ? p.S : Eigen::MatrixXd::Zero(N, slab.n_edges())) + factor * d.S;
        pert.R = (p.R.size() ? p.R : NodeValues::Zero(N)) + factor * d.R;
        const NonlinearResult other = solve_nonlinear(pert, q, op, fun, cfg);
        const double out_diff =
            picard_norm(other.f.edges - base.f.edges, slab, w, p.sigma0) + state_jump(other.state, base.state);
        out.constants.push_back(out_diff / (eps * scale));
    }
    if (!out.constants.empty()) {
        double lo = out.constants.front(), hi = lo, s = 0.0;
        for (double c : out.constants) {
            lo = std::min(lo, c);
            hi = std::max(hi, c);
            s += c;
        }
        out.mean = s / double(out.constants.size());
        out.rel_spread = out.mean > 0.0 ? (hi - lo) / out.mean : 0.0;
    }
    return out;
}

}  // namespace kbl
