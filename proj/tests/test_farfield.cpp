#include "kbl/errors.hpp"
#include "kbl/farfield.hpp"
#include "kbl/harness.hpp"

#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace kbl;

namespace {

FarFieldConfig small_config() {
    FarFieldConfig c;
    c.d = 6.0;
    c.n_x = 60;
    return c;
}

}  // namespace

TEST_SUITE("farfield") {
TEST_CASE("wall-mass subtraction leaves zero outgoing flux") {
    const auto& b = test::bundle(6);
    const FarFieldConfig cfg = small_config();
    const SlabGrid slab = make_slab(cfg.d, cfg.n_x);
    LinearSlabProblem p;
    p.r = generic_wall_data(*b.ctx);
    p.g = decaying_source(generic_source_profile(*b.ctx), slab, 1.0);
    const auto r = solve_linear_slab(p, slab, *b.op);
    const GammaMassSplit s = subtract_gamma_mass(*b.ctx, r.field);
    CHECK(std::abs(b.ctx->wall_flux(s.barf.wall_trace())) < 1e-14);
    CHECK(std::abs(s.z - b.ctx->wall_flux(r.field.wall_trace())) < 1e-15);
}

TEST_CASE("far state bookkeeping") {
    const FarFieldState s = FarFieldState::from_phi({0.1, -0.2, 0.3, -0.4}, 8.0);
    CHECK(s.b_inf[0] == 0.2);
    CHECK(s.b_inf[1] == -0.3);
    CHECK(s.c_inf == 0.4);
    CHECK(s.consistent());
    const Eigen::Matrix4d M = phi_matrix({0.5, 0.5, 2.0});
    CHECK(M(0, 0) == 1.0);
    CHECK(M(0, 3) == 1.0);
    CHECK(M(1, 1) == 0.5);
    CHECK(M(2, 2) == 0.5);
    CHECK(M(3, 3) == 2.0);
    CHECK(M(1, 0) == 0.0);
}

TEST_CASE("corrected layer decays and the far state is homogeneous") {
    const auto& b = test::bundle(6);
    const FarFieldConfig cfg = small_config();
    const NodeValues r = generic_wall_data(*b.ctx);
    const FarFieldResult a = far_field_G({}, r, *b.op, *b.fun, cfg);
    CHECK(a.report.converged);
    CHECK(a.tilde_tail < 1e-3 * a.bar_tail);
    CHECK(std::abs(a.tilde_f.far_trace().maxCoeff()) < 1e-8);
    const FarFieldResult c = far_field_G({}, 2.0 * r, *b.op, *b.fun, cfg);
    CHECK(c.state.c_inf == doctest::Approx(2.0 * a.state.c_inf));
    CHECK(c.state.b_inf[0] == doctest::Approx(2.0 * a.state.b_inf[0]));
    // Zero data gives the zero state.
    const FarFieldResult z = far_field_G({}, NodeValues::Zero(r.size()), *b.op, *b.fun, cfg);
    CHECK(z.state.c_inf == 0.0);
    CHECK(test::sup(z.tilde_f.edges) == 0.0);
}

TEST_CASE("macroscopic reconstruction from boundary data") {
    const auto& b = test::bundle(6);
    double prev = 0.0;
    for (int nx : {60, 120}) {
        FarFieldConfig cfg = small_config();
        cfg.n_x = nx;
        const SlabGrid slab = make_slab(cfg.d, nx);
        const Eigen::MatrixXd g = decaying_source(generic_source_profile(*b.ctx), slab, 1.0);
        const FarFieldResult r = far_field_G(g, generic_wall_data(*b.ctx), *b.op, *b.fun, cfg);
        const MacroFields direct = macro_moments(*b.ctx, r.barf.edges, slab.x_nodes);
        const MacroFields rec = reconstruct_macro_from_boundary(r.barf, g, slab, *b.op, *b.fun);
        const double err = std::max({(direct.a - rec.a).cwiseAbs().maxCoeff(), (direct.b1 - rec.b1).cwiseAbs().maxCoeff(),
                                     (direct.c - rec.c).cwiseAbs().maxCoeff(), (direct.b3 - rec.b3).cwiseAbs().maxCoeff()});
        CHECK(direct.b3.cwiseAbs().maxCoeff() < 1e-10);
        if (prev > 0.0) CHECK(err < 0.7 * prev);
        prev = err;
    }
}

TEST_CASE("incompatible data is rejected with the failing moment") {
    const auto& b = test::bundle(6);
    const FarFieldConfig cfg = small_config();
    const SlabGrid slab = make_slab(cfg.d, cfg.n_x);
    const Eigen::MatrixXd g = decaying_source(b.ctx->sqrt_mu(), slab, 1.0);
    const CompatibilityReport rep = check_source_compatibility(*b.ctx, g, {}, 1e-8);
    CHECK_FALSE(rep.ok);
    CHECK(rep.failure.find("mass") != std::string::npos);
    CHECK_THROWS_AS(far_field_G(g, {}, *b.op, *b.fun, cfg), PreconditionError);
    NodeValues r = NodeValues::Zero(Eigen::Index(b.grid->size()));
    for (std::size_t i : b.grid->positive_v3()) r[Eigen::Index(i)] = b.ctx->sqrt_mu()[Eigen::Index(i)];
    CHECK_FALSE(check_source_compatibility(*b.ctx, {}, r, 1e-8).ok);
}

TEST_CASE("slab-length study emits one row per length") {
    const auto& b = test::bundle(6);
    const NodeValues prof = generic_source_profile(*b.ctx);
    const SourceFn g = [&prof](double x) { return NodeValues(prof * std::exp(-0.5 * x)); };
    FarFieldConfig cfg = small_config();
    cfg.n_x = 30;
    const DStudy st = d_convergence_study(g, generic_wall_data(*b.ctx), {3.0, 5.0, 7.0}, *b.op, *b.fun, cfg);
    CHECK(st.rows.size() == 3);
    CHECK(st.gaps.size() == 2);
    CHECK(st.rows[1].n_x == 25);
    CHECK(st.gaps_decreasing);
    CHECK(st.geometric_ratio < 1.0);
    CHECK_THROWS_AS(d_convergence_study(g, {}, {5.0, 3.0}, *b.op, *b.fun, cfg), ConfigError);
}
}
