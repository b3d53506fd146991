#include "kbl/errors.hpp"
#include "kbl/harness.hpp"
#include "kbl/nonlinear_driver.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

#include "support.hpp"

using namespace kbl;

namespace {

NonlinearConfig small_config() {
    NonlinearConfig c;
    c.farfield.d = 4.0;
    c.farfield.n_x = 20;
    return c;
}

NonlinearProblem generic(const test::Bundle& b, double t, const NonlinearConfig& c) {
    const SlabGrid slab = make_slab(c.farfield.d, c.farfield.n_x);
    NonlinearProblem p;
    p.S = t * decaying_source(generic_source_profile(*b.ctx), slab, 1.0);
    p.R = t * generic_wall_data(*b.ctx);
    return p;
}

}  // namespace

TEST_SUITE("nonlinear_driver") {
TEST_CASE("zero data converges to zero at once") {
    const auto& b = test::bundle(6);
    const NonlinearResult r = solve_nonlinear({}, *b.quad, *b.op, *b.fun, small_config());
    CHECK(r.report.converged);
    CHECK(r.report.iterations == 1);
    CHECK(test::sup(r.f.edges) == 0.0);
    CHECK(r.delta == 0.0);
}

TEST_CASE("small data contracts and the fixed point satisfies one more step") {
    const auto& b = test::bundle(6);
    NonlinearConfig c = small_config();
    c.tol = 1e-11;
    const NonlinearProblem p = generic(b, 0.05, c);
    const NonlinearResult r = solve_nonlinear(p, *b.quad, *b.op, *b.fun, c);
    REQUIRE(r.report.converged);
    CHECK(r.report.method == "picard");
    CHECK(r.report.contraction < 0.5);
    CHECK(r.history.back().gamma_defect_projected < 1e-12);
    const NonlinearResult again = picard_step(p, r.f, *b.quad, *b.op, *b.fun, c);
    const SlabGrid slab = make_slab(c.farfield.d, c.farfield.n_x);
    CHECK(picard_norm(again.f.edges - r.f.edges, slab, b.ctx->weight_values({}), p.sigma0) < 1e-9);
    CHECK(std::abs(again.state.c_inf - r.state.c_inf) < 1e-10);
}

TEST_CASE("large data is refused by the smallness check") {
    const auto& b = test::bundle(6);
    const NonlinearConfig c = small_config();
    const NonlinearProblem p = generic(b, 50.0, c);
    try {
        (void)solve_nonlinear(p, *b.quad, *b.op, *b.fun, c);
        FAIL("expected SmallnessError");
    } catch (const SmallnessError& e) {
        CHECK(e.delta() > c.delta_max);
    }
}

TEST_CASE("divergence is detected when the smallness gate is disabled") {
    const auto& b = test::bundle(6);
    NonlinearConfig c = small_config();
    c.delta_max = std::numeric_limits<double>::infinity();
    const NonlinearProblem p = generic(b, 40.0, c);
    CHECK_THROWS_AS(solve_nonlinear(p, *b.quad, *b.op, *b.fun, c), SmallnessError);
}

TEST_CASE("compatibility of the source is enforced") {
    const auto& b = test::bundle(6);
    const NonlinearConfig c = small_config();
    NonlinearProblem p = generic(b, 0.01, c);
    const CompatibilityTable ok = check_compatibility(p, *b.ctx);
    CHECK(ok.ok);
    CHECK(ok.source_moments.rows() == c.farfield.n_x + 1);
    p.S.col(3) += b.ctx->sqrt_mu();
    const CompatibilityTable bad = check_compatibility(p, *b.ctx);
    CHECK_FALSE(bad.ok);
    CHECK(bad.failure.find("mass") != std::string::npos);
    CHECK_THROWS_AS(solve_nonlinear(p, *b.quad, *b.op, *b.fun, c), PreconditionError);
}

TEST_CASE("projected Gamma lies in N-perp") {
    const auto& b = test::bundle(6);
    std::mt19937 rng(21);
    Eigen::MatrixXd f(Eigen::Index(b.grid->size()), 3);
    for (int k = 0; k < 3; ++k) f.col(k) = test::random_profile(*b.ctx, rng);
    double raw = 0.0, proj = 0.0;
    const Eigen::MatrixXd g = projected_gamma(*b.quad, f, &raw, &proj);
    CHECK(proj < 1e-13);
    CHECK(raw > proj);
    for (int k = 0; k < 3; ++k) CHECK(b.ctx->invariant_moments(g.col(k)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("continuous dependence constants are stable across directions") {
    const auto& b = test::bundle(6);
    NonlinearConfig c = small_config();
    c.tol = 1e-11;
    const NonlinearProblem p = generic(b, 0.05, c);
    const DependenceFit fit = continuous_dependence(p, *b.quad, *b.op, *b.fun, c, 3, 1e-3, 99);
    REQUIRE(fit.constants.size() == 3);
    for (double k : fit.constants) {
        CHECK(std::isfinite(k));
        CHECK(k > 0.0);
    }
    CHECK(fit.rel_spread < 2.0);
    const DependenceFit same = continuous_dependence(p, *b.quad, *b.op, *b.fun, c, 3, 1e-3, 99);
    CHECK(same.constants == fit.constants);
}

TEST_CASE("manifold boundary data and flux removal") {
    const auto& b = test::bundle(6);
    NonlinearConfig c = small_config();
    const NonlinearProblem p = generic(b, 0.05, c);
    NonlinearResult solved;
    const NodeValues R = manifold_boundary(p, *b.quad, *b.op, *b.fun, c, &solved);
    for (std::size_t i : b.grid->negative_v3()) CHECK(R[Eigen::Index(i)] == 0.0);
    CHECK(solved.report.converged);
    std::mt19937 rng(4);
    const NodeValues r = remove_wall_flux(*b.ctx, test::random_profile(*b.ctx, rng));
    double flux = 0.0;
    for (std::size_t i : b.grid->positive_v3()) {
        flux += b.grid->weight(i) * b.grid->node(i)[2] * b.ctx->sqrt_mu()[Eigen::Index(i)] * r[Eigen::Index(i)];
    }
    CHECK(std::abs(flux) < 1e-15);
}

TEST_CASE("data size is homogeneous of degree one") {
    const auto& b = test::bundle(6);
    const NonlinearConfig c = small_config();
    const SlabGrid slab = make_slab(c.farfield.d, c.farfield.n_x);
    const double d1 = data_size(generic(b, 1.0, c), slab, *b.op);
    CHECK(d1 > 0.0);
    CHECK(data_size(generic(b, 3.0, c), slab, *b.op) == doctest::Approx(3.0 * d1));
}
}
