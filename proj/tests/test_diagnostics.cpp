#include "kbl/diagnostics.hpp"
#include "kbl/errors.hpp"
#include "kbl/farfield.hpp"
#include "kbl/harness.hpp"

#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace kbl;

TEST_SUITE("diagnostics") {
TEST_CASE("decay fit recovers a known exponential rate") {
    const SlabGrid slab = make_slab(8.0, 80);
    Eigen::MatrixXd f(3, slab.n_edges());
    for (int k = 0; k < slab.n_edges(); ++k) {
        const double x = slab.x_nodes[std::size_t(k)];
        f.col(k) << 2.0 * std::exp(-0.7 * x), -std::exp(-0.7 * x), 0.0;
    }
    const DecayFit fit = fit_decay_rate(f, slab, NodeValues::Ones(3));
    CHECK(fit.sigma_fit == doctest::Approx(0.7).epsilon(1e-10));
    CHECK(fit.intercept == doctest::Approx(std::log(2.0)).epsilon(1e-10));
    CHECK(fit.r_squared == doctest::Approx(1.0));
    CHECK(fit.monotone);
    CHECK(fit.points_used == 61);
    CHECK(fit_decay_rate(Eigen::MatrixXd::Zero(3, slab.n_edges()), slab, NodeValues::Ones(3)).identically_zero);
    CHECK_THROWS_AS(fit_decay_rate(f, slab, NodeValues::Ones(3), 5.0, 2.0), ConfigError);
}

TEST_CASE("decay fit skips values at the rounding floor") {
    const SlabGrid slab = make_slab(8.0, 80);
    Eigen::MatrixXd f(1, slab.n_edges());
    for (int k = 0; k < slab.n_edges(); ++k) f(0, k) = std::max(std::exp(-6.0 * slab.x_nodes[std::size_t(k)]), 1e-16);
    const DecayFit fit = fit_decay_rate(f, slab, NodeValues::Ones(1));
    CHECK(fit.sigma_fit == doctest::Approx(6.0).epsilon(1e-8));
    CHECK(fit.points_used < 61);
}

TEST_CASE("order fit on synthetic data") {
    const std::vector<double> h{0.4, 0.2, 0.1, 0.05};
    std::vector<double> e;
    for (double x : h) e.push_back(3.0 * x * x);
    const OrderFit f = fit_convergence_order(h, e);
    CHECK(f.order == doctest::Approx(2.0));
    CHECK(f.ratios[0] == doctest::Approx(4.0));
    CHECK_THROWS(fit_convergence_order({0.1}, {0.2}));
    CHECK_THROWS_AS(fit_convergence_order({0.1, 0.2}, {0.0, 1.0}), NumericalError);
}

TEST_CASE("flux moments are conserved for sources in N-perp") {
    const auto& b = test::bundle(6);
    const SlabGrid slab = make_slab(4.0, 40);
    LinearSlabProblem p;
    p.g = decaying_source(generic_source_profile(*b.ctx), slab, 1.0);
    p.r = generic_wall_data(*b.ctx);
    const auto r = solve_linear_slab(p, slab, *b.op);
    const ConservationReport c = conservation_report(r.field.edges, p.g, *b.ctx);
    CHECK(c.max_drift < 1e-8);
    for (double m : c.source_moments) CHECK(m < 1e-12);
    CHECK(c.flux.rows() == slab.n_edges());
}

TEST_CASE("energy balance is quadratic in the data and bounded") {
    const auto& b = test::bundle(6);
    FarFieldConfig cfg;
    cfg.d = 6.0;
    cfg.n_x = 60;
    const SlabGrid slab = make_slab(cfg.d, cfg.n_x);
    const Eigen::MatrixXd g = decaying_source(generic_source_profile(*b.ctx), slab, 1.0);
    const NodeValues r = generic_wall_data(*b.ctx);
    const FarFieldResult a = far_field_G(g, r, *b.op, *b.fun, cfg);
    const FarFieldResult c = far_field_G(2.0 * g, 2.0 * r, *b.op, *b.fun, cfg);
    const EnergyCheck e1 = energy_dissipation_check(a.barf.edges, r, g, slab, *b.op, 0.2);
    const EnergyCheck e2 = energy_dissipation_check(c.barf.edges, 2.0 * r, 2.0 * g, slab, *b.op, 0.2);
    CHECK(e1.finite);
    CHECK(e1.lhs > 0.0);
    CHECK(e1.ratio < 100.0);
    CHECK(e2.lhs == doctest::Approx(4.0 * e1.lhs));
    CHECK(e2.rhs == doctest::Approx(4.0 * e1.rhs));
}

TEST_CASE("coercivity estimate is positive") {
    const auto& b = test::bundle(6);
    const CoercivityResult c = coercivity_estimate(*b.op);
    CHECK(c.c0 > 0.0);
    CHECK(c.c0 < 1.0);
}
}
