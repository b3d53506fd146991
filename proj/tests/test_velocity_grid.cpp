#include "kbl/errors.hpp"
#include "kbl/velocity_grid.hpp"

#include <doctest.h>

#include <cmath>

using namespace kbl;

TEST_SUITE("velocity_grid") {
TEST_CASE("staggered lattice has no zero coordinate and matches 1D Gaussian quadrature") {
    const VelocityGrid g = build_grid(12, 6.0, true);
    CHECK(g.size() == 12u * 12u * 12u);
    CHECK_FALSE(g.has_grazing_nodes());
    CHECK(g.min_abs_v3() == doctest::Approx(0.5));
    double sum = 0.0, second = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double e = std::exp(-0.5 * norm2(g.node(i)));
        sum += g.weight(i) * e;
        second += g.weight(i) * g.node(i)[2] * g.node(i)[2] * e;
    }
    // Midpoint rule on a Gaussian is spectrally accurate.
    const double z = std::pow(2.0 * M_PI, 1.5);
    CHECK(std::abs(sum / z - 1.0) < 1e-7);
    CHECK(std::abs(second / z - 1.0) < 1e-6);
}

TEST_CASE("unstaggered lattice keeps grazing nodes and trapezoid weights") {
    const VelocityGrid g = build_grid(9, 4.0, false);
    CHECK(g.has_grazing_nodes());
    CHECK(g.weights().sum() == doctest::Approx(512.0));
}

TEST_CASE("specular map is an involution that flips v3") {
    const VelocityGrid g = build_grid(6, 5.0, true);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t j = g.specular_map(i);
        CHECK(g.specular_map(j) == i);
        CHECK(g.node(j)[2] == doctest::Approx(-g.node(i)[2]));
        CHECK(g.node(j)[0] == g.node(i)[0]);
    }
    CHECK(g.positive_v3().size() + g.negative_v3().size() == g.size());
    CHECK(g.positive_v3().size() == g.negative_v3().size());
}

TEST_CASE("trilinear interpolation reproduces affine functions inside the hull") {
    const VelocityGrid g = build_grid(8, 4.0, true);
    NodeValues f(Eigen::Index(g.size()));
    auto affine = [](const Vec3& v) { return 1.5 - 0.3 * v[0] + 2.0 * v[1] + 0.7 * v[2]; };
    for (std::size_t i = 0; i < g.size(); ++i) f[Eigen::Index(i)] = affine(g.node(i));
    for (const Vec3& p : {Vec3{0.1, -0.2, 0.3}, Vec3{2.2, 1.9, -3.1}, Vec3{-3.4, 0.0, 1.0}}) {
        CHECK(g.interpolate(f, p) == doctest::Approx(affine(p)).epsilon(1e-12));
    }
    CHECK(g.interpolate(f, Vec3{10.0, 0.0, 0.0}) == 0.0);
    const InterpolationStencil s = g.stencil(Vec3{0.1, 0.2, 0.3});
    double w = 0.0;
    for (int k = 0; k < s.size; ++k) w += s.entries[std::size_t(k)].weight;
    CHECK(w == doctest::Approx(1.0));
}

TEST_CASE("invalid construction is rejected") {
    CHECK_THROWS_AS(build_grid(3, 5.0), ConfigError);
    CHECK_THROWS_AS(build_grid(8, 0.0), ConfigError);
    CHECK_THROWS_AS(build_grid(8, -1.0), ConfigError);
}

TEST_CASE("signature distinguishes grids") {
    CHECK(build_grid(8, 5.0, true).signature() != build_grid(8, 5.0, false).signature());
    CHECK(build_grid(8, 5.0, true).signature() != build_grid(10, 5.0, true).signature());
}
}
