#pragma once

#include "kbl/collision_op.hpp"
#include "kbl/gaussian_core.hpp"
#include "kbl/velocity_grid.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <random>

namespace kbl::test {

// Grid, context, operator and functionals kept alive together; cached per
// (n, v_max) because assembly dominates test time.
struct Bundle {
    std::unique_ptr<VelocityGrid> grid;
    std::unique_ptr<MaxwellianContext> ctx;
    std::unique_ptr<LinearizedOperator> op;
    std::unique_ptr<TransportFunctionals> fun;
    std::unique_ptr<CollisionQuadrature> quad;
};

inline Bundle& bundle(int n, double v_max = 5.0) {
    static std::map<std::pair<int, double>, std::unique_ptr<Bundle>> cache;
    auto& slot = cache[{n, v_max}];
    if (!slot) {
        slot = std::make_unique<Bundle>();
        slot->grid = std::make_unique<VelocityGrid>(build_grid(n, v_max, true));
        slot->ctx = std::make_unique<MaxwellianContext>(*slot->grid);
        slot->op = std::make_unique<LinearizedOperator>(assemble_operator(*slot->ctx));
        slot->fun = std::make_unique<TransportFunctionals>(transport_functionals(*slot->op));
        slot->quad = std::make_unique<CollisionQuadrature>(*slot->ctx, CollisionOptions{});
    }
    return *slot;
}

inline NodeValues random_profile(const MaxwellianContext& ctx, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    NodeValues f(Eigen::Index(ctx.size()));
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = u(rng) * ctx.sqrt_mu()[i];
    return f;
}

inline double sup(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace kbl::test
