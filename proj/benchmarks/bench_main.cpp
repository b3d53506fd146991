#include "kbl/collision_op.hpp"
#include "kbl/harness.hpp"
#include "kbl/slab_solver.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace kbl;

static void BM_AssembleOperator(benchmark::State& state) {
    const VelocityGrid g = build_grid(int(state.range(0)), 5.0);
    const MaxwellianContext ctx(g);
    for (auto _ : state) {
        LinearizedOperator op = assemble_operator(ctx);
        benchmark::DoNotOptimize(op.K().data());
    }
    state.counters["nodes"] = double(g.size());
}
BENCHMARK(BM_AssembleOperator)->Arg(6)->Arg(8)->Arg(10)->Unit(benchmark::kMillisecond);

static void BM_Sweep(benchmark::State& state) {
    const VelocityGrid g = build_grid(10, 5.0);
    const SlabGrid slab = make_slab(8.0, int(state.range(0)));
    const Sweeper sw(g, slab, NodeValues::Constant(Eigen::Index(g.size()), 10.0));
    const Eigen::MatrixXd src = Eigen::MatrixXd::Random(Eigen::Index(g.size()), slab.n_x);
    const NodeValues in = NodeValues::Ones(Eigen::Index(g.size()));
    for (auto _ : state) {
        SlabField f = sw.sweep(src, in);
        benchmark::DoNotOptimize(f.edges.data());
    }
    state.SetItemsProcessed(state.iterations() * int64_t(g.size()) * slab.n_x);
}
BENCHMARK(BM_Sweep)->Arg(80)->Arg(160)->Arg(320)->Unit(benchmark::kMicrosecond);

static void BM_LinearSlabSolve(benchmark::State& state) {
    const VelocityGrid g = build_grid(8, 5.0);
    const MaxwellianContext ctx(g);
    const LinearizedOperator op = assemble_operator(ctx);
    const SlabGrid slab = make_slab(8.0, int(state.range(0)));
    LinearSlabProblem p;
    p.g = decaying_source(generic_source_profile(ctx), slab, 0.5);
    p.r = generic_wall_data(ctx);
    for (auto _ : state) {
        LinearSolveResult r = solve_linear_slab(p, slab, op);
        benchmark::DoNotOptimize(r.field.edges.data());
    }
}
BENCHMARK(BM_LinearSlabSolve)->Arg(80)->Arg(160)->Unit(benchmark::kMillisecond);

static void BM_Gamma(benchmark::State& state) {
    const VelocityGrid g = build_grid(int(state.range(0)), 5.0);
    const MaxwellianContext ctx(g);
    const CollisionQuadrature q(ctx, {});
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    NodeValues f(Eigen::Index(g.size()));
    for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = u(rng) * ctx.sqrt_mu()[i];
    for (auto _ : state) {
        NodeValues r = q.gamma(f, f);
        benchmark::DoNotOptimize(r.data());
    }
    state.counters["nodes"] = double(g.size());
}
BENCHMARK(BM_Gamma)->Arg(6)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
