#include <benchmark/benchmark.h>

#include "homlab/cell.hpp"
#include "homlab/env.hpp"
#include "homlab/model.hpp"
#include "homlab/solve.hpp"
#include "homlab/xform.hpp"

using namespace homlab;

namespace {

env::EnvironmentHandle periodic_env() {
    env::EnvironmentSpec s;
    s.kind = env::FieldKind::periodic;
    s.dimension = 1;
    s.cell_size = 1.0;
    s.v_min = 0.0;
    s.v_max = 2.0;
    return env::create_environment(s, 7);
}

env::EnvironmentHandle shot_env() {
    env::EnvironmentSpec s;
    s.kind = env::FieldKind::shot_noise;
    s.dimension = 1;
    s.cell_size = 0.5;
    s.v_min = 0.4;
    s.v_max = 1.0;
    s.intensity = 0.8;
    return env::create_environment(s, 11);
}

model::ModelSpec quad_model(env::EnvironmentHandle omega) {
    model::BuiltinModelParams p;
    p.dim = 1;
    p.terminal = model::TerminalKind::abs_clip;
    return model::make_model(p, omega);
}

}  // namespace

static void BM_EvaluatePotentialShotNoise(benchmark::State& state) {
    auto omega = shot_env();
    double y = 0.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(env::evaluate_potential(omega, Vec(y)));
        y += 0.0137;
    }
}
BENCHMARK(BM_EvaluatePotentialShotNoise);

static void BM_CellPointToPoint(benchmark::State& state) {
    auto omega = periodic_env();
    auto m = quad_model(omega);
    cell::CellProblemSpec spec;
    spec.x0 = Vec(0.0);
    spec.u_tilde = Vec(1.0);
    spec.horizon_b = static_cast<double>(state.range(0));
    spec.micro_dt = 0.1;
    spec.micro_lattice = 0.025;
    spec.control_radius = 4.0;
    spec.tube_radius = 4.0;
    spec.estimate_tolerance = false;
    for (auto _ : state)
        benchmark::DoNotOptimize(cell::point_to_point_cost(m, omega, spec).value);
}
BENCHMARK(BM_CellPointToPoint)->Arg(25)->Arg(50)->Arg(100);

static void BM_SolveFine(benchmark::State& state) {
    auto omega = periodic_env();
    auto m = quad_model(omega);
    solve::GridSpec g;
    g.t_start = 0.0;
    g.t_end = 1.0;
    g.dx = 1.0 / static_cast<double>(state.range(0));
    g.dt = g.dx / 2.0;  // foot bound for f^*(K) = 2
    g.space_box.lo = Vec(-1.0);
    g.space_box.hi = Vec(1.0);
    g.control_radius = 2.0;
    g.control_grid_n = 17;
    for (auto _ : state)
        benchmark::DoNotOptimize(solve::solve_fine(m, omega, 0.25, g).values[0][0]);
}
BENCHMARK(BM_SolveFine)->Arg(64)->Arg(128);

static void BM_Hamiltonian(benchmark::State& state) {
    auto omega = periodic_env();
    auto m = quad_model(omega);
    const Vec y(0.3);
    double p = -2.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(xform::hamiltonian(m, 0.0, Vec(0.0), &y, Vec(p)));
        p = p < 2.0 ? p + 0.01 : -2.0;
    }
}
BENCHMARK(BM_Hamiltonian);

BENCHMARK_MAIN();
