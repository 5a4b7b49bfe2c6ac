#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "homlab/cell.hpp"
#include "homlab/env.hpp"
#include "homlab/errors.hpp"
#include "homlab/model.hpp"
#include "homlab/xform.hpp"
#include "oracles.hpp"

using namespace homlab;
using namespace homlab::xform;

namespace {

env::EnvironmentHandle flat_env(double level = 0.0) {
    env::EnvironmentSpec s;
    s.kind = env::FieldKind::periodic;
    s.dimension = 1;
    s.cell_size = 1.0;
    s.v_min = level;
    s.v_max = level;
    return env::create_environment(s, 7);
}

env::EnvironmentHandle periodic_env() {
    env::EnvironmentSpec s;
    s.kind = env::FieldKind::periodic;
    s.dimension = 1;
    s.cell_size = 1.0;
    s.v_min = 0.0;
    s.v_max = 2.0;
    return env::create_environment(s, 7);
}

model::ModelSpec quad_model(env::EnvironmentHandle omega,
                            model::TerminalKind psi = model::TerminalKind::zero) {
    model::BuiltinModelParams p;
    p.dim = omega.spec.dimension;
    p.terminal = psi;
    p.terminal_cap = 2.0;
    return model::make_model(p, omega);
}

// quadratic table L(u) = u^2 / 2 over a control lattice
cell::EffectiveLagrangianTable quad_table(double radius = 4.0, double step = 0.25) {
    cell::TableLattice lat;
    lat.t = {0.0, 1.0, 2};
    lat.x = {LatticeAxis{-2.0, 2.0, 3}};
    const int half = static_cast<int>(std::llround(radius / step));
    lat.u = {LatticeAxis{-half * step, step, 2 * half + 1}};
    cell::EffectiveLagrangianTable tab;
    tab.dim = 1;
    tab.lattice = lat;
    tab.values.assign(tab.size(), 0.0);
    for (int it = 0; it < lat.t.n; ++it)
        for (int ix = 0; ix < lat.x[0].n; ++ix)
            for (int iu = 0; iu < lat.u[0].n; ++iu) {
                const double u = lat.u[0].at(iu);
                tab.values[tab.index(it, IVec(ix), IVec(iu))] = 0.5 * u * u;
            }
    tab.errors.assign(tab.size(), 0.0);
    tab.feasible.assign(tab.size(), 1);
    return tab;
}

}  // namespace

TEST_CASE("pointwise Hamiltonian of the quadratic model is p^2/2") {
    auto omega = flat_env();
    auto m = quad_model(omega);
    for (double p : {-1.0, 0.0, 1.0}) {
        const double h = hamiltonian(m, 0.0, Vec(0.0), nullptr, Vec(p));
        CHECK(std::abs(h - 0.5 * p * p) <= 1e-4);
    }
}

TEST_CASE("constant Lagrangian: H(0) = -c") {
    auto omega = flat_env(0.8);
    auto m = quad_model(omega);
    m.lagrangian.running_cost = [](const Vec&) { return 0.0; };
    m.lagrangian.l_star = [](const Vec&) { return 0.8; };
    HamOptions opt;
    opt.radius = 2.0;
    const double h = hamiltonian(m, 0.0, Vec(0.0), nullptr, Vec(0.0), opt);
    CHECK(std::abs(h + 0.8) <= 1e-10);
}

TEST_CASE("bounded-speed Hamiltonian matches a dense scan oracle") {
    env::EnvironmentSpec s;
    s.kind = env::FieldKind::periodic;
    s.dimension = 1;
    s.cell_size = 1.0;
    s.v_min = 0.0;
    s.v_max = 0.0;
    auto omega = env::create_environment(s, 7);
    model::BuiltinModelParams p;
    p.dim = 1;
    p.dynamics = model::DynamicsKind::bounded_speed;
    p.speed_bound = 2.0;
    auto m = model::make_model(p, omega);

    const Vec pv(1.0);
    const double h = hamiltonian(m, 0.0, Vec(0.0), nullptr, pv);

    double brute = -1e300;
    for (int i = 0; i <= 1000000; ++i) {
        const double u = -20.0 + 40.0 * i / 1000000.0;
        const double f = 2.0 * u / std::sqrt(u * u + 1.0);
        brute = std::max(brute, -f * 1.0 - 0.5 * u * u);
    }
    CHECK(std::abs(h - brute) <= 1e-6);
}

TEST_CASE("Hamiltonian argmax off the boundary after the automatic retry") {
    auto omega = flat_env();
    auto m = quad_model(omega);
    HamOptions opt;
    opt.radius = 1.5;  // too small for p = 2; one doubling must fix it
    const double h = hamiltonian(m, 0.0, Vec(0.0), nullptr, Vec(2.0), opt);
    CHECK(std::abs(h - 2.0) <= 1e-3);
}

TEST_CASE("effective Hamiltonian of the quadratic table is p^2/2") {
    auto omega = flat_env();
    auto m = quad_model(omega);
    const auto tab = quad_table(4.0, 0.0625);
    for (double p : {-1.0, -0.3, 0.0, 0.7, 1.5}) {
        const double h = effective_hamiltonian(m, tab, 0.5, Vec(0.0), Vec(p));
        CHECK(std::abs(h - 0.5 * p * p) <= 1e-3);
    }
    // sup dominates any single candidate, e.g. the zero control
    CHECK(effective_hamiltonian(m, tab, 0.5, Vec(0.0), Vec(0.0)) >=
          -tab.interpolate(0.5, Vec(0.0), Vec(0.0)) - 1e-12);
}

TEST_CASE("effective Hamiltonian rejects a sup on the control boundary") {
    auto omega = flat_env();
    auto m = quad_model(omega);
    const auto tab = quad_table(1.0, 0.25);  // tiny control range
    CHECK_THROWS_AS(effective_hamiltonian(m, tab, 0.5, Vec(0.0), Vec(3.0)), NumericalError);
}

TEST_CASE("periodic medium: table Hamiltonian matches the quadrature oracle") {
    auto omega = periodic_env();
    auto m = quad_model(omega);
    cell::TableLattice lat;
    lat.t = {0.0, 1.0, 2};
    lat.x = {LatticeAxis{0.0, 1.0, 1}};
    lat.u = {LatticeAxis{-3.0, 0.25, 25}};
    cell::CellNumerics numerics;
    numerics.micro_dt = 0.05;
    numerics.micro_lattice = 0.0125;
    numerics.control_radius = 4.0;
    numerics.tube_radius = 4.0;
    numerics.richardson_fraction = 0.0;
    const auto tab =
        cell::build_table(m, omega, lat, {12.5, 25, 50, 100, 200}, numerics, 1);

    oracles::PeriodicHamiltonianOracle oracle(
        [](double y) { return 1.0 - std::cos(2.0 * M_PI * y); });
    for (double p : {0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0}) {
        const double h = effective_hamiltonian(m, tab, 0.0, Vec(0.0), Vec(p));
        const double ho = oracle(p);
        CHECK(std::abs(h - ho) <= 5e-2 * std::max(1.0, std::abs(ho)));
    }
}

TEST_CASE("biconjugate of a convex table returns the table") {
    auto omega = flat_env();
    auto m = quad_model(omega);
    const auto tab = quad_table();
    // H from the table on a p-grid, then conjugate back at the table nodes
    std::vector<double> ps, hs;
    for (double p = -2.5; p <= 2.5 + 1e-9; p += 0.05) {
        ps.push_back(p);
        hs.push_back(effective_hamiltonian(m, tab, 0.5, Vec(0.0), Vec(p)));
    }
    for (double u = -1.5; u <= 1.5 + 1e-9; u += 0.25) {
        double back = -1e300;
        for (std::size_t i = 0; i < ps.size(); ++i)
            back = std::max(back, -u * ps[i] - hs[i]);
        CHECK(std::abs(back - 0.5 * u * u) <= 0.02);
    }
}

TEST_CASE("discrete convexity of the effective Hamiltonian in p") {
    auto omega = periodic_env();
    auto m = quad_model(omega);
    const auto tab = quad_table();
    std::vector<double> hs;
    for (double p = -2.0; p <= 2.0 + 1e-9; p += 0.125)
        hs.push_back(effective_hamiltonian(m, tab, 0.5, Vec(0.0), Vec(p)));
    for (std::size_t i = 1; i + 1 < hs.size(); ++i)
        CHECK(hs[i - 1] + hs[i + 1] - 2.0 * hs[i] >= -1e-9);
}

TEST_CASE("hamiltonian table export lattice") {
    auto omega = flat_env();
    auto m = quad_model(omega);
    const auto tab = quad_table();
    std::vector<LatticeAxis> p_axes{LatticeAxis{-1.0, 0.5, 5}};
    const auto ht = build_hamiltonian_table(m, tab, tab.lattice.t, tab.lattice.x, p_axes,
                                            {}, 2);
    REQUIRE(ht.values.size() == ht.size());
    const double mid = ht.values[ht.index(0, IVec(1), IVec(2))];  // p = 0
    CHECK(std::abs(mid) <= 1e-3);
}

TEST_CASE("HJB: zero Hamiltonian preserves the terminal data") {
    auto omega = flat_env();
    auto m = quad_model(omega, model::TerminalKind::abs_clip);
    solve::GridSpec g;
    g.t_start = 0.0;
    g.t_end = 1.0;
    g.dt = 0.01;
    g.dx = 0.05;
    g.space_box.lo = Vec(-1.0);
    g.space_box.hi = Vec(1.0);
    g.control_radius = 1.0;
    auto v = solve_hjb(m, [](double, const Vec&, const Vec&) { return 0.0; }, g);
    for (std::size_t s = 0; s < v.values.size(); ++s)
        for (std::size_t j = 0; j < v.values[s].size(); ++j)
            CHECK(std::abs(v.values[s][j] - m.lagrangian.terminal_cost(g.node(j, 1))) <=
                  1e-12);
}

TEST_CASE("HJB: quadratic Hamiltonian against the Hopf-Lax oracle") {
    auto omega = flat_env();
    auto m = quad_model(omega, model::TerminalKind::abs_clip);
    solve::GridSpec g;
    g.t_start = 0.0;
    g.t_end = 1.0;
    g.dt = 0.002;
    g.dx = 0.005;
    g.space_box.lo = Vec(-2.0);
    g.space_box.hi = Vec(2.0);
    g.control_radius = 2.0;
    xform::HjbOptions opt;
    opt.p_max = 1.0;  // the data is 1-Lipschitz and H is x-independent
    auto v = solve_hjb(m, [](double, const Vec&, const Vec& p) { return 0.5 * p[0] * p[0]; }, g,
                       opt);

    auto psi = [&](double x) { return m.lagrangian.terminal_cost(Vec(x)); };
    for (double t : {0.0, 0.5}) {
        for (double x : {-0.8, -0.3, 0.0, 0.4, 0.9}) {
            const double want = oracles::hopf_lax_quadratic(psi, t, 1.0, x, -3.0, 3.0, 6000);
            CHECK(std::abs(v.sample(t, Vec(x)) - want) <= 0.02);
        }
    }
}

TEST_CASE("HJB scheme is monotone in the terminal data") {
    auto omega = flat_env();
    auto m1 = quad_model(omega, model::TerminalKind::abs_clip);
    auto m2 = m1;
    m2.lagrangian.terminal_cost = [&](const Vec& x) {
        return std::min(x.norm(), 2.0) + 0.2;
    };
    solve::GridSpec g;
    g.t_start = 0.0;
    g.t_end = 0.5;
    g.dt = 0.005;
    g.dx = 0.05;
    g.space_box.lo = Vec(-1.0);
    g.space_box.hi = Vec(1.0);
    g.control_radius = 1.0;
    auto H = [](double, const Vec&, const Vec& p) { return 0.5 * p[0] * p[0]; };
    auto a = solve_hjb(m1, H, g);
    auto b = solve_hjb(m2, H, g);
    for (std::size_t s = 0; s < a.values.size(); ++s)
        for (std::size_t j = 0; j < a.values[s].size(); ++j)
            CHECK(b.values[s][j] >= a.values[s][j] - 1e-12);
}

TEST_CASE("HJB refuses a CFL-violating grid and suggests a step") {
    auto omega = flat_env();
    auto m = quad_model(omega, model::TerminalKind::abs_clip);
    solve::GridSpec g;
    g.t_start = 0.0;
    g.t_end = 1.0;
    g.dt = 0.2;
    g.dx = 0.02;
    g.space_box.lo = Vec(-1.0);
    g.space_box.hi = Vec(1.0);
    g.control_radius = 1.0;
    CHECK_THROWS_AS(
        solve_hjb(m, [](double, const Vec&, const Vec& p) { return 0.5 * p[0] * p[0]; }, g),
        NumericalError);
}

TEST_CASE("HJB on the table-driven Hamiltonian tracks the homogenized solver") {
    auto omega = periodic_env();
    auto m = quad_model(omega, model::TerminalKind::abs_clip);
    cell::TableLattice lat;
    lat.t = {0.0, 1.0, 2};
    lat.x = {LatticeAxis{-1.5, 1.5, 3}};
    lat.u = {LatticeAxis{-3.0, 0.25, 25}};
    cell::CellNumerics numerics;
    numerics.micro_dt = 0.1;
    numerics.micro_lattice = 0.025;
    numerics.control_radius = 4.0;
    numerics.tube_radius = 4.0;
    numerics.richardson_fraction = 0.0;
    const auto tab = cell::build_table(m, omega, lat, {12.5, 25, 50, 100}, numerics, 1);

    solve::GridSpec g;
    g.t_start = 0.0;
    g.t_end = 1.0;
    g.dt = 0.003125;
    g.dx = 0.01;
    g.space_box.lo = Vec(-1.5);
    g.space_box.hi = Vec(1.5);
    g.control_radius = 3.0;
    g.control_grid_n = 25;

    auto vhom = solve::solve_homogenized(m, tab, g, 2);
    HamAccessor H = [&](double t, const Vec& x, const Vec& p) {
        return effective_hamiltonian(m, tab, t, x, p);
    };
    solve::GridSpec gh = g;
    gh.dt = 0.002;
    xform::HjbOptions hopt;
    hopt.p_max = 1.1;
    hopt.workers = 2;
    auto vhjb = solve_hjb(m, H, gh, hopt);

    const Box compact = g.space_box.central(0.5);
    double worst = 0.0;
    for (std::size_t s = 0; s < vhjb.values.size(); ++s) {
        const double t = gh.time_at(static_cast<int>(s));
        for (std::size_t j = 0; j < vhjb.values[s].size(); ++j) {
            const Vec x = gh.node(j, 1);
            if (!compact.contains(x)) continue;
            worst = std::max(worst, std::abs(vhjb.values[s][j] - vhom.sample(t, x)));
        }
    }
    CHECK(worst <= 0.05);
}

TEST_CASE("2-d Hamiltonian of the quadratic model is |p|^2/2") {
    env::EnvironmentSpec es;
    es.kind = env::FieldKind::periodic;
    es.dimension = 2;
    es.cell_size = 1.0;
    es.v_min = 0.0;
    es.v_max = 0.0;
    auto omega = env::create_environment(es, 7);
    model::BuiltinModelParams p;
    p.dim = 2;
    auto m = model::make_model(p, omega);
    HamOptions opt;
    opt.grid_n = 65;
    const Vec pv(0.5, -1.0);
    const double h = hamiltonian(m, 0.0, Vec(0.0, 0.0), nullptr, pv, opt);
    CHECK(std::abs(h - 0.5 * pv.norm2()) <= 2e-3);
}

TEST_CASE("Hamiltonian with a fast argument sees the potential") {
    auto omega = periodic_env();
    auto m = quad_model(omega);
    const Vec y0(0.0), yh(0.5);  // V(0) = 0, V(1/2) = 2
    const double h0 = hamiltonian(m, 0.0, Vec(0.0), &y0, Vec(0.0));
    const double hh = hamiltonian(m, 0.0, Vec(0.0), &yh, Vec(0.0));
    CHECK(std::abs(h0 - 0.0) <= 1e-8);
    CHECK(std::abs(hh + 2.0) <= 1e-8);
}
