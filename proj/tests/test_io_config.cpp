#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "homlab/config.hpp"
#include "homlab/env.hpp"
#include "homlab/errors.hpp"
#include "homlab/io.hpp"
#include "homlab/model.hpp"
#include "homlab/solve.hpp"
#include "toml_lite.hpp"  // white-box: the config front end

using namespace homlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("homlab_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
}

cell::EffectiveLagrangianTable sample_table() {
    cell::EffectiveLagrangianTable t;
    t.dim = 1;
    t.lattice.t = {0.0, 0.5, 3};
    t.lattice.x = {LatticeAxis{-1.0, 1.0, 3}};
    t.lattice.u = {LatticeAxis{-1.0, 0.5, 5}};
    t.model_hash = "abc123";
    t.seed = 42;
    t.b_schedule = {12.5, 25, 50, 100};
    t.values.assign(t.size(), 0.0);
    t.errors.assign(t.size(), 0.0);
    t.feasible.assign(t.size(), 1);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.values[i] = 0.1 * static_cast<double>(i) + 1.0 / 3.0;
        t.errors[i] = 1e-3 / (1.0 + static_cast<double>(i));
    }
    t.feasible[4] = 0;
    return t;
}

}  // namespace

TEST_CASE("format_double round-trips exactly") {
    for (double v : {1.0 / 3.0, 0.1, -2.5e-17, 1e300, 123456.789, 0.0}) {
        const std::string s = io::format_double(v);
        CHECK(std::stod(s) == v);
    }
}

TEST_CASE("effective-Lagrangian table round-trips bit-exactly") {
    TempDir tmp;
    const auto t = sample_table();
    io::save_table(t, tmp.file("t.csv"));
    const auto u = io::load_table(tmp.file("t.csv"));
    CHECK(u.dim == t.dim);
    CHECK(u.model_hash == t.model_hash);
    CHECK(u.seed == t.seed);
    CHECK(u.b_schedule == t.b_schedule);
    CHECK(u.lattice.t.n == t.lattice.t.n);
    REQUIRE(u.values.size() == t.values.size());
    for (std::size_t i = 0; i < t.values.size(); ++i) {
        CHECK(u.values[i] == t.values[i]);
        CHECK(u.errors[i] == t.errors[i]);
        CHECK(u.feasible[i] == t.feasible[i]);
    }
    // resaving produces identical bytes
    io::save_table(u, tmp.file("t2.csv"));
    CHECK(io::file_hash_hex(tmp.file("t.csv")) == io::file_hash_hex(tmp.file("t2.csv")));
}

TEST_CASE("value fields round-trip through CSV") {
    TempDir tmp;
    env::EnvironmentSpec es;
    es.kind = env::FieldKind::periodic;
    es.dimension = 1;
    es.v_min = 0.0;
    es.v_max = 0.0;
    auto omega = env::create_environment(es, 7);
    model::BuiltinModelParams p;
    p.dim = 1;
    p.terminal = model::TerminalKind::abs_clip;
    auto m = model::make_model(p, omega);
    solve::GridSpec g;
    g.t_start = 0.0;
    g.t_end = 0.5;
    g.dt = 0.125;
    g.dx = 0.25;
    g.space_box.lo = Vec(-1.0);
    g.space_box.hi = Vec(1.0);
    g.control_radius = 2.0;
    auto v = solve::solve_fine(m, omega, 1.0, g);
    io::save_value_field(v, tmp.file("v.csv"));
    const auto w = io::load_value_field(tmp.file("v.csv"));
    REQUIRE(w.values.size() == v.values.size());
    for (std::size_t s = 0; s < v.values.size(); ++s)
        for (std::size_t j = 0; j < v.values[s].size(); ++j) {
            CHECK(w.values[s][j] == v.values[s][j]);
            CHECK(w.policy[s][j][0] == v.policy[s][j][0]);
        }
    CHECK(w.eps == v.eps);
    CHECK(static_cast<int>(w.kind) == static_cast<int>(v.kind));
}

TEST_CASE("step controls round-trip") {
    TempDir tmp;
    solve::StepControl u;
    u.breakpoints = {0.0, 0.25, 1.0};
    u.values = {Vec(0.5), Vec(-1.0 / 3.0)};
    io::save_control(u, 1, tmp.file("u.csv"));
    auto [w, dim] = io::load_control(tmp.file("u.csv"));
    CHECK(dim == 1);
    REQUIRE(w.values.size() == 2);
    CHECK(w.breakpoints == u.breakpoints);
    CHECK(w.values[1][0] == u.values[1][0]);
}

TEST_CASE("toml subset: sections, arrays, comments, diagnostics") {
    const std::string text = R"(# top comment
name = "demo"   # trailing comment
[grids]
dt = 0.5
space_lo = [-1.0]
space_hi = [1.0]
flag = true
[grids.cell]
micro_dt = 0.125
[sweep]
eps = [0.5, 0.25]
)";
    const auto j = io::parse_toml_lite(text);
    CHECK(j.at("name") == "demo");
    CHECK(j.at("grids").at("dt") == 0.5);
    CHECK(j.at("grids").at("flag") == true);
    CHECK(j.at("grids").at("cell").at("micro_dt") == 0.125);
    CHECK(j.at("sweep").at("eps")[1] == 0.25);

    CHECK_THROWS_AS(io::parse_toml_lite("x ="), ConfigError);
    try {
        io::parse_toml_lite("ok = 1\nbad line\n");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("config loads from TOML and the JSON equivalent") {
    TempDir tmp;
    const std::string toml = R"(name = "tiny"
seeds = [3]
output_dir = "out/tiny"
workers = 2
[model]
dynamics = "calculus_of_variations"
running_cost = "quadratic"
[environment]
kind = "periodic"
dimension = 1
cell_size = 1.0
amplitude = [0.0, 2.0]
[grids]
t_start = 0.0
t_end = 0.5
dt = 0.025
dx = 0.05
space_lo = [-1.0]
space_hi = [1.0]
control_radius = 2.0
[grids.table]
t_nodes = 2
x_nodes = [3]
u_radius = 1.0
u_step = 0.5
[sweep]
eps = [0.5, 0.25]
b_schedule = [10, 20, 40, 80]
)";
    write_text(tmp.file("c.toml"), toml);
    const auto cfg = cli::load_config(tmp.file("c.toml"));
    CHECK(cfg.name == "tiny");
    CHECK(cfg.workers == 2);
    CHECK(cfg.eps_list.size() == 2);
    CHECK(cfg.table_lattice().u[0].n == 5);

    const std::string jsn = R"({
      "name": "tiny",
      "model": {"dynamics": "calculus_of_variations", "running_cost": "quadratic"},
      "environment": {"kind": "periodic", "dimension": 1, "cell_size": 1.0,
                       "amplitude": [0.0, 2.0]},
      "grids": {"t_start": 0.0, "t_end": 0.5, "dt": 0.025, "dx": 0.05,
                "space_lo": [-1.0], "space_hi": [1.0], "control_radius": 2.0,
                "table": {"t_nodes": 2, "x_nodes": [3], "u_radius": 1.0, "u_step": 0.5}},
      "sweep": {"eps": [0.5, 0.25], "b_schedule": [10, 20, 40, 80]},
      "seeds": [3],
      "output_dir": "out/tiny",
      "workers": 2
    })";
    write_text(tmp.file("c.json"), jsn);
    const auto cfg2 = cli::load_config(tmp.file("c.json"));
    CHECK(cfg2.name == cfg.name);
    CHECK(cfg2.base_grid.dx == cfg.base_grid.dx);
}

TEST_CASE("config validation names the offending field") {
    TempDir tmp;
    const std::string bad = R"(name = "bad"
seeds = [1]
[environment]
kind = "periodic"
dimension = 1
amplitude = [0.0, 1.0]
[grids]
t_end = 1.0
dt = 0.05
dx = 0.1
space_lo = [-1.0]
space_hi = [1.0]
[sweep]
eps = [-0.25]
b_schedule = [10, 20, 40, 80]
)";
    write_text(tmp.file("bad.toml"), bad);
    try {
        cli::load_config(tmp.file("bad.toml"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("sweep.eps") != std::string::npos);
    }

    const std::string unknown = R"(name = "bad2"
seeds = [1]
[grids]
t_end = 1.0
dt = 0.05
dx = 0.1
space_lo = [-1.0]
space_hi = [1.0]
typo_key = 1.0
[sweep]
eps = [0.25]
b_schedule = [10, 20, 40, 80]
)";
    write_text(tmp.file("bad2.toml"), unknown);
    try {
        cli::load_config(tmp.file("bad2.toml"));
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("typo_key") != std::string::npos);
    }
}

TEST_CASE("shipped reference configs parse and validate") {
    for (const char* name : {"trivial.toml", "periodic1d.toml", "shotnoise1d.toml"}) {
        const auto cfg =
            cli::load_config(std::string(HOMOGENIZE_CONFIG_DIR) + "/" + name);
        CHECK(!cfg.eps_list.empty());
        (void)cfg.model(cfg.seeds.front());  // grid/model invariants hold
    }
}

TEST_CASE("user dynamics CSV loads onto a lattice and rejects ragged data") {
    TempDir tmp;
    {
        std::ofstream f(tmp.file("dyn.csv"));
        f << "x,u,f\n";
        for (int i = 0; i <= 2; ++i)
            for (int j = 0; j <= 4; ++j)
                f << -1.0 + i << "," << -1.0 + 0.5 * j << "," << (-1.0 + 0.5 * j) << "\n";
    }
    const auto t = io::load_user_dynamics_csv(tmp.file("dyn.csv"), 1);
    CHECK(t.x_axes[0].n == 3);
    CHECK(t.u_axes[0].n == 5);
    CHECK(t.eval(Vec(0.0), Vec(0.25))[0] == doctest::Approx(0.25));

    {
        std::ofstream f(tmp.file("ragged.csv"));
        f << "x,u,f\n0,0,0\n0,0.5,0.5\n0,1.7,1.7\n";
    }
    CHECK_THROWS_AS(io::load_user_dynamics_csv(tmp.file("ragged.csv"), 1), ConfigError);
}

TEST_CASE("manifest lists outputs with content hashes") {
    TempDir tmp;
    write_text(tmp.file("a.csv"), "t,x\n1,2\n");
    io::write_manifest(tmp.path.string(), {},
                       {{"a.csv", io::file_hash_hex(tmp.file("a.csv"))}},
                       {{"experiment", "demo"}});
    std::ifstream f(tmp.file("manifest.json"));
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(all.find("a.csv") != std::string::npos);
    CHECK(all.find("fnv64") != std::string::npos);
}

TEST_CASE("missing artifacts raise the dedicated error") {
    CHECK_THROWS_AS(io::load_table("/nonexistent/table.csv"), MissingArtifactError);
    CHECK_THROWS_AS(cli::load_config("/nonexistent/c.toml"), MissingArtifactError);
}

TEST_CASE("user-table dynamics load through the config front end") {
    TempDir tmp;
    {
        std::ofstream f(tmp.file("dyn.csv"));
        f << "x,u,f\n";
        for (int i = 0; i <= 2; ++i)
            for (int j = 0; j <= 16; ++j) {
                const double u = -2.0 + 0.25 * j;
                f << -2.0 + 2.0 * i << "," << u << "," << 0.5 * u << "\n";
            }
    }
    std::string text = R"(name = "usr"
seeds = [3]
[model]
dynamics = "user_table"
)";
    text += "table_path = \"" + tmp.file("dyn.csv") + "\"\n";
    text += R"(delta = 0.25
control_bound = 1.0
eta = 0.4
f_star_slope = 0.5
running_cost = "quadratic"
[environment]
kind = "periodic"
dimension = 1
cell_size = 1.0
amplitude = [0.0, 1.0]
[grids]
t_start = 0.0
t_end = 0.5
dt = 0.025
dx = 0.05
space_lo = [-1.0]
space_hi = [1.0]
control_radius = 2.0
[grids.table]
t_nodes = 2
x_nodes = [3]
u_radius = 1.0
u_step = 0.5
[sweep]
eps = [0.5]
b_schedule = [10, 20, 40, 80]
)";
    write_text(tmp.file("usr.toml"), text);
    const auto cfg = cli::load_config(tmp.file("usr.toml"));
    const auto m = cfg.model(3);
    CHECK(m.dynamics.kind == model::DynamicsKind::user_table);
    // the sampled field is f = u/2
    CHECK(model::eval_f(m.dynamics, Vec(0.0), Vec(1.0))[0] == doctest::Approx(0.5));
    const Vec back = model::invert_dynamics(m.dynamics, Vec(0.0), Vec(1.0), Vec(0.6));
    CHECK(model::eval_f(m.dynamics, Vec(0.0), back)[0] == doctest::Approx(0.6).epsilon(1e-9));
    // sampled dynamics carry no declared theta; the report must say so
    model::SamplePlan plan;
    plan.x_box = cfg.base_grid.space_box;
    plan.u_radius = 1.0;
    plan.n_pairs = 40;
    const auto rep = model::check_assumptions(m, plan);
    CHECK_FALSE(rep.entries[6].pass);
}
