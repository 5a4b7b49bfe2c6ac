#include "homlab/config.hpp"

#include "homlab/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "homlab/errors.hpp"
#include "toml_lite.hpp"

namespace homlab::cli {

namespace {

using nlohmann::json;

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
    throw ConfigError("config field '" + field + "': " + what);
}

void expect_keys(const json& j, const std::string& where,
                 const std::set<std::string>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            field_error(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
}

std::vector<double> num_list(const json& j, const std::string& field) {
    if (!j.is_array()) field_error(field, "expected an array");
    std::vector<double> v;
    for (const auto& e : j) {
        if (!e.is_number()) field_error(field, "expected numeric entries");
        v.push_back(e.get<double>());
    }
    return v;
}

model::BuiltinModelParams parse_model(const json& j) {
    expect_keys(j, "model",
                {"dynamics", "speed_bound", "running_cost", "beta", "macro", "macro_coeff",
                 "macro_clip", "terminal", "terminal_scale", "terminal_cap", "lambda",
                 "table_path", "delta", "control_bound", "eta", "f_star_slope", "lip_f",
                 "lip_H"});
    model::BuiltinModelParams p;
    const std::string dyn = j.value("dynamics", "calculus_of_variations");
    if (dyn == "calculus_of_variations")
        p.dynamics = model::DynamicsKind::calculus_of_variations;
    else if (dyn == "bounded_speed")
        p.dynamics = model::DynamicsKind::bounded_speed;
    else if (dyn == "user_table")
        p.dynamics = model::DynamicsKind::user_table;
    else
        field_error("model.dynamics", "unknown built-in '" + dyn + "'");
    p.speed_bound = j.value("speed_bound", 2.0);
    const std::string rc = j.value("running_cost", "quadratic");
    if (rc == "quadratic")
        p.cost = model::RunningCostKind::quadratic;
    else if (rc == "power_over_beta")
        p.cost = model::RunningCostKind::power_over_beta;
    else if (rc == "power")
        p.cost = model::RunningCostKind::power;
    else
        field_error("model.running_cost", "unknown built-in '" + rc + "'");
    p.beta = j.value("beta", 2.0);
    const std::string mac = j.value("macro", "zero");
    if (mac == "zero")
        p.macro = model::MacroKind::zero;
    else if (mac == "txslope")
        p.macro = model::MacroKind::txslope;
    else
        field_error("model.macro", "unknown built-in '" + mac + "'");
    p.macro_coeff = j.value("macro_coeff", 0.1);
    p.macro_clip = j.value("macro_clip", 2.0);
    const std::string ter = j.value("terminal", "zero");
    if (ter == "zero")
        p.terminal = model::TerminalKind::zero;
    else if (ter == "abs_clip")
        p.terminal = model::TerminalKind::abs_clip;
    else
        field_error("model.terminal", "unknown built-in '" + ter + "'");
    p.terminal_scale = j.value("terminal_scale", 1.0);
    p.terminal_cap = j.value("terminal_cap", 2.0);
    p.lambda = j.value("lambda", 1.0);
    return p;
}

env::EnvironmentSpec parse_env(const json& j) {
    expect_keys(j, "environment",
                {"kind", "dimension", "cell_size", "amplitude", "intensity", "profile",
                 "blend_margin"});
    env::EnvironmentSpec s;
    const std::string kind = j.value("kind", "periodic");
    if (kind == "periodic")
        s.kind = env::FieldKind::periodic;
    else if (kind == "checkerboard")
        s.kind = env::FieldKind::checkerboard;
    else if (kind == "shot_noise")
        s.kind = env::FieldKind::shot_noise;
    else
        field_error("environment.kind", "unknown kind '" + kind + "'");
    s.dimension = j.value("dimension", 1);
    s.cell_size = j.value("cell_size", 1.0);
    if (j.contains("amplitude")) {
        const auto amp = num_list(j.at("amplitude"), "environment.amplitude");
        if (amp.size() != 2) field_error("environment.amplitude", "expected [lo, hi]");
        s.v_min = amp[0];
        s.v_max = amp[1];
    }
    s.intensity = j.value("intensity", 1.0);
    const std::string prof = j.value("profile", "cosine");
    if (prof == "cosine")
        s.profile = env::BumpProfile::cosine;
    else if (prof == "bump")
        s.profile = env::BumpProfile::bump;
    else
        field_error("environment.profile", "unknown profile '" + prof + "'");
    s.blend_margin = j.value("blend_margin", 0.1);
    return s;
}

}  // namespace

void ExperimentConfig::validate() const {
    env_spec.validate();
    if (model_params.dim != env_spec.dimension)
        field_error("environment.dimension", "must match the model dimension");
    if (eps_list.empty()) field_error("sweep.eps", "must not be empty");
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        if (!(eps_list[i] > 0.0)) field_error("sweep.eps", "entries must be positive");
        if (i > 0 && !(eps_list[i] < eps_list[i - 1]))
            field_error("sweep.eps", "must be strictly decreasing");
    }
    for (double t : tau_list)
        if (!(t > 0.0)) field_error("sweep.tau", "entries must be positive");
    if (b_schedule.size() < 4) field_error("sweep.b_schedule", "needs at least 4 horizons");
    for (std::size_t i = 1; i < b_schedule.size(); ++i)
        if (!(b_schedule[i] > b_schedule[i - 1]))
            field_error("sweep.b_schedule", "must be strictly increasing");
    if (seeds.empty()) field_error("seeds", "must not be empty");
    if (workers < 1) field_error("workers", "must be >= 1");
    if (table_t_nodes < 1) field_error("grids.table.t_nodes", "must be >= 1");
    if (static_cast<int>(table_x_nodes.size()) != model_params.dim)
        field_error("grids.table.x_nodes", "needs one entry per dimension");
    for (int n : table_x_nodes)
        if (n < 1) field_error("grids.table.x_nodes", "entries must be >= 1");
    if (!(table_u_radius > 0.0)) field_error("grids.table.u_radius", "must be positive");
    if (!(table_u_step > 0.0)) field_error("grids.table.u_step", "must be positive");
    if (table_u_explicit && !(table_u_max > table_u_min))
        field_error("grids.table.u_min/u_max", "need u_max > u_min");
    if (table_u_radius > cell_numerics.control_radius)
        field_error("grids.table.u_radius", "exceeds the cell control radius");
    // The solve-grid invariants depend on the model; checked in model().
}

env::EnvironmentHandle ExperimentConfig::environment(std::uint64_t seed) const {
    return env::create_environment(env_spec, seed);
}

model::ModelSpec ExperimentConfig::model(std::uint64_t seed) const {
    model::BuiltinModelParams p = model_params;
    p.t_horizon = base_grid.t_end;
    if (!dynamics_table_path.empty()) {
        // assemble the Lagrangian around f = u, then swap in the sampled
        // dynamics with the user-declared inversion constants
        p.dynamics = model::DynamicsKind::calculus_of_variations;
        model::ModelSpec m = model::make_model(p, environment(seed));
        m.name = name;
        auto table = std::make_shared<model::UserDynamicsTable>(
            io::load_user_dynamics_csv(dynamics_table_path, p.dim));
        m.dynamics.kind = model::DynamicsKind::user_table;
        m.dynamics.table = table;
        m.dynamics.delta = user_delta;
        m.dynamics.control_bound_M = user_control_bound;
        m.dynamics.eta = [e = user_eta](double) { return e; };
        m.dynamics.f_star = [s = user_f_star_slope](double R) { return s * R; };
        m.dynamics.lip_f = [l = user_lip_f](double) { return l; };
        m.dynamics.lip_H = [l = user_lip_H](double) { return l; };
        m.lagrangian.theta = nullptr;  // sampled dynamics carry no declared theta
        base_grid.validate(m);
        return m;
    }
    model::ModelSpec m = model::make_model(p, environment(seed));
    m.name = name;
    base_grid.validate(m);
    return m;
}

cell::TableLattice ExperimentConfig::table_lattice() const {
    cell::TableLattice lat;
    lat.t.lo = base_grid.t_start;
    lat.t.n = table_t_nodes;
    lat.t.step = table_t_nodes > 1
                     ? (base_grid.t_end - base_grid.t_start) / (table_t_nodes - 1)
                     : 1.0;
    for (int a = 0; a < model_params.dim; ++a) {
        LatticeAxis ax;
        ax.n = table_x_nodes[static_cast<size_t>(a)];
        ax.lo = base_grid.space_box.lo[a];
        ax.step = ax.n > 1
                      ? (base_grid.space_box.hi[a] - base_grid.space_box.lo[a]) / (ax.n - 1)
                      : 1.0;
        lat.x.push_back(ax);
    }
    for (int a = 0; a < model_params.dim; ++a) {
        LatticeAxis ax;
        if (table_u_explicit) {
            ax.lo = table_u_min;
            ax.step = table_u_step;
            ax.n = static_cast<int>(std::llround((table_u_max - table_u_min) / table_u_step)) + 1;
        } else {
            const int half = static_cast<int>(std::llround(table_u_radius / table_u_step));
            ax.n = 2 * half + 1;
            ax.lo = -half * table_u_step;
            ax.step = table_u_step;
        }
        lat.u.push_back(ax);
    }
    return lat;
}

solve::GridSpec ExperimentConfig::fine_grid(double eps, const model::ModelSpec& m) const {
    solve::GridSpec g = base_grid;
    // refine dx to resolve the fast scale, then dt to keep feet local
    while (g.dx > eps / 4.0 * (1.0 + 1e-12)) g.dx *= 0.5;
    const double fmax = m.dynamics.f_star(g.control_radius);
    while (g.dt > g.dx / fmax * (1.0 + 1e-12)) g.dt *= 0.5;
    return g;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("config not found: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string text = ss.str();

    json j;
    const bool looks_json = text.find_first_not_of(" \t\r\n") != std::string::npos &&
                            text[text.find_first_not_of(" \t\r\n")] == '{';
    if (looks_json || path.ends_with(".json")) {
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config JSON parse error: ") + e.what());
        }
    } else {
        j = io::parse_toml_lite(text);
    }

    expect_keys(j, "",
                {"name", "model", "environment", "grids", "sweep", "seeds", "output_dir",
                 "workers"});
    ExperimentConfig c;
    c.name = j.value("name", "experiment");
    if (j.contains("model")) {
        c.model_params = parse_model(j.at("model"));
        const json& mj = j.at("model");
        if (c.model_params.dynamics == model::DynamicsKind::user_table) {
            if (!mj.contains("table_path"))
                field_error("model.table_path", "required for user_table dynamics");
            c.dynamics_table_path = mj.at("table_path").get<std::string>();
            c.user_delta = mj.value("delta", 0.5);
            c.user_control_bound = mj.value("control_bound", 1.0);
            c.user_eta = mj.value("eta", 0.5);
            c.user_f_star_slope = mj.value("f_star_slope", 1.0);
            c.user_lip_f = mj.value("lip_f", 1.0);
            c.user_lip_H = mj.value("lip_H", 1.0);
        }
    }
    if (j.contains("environment")) c.env_spec = parse_env(j.at("environment"));
    c.model_params.dim = c.env_spec.dimension;

    if (!j.contains("grids")) field_error("grids", "section required");
    const json& g = j.at("grids");
    expect_keys(g, "grids",
                {"t_start", "t_end", "dt", "dx", "space_lo", "space_hi", "control_radius",
                 "control_grid_n", "cell", "table"});
    c.base_grid.t_start = g.value("t_start", 0.0);
    c.base_grid.t_end = g.value("t_end", 1.0);
    c.base_grid.dt = g.value("dt", 0.05);
    c.base_grid.dx = g.value("dx", 0.05);
    c.base_grid.control_radius = g.value("control_radius", 3.0);
    c.base_grid.control_grid_n = g.value("control_grid_n", 0);
    {
        if (!g.contains("space_lo") || !g.contains("space_hi"))
            field_error("grids.space_lo/space_hi", "required");
        const auto lo = num_list(g.at("space_lo"), "grids.space_lo");
        const auto hi = num_list(g.at("space_hi"), "grids.space_hi");
        if (static_cast<int>(lo.size()) != c.model_params.dim ||
            static_cast<int>(hi.size()) != c.model_params.dim)
            field_error("grids.space_lo/space_hi", "need one entry per dimension");
        c.base_grid.space_box.lo = Vec::zero(c.model_params.dim);
        c.base_grid.space_box.hi = Vec::zero(c.model_params.dim);
        for (int a = 0; a < c.model_params.dim; ++a) {
            c.base_grid.space_box.lo[a] = lo[static_cast<size_t>(a)];
            c.base_grid.space_box.hi[a] = hi[static_cast<size_t>(a)];
        }
    }
    if (g.contains("cell")) {
        const json& cc = g.at("cell");
        expect_keys(cc, "grids.cell",
                    {"micro_dt", "micro_lattice", "control_radius", "control_grid_n",
                     "tube_radius", "richardson_fraction"});
        c.cell_numerics.micro_dt = cc.value("micro_dt", 0.1);
        c.cell_numerics.micro_lattice = cc.value("micro_lattice", 0.025);
        c.cell_numerics.control_radius = cc.value("control_radius", 4.0);
        c.cell_numerics.control_grid_n = cc.value("control_grid_n", 0);
        c.cell_numerics.tube_radius = cc.value("tube_radius", 0.0);
        c.cell_numerics.richardson_fraction = cc.value("richardson_fraction", 0.1);
    }
    if (g.contains("table")) {
        const json& tt = g.at("table");
        expect_keys(tt, "grids.table",
                    {"t_nodes", "x_nodes", "u_radius", "u_step", "u_min", "u_max"});
        c.table_t_nodes = tt.value("t_nodes", 2);
        if (tt.contains("x_nodes")) {
            for (const auto& e : tt.at("x_nodes"))
                c.table_x_nodes.push_back(e.get<int>());
        }
        c.table_u_radius = tt.value("u_radius", 3.0);
        c.table_u_step = tt.value("u_step", 0.25);
        if (tt.contains("u_min") || tt.contains("u_max")) {
            if (!tt.contains("u_min") || !tt.contains("u_max"))
                field_error("grids.table.u_min/u_max", "both must be given together");
            c.table_u_explicit = true;
            c.table_u_min = tt.at("u_min").get<double>();
            c.table_u_max = tt.at("u_max").get<double>();
            c.table_u_radius = std::max(std::abs(c.table_u_min), std::abs(c.table_u_max));
        }
    }
    if (c.table_x_nodes.empty())
        c.table_x_nodes.assign(static_cast<size_t>(c.model_params.dim), 3);

    if (!j.contains("sweep")) field_error("sweep", "section required");
    const json& s = j.at("sweep");
    expect_keys(s, "sweep", {"eps", "tau", "b_schedule"});
    if (s.contains("eps")) c.eps_list = num_list(s.at("eps"), "sweep.eps");
    if (s.contains("tau")) c.tau_list = num_list(s.at("tau"), "sweep.tau");
    if (s.contains("b_schedule"))
        c.b_schedule = num_list(s.at("b_schedule"), "sweep.b_schedule");

    if (j.contains("seeds"))
        for (const auto& e : j.at("seeds")) {
            if (!e.is_number_integer()) field_error("seeds", "expected integers");
            c.seeds.push_back(e.get<std::uint64_t>());
        }
    c.output_dir = j.value("output_dir", std::string("out/") + c.name);
    c.workers = j.value("workers", 1);

    c.validate();
    return c;
}

}  // namespace homlab::cli
