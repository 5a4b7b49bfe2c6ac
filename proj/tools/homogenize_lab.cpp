// Batch experiment driver: parse a config, run pipeline stages or individual
// artifacts, and emit plot-ready CSV with JSON headers.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "homlab/config.hpp"
#include "homlab/errors.hpp"
#include "homlab/io.hpp"
#include "homlab/pipeline.hpp"
#include "homlab/solve.hpp"
#include "homlab/xform.hpp"

namespace fs = std::filesystem;
using namespace homlab;

namespace {

// exit codes: 2 validation, 3 numerical stage failure, 4 missing artifact
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitMissing = 4;

int workers_fallback() {
    if (const char* e = std::getenv("HOMOGENIZE_LAB_WORKERS")) {
        const int w = std::atoi(e);
        if (w >= 1) return w;
    }
    return 0;
}

struct CommonArgs {
    std::string config_path;
    std::string output_override;
    int workers = 0;
    long long seed_override = -1;
};

cli::ExperimentConfig load_with(const CommonArgs& a) {
    cli::ExperimentConfig cfg = cli::load_config(a.config_path);
    if (!a.output_override.empty()) cfg.output_dir = a.output_override;
    if (a.workers > 0)
        cfg.workers = a.workers;
    else if (workers_fallback() > 0)
        cfg.workers = workers_fallback();
    if (a.seed_override >= 0) cfg.seeds = {static_cast<std::uint64_t>(a.seed_override)};
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "experiment config (.toml or .json)")
        ->required();
    cmd->add_option("--output", a.output_override, "override the output directory");
    cmd->add_option("--workers", a.workers, "worker threads (env HOMOGENIZE_LAB_WORKERS)");
    cmd->add_option("--seed-override", a.seed_override, "replace the seed list");
}

int dispatch(const std::string& stage_name, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const MissingArtifactError& e) {
        std::cerr << "stage " << stage_name << ": " << e.what() << "\n";
        return kExitMissing;
    } catch (const std::exception& e) {
        std::cerr << "stage " << stage_name << " failed: " << e.what() << "\n";
        return kExitNumerical;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"homogenize-lab: effective Lagrangians and value functions in random media"};
    app.require_subcommand(1);

    CommonArgs run_args, env_args, cell_args, table_args, solve_args, hjb_args, rep_args;
    std::string run_stage = "all";

    auto* cmd_run = app.add_subcommand("run", "full pipeline: check -> table -> solve -> hjb -> report");
    add_common(cmd_run, run_args);
    cmd_run->add_option("--stage", run_stage, "all|check|table|solve|hjb|report");

    auto* cmd_env = app.add_subcommand("gen-env", "dump a realized environment as CSV");
    add_common(cmd_env, env_args);
    double env_window = 10.0;
    int env_points = 512;
    cmd_env->add_option("--window", env_window, "dump window side length");
    cmd_env->add_option("--points", env_points, "points per axis");

    auto* cmd_cell = app.add_subcommand("cell", "solve one cell problem, print CellResult JSON");
    add_common(cmd_cell, cell_args);
    double cell_b = 50.0;
    std::vector<double> cell_u{1.0};
    std::vector<double> cell_x;
    double cell_t0 = 0.0;
    cmd_cell->add_option("--b", cell_b, "rescaled horizon");
    cmd_cell->add_option("--u", cell_u, "mean control (one value per axis)");
    cmd_cell->add_option("--x", cell_x, "frozen macro point (default 0)");
    cmd_cell->add_option("--t0", cell_t0, "frozen time");

    auto* cmd_table = app.add_subcommand("table", "build effective-Lagrangian tables per seed");
    add_common(cmd_table, table_args);

    auto* cmd_solve = app.add_subcommand("solve", "solve a value problem from artifacts");
    add_common(cmd_solve, solve_args);
    bool solve_hom = false;
    double solve_fine_eps = 0.0;
    double solve_macro_tau = 0.0;
    cmd_solve->add_flag("--homogenized", solve_hom, "solve the homogenized problem (needs table)");
    cmd_solve->add_option("--fine", solve_fine_eps, "solve the fine problem at this epsilon");
    cmd_solve->add_option("--macro", solve_macro_tau, "solve the macro-discretized problem at this tau");

    auto* cmd_hjb = app.add_subcommand("hjb", "monotone HJB solve from the table");
    add_common(cmd_hjb, hjb_args);

    auto* cmd_rep = app.add_subcommand("report", "gap report + manifest from artifacts");
    add_common(cmd_rep, rep_args);

    CLI11_PARSE(app, argc, argv);

    if (cmd_run->parsed()) {
        return dispatch(run_stage, [&] {
            auto cfg = load_with(run_args);
            cli::RunOptions opt;
            opt.stage = run_stage;
            opt.config_path = run_args.config_path;
            if (opt.stage != "all" && opt.stage != "check" && opt.stage != "table" &&
                opt.stage != "solve" && opt.stage != "hjb" && opt.stage != "report")
                throw ConfigError("unknown --stage '" + opt.stage + "'");
            cli::run_pipeline(cfg, opt);
        });
    }

    if (cmd_env->parsed()) {
        return dispatch("gen-env", [&] {
            auto cfg = load_with(env_args);
            const auto h = cfg.environment(cfg.seeds.front());
            Box w;
            w.lo = Vec::zero(cfg.env_spec.dimension);
            w.hi = Vec::zero(cfg.env_spec.dimension);
            for (int a = 0; a < cfg.env_spec.dimension; ++a) w.hi[a] = env_window;
            const auto dump = env::sample_field(h, w, env_points);
            fs::create_directories(cfg.output_dir);
            io::save_field_dump(h, dump, (fs::path(cfg.output_dir) / "env_dump.csv").string());
        });
    }

    if (cmd_cell->parsed()) {
        return dispatch("cell", [&] {
            auto cfg = load_with(cell_args);
            const auto m = cfg.model(cfg.seeds.front());
            const auto omega = cfg.environment(cfg.seeds.front());
            cell::CellProblemSpec spec;
            spec.t0 = cell_t0;
            spec.x0 = Vec::zero(m.dim());
            spec.u_tilde = Vec::zero(m.dim());
            for (int a = 0; a < m.dim(); ++a) {
                if (a < static_cast<int>(cell_u.size())) spec.u_tilde[a] = cell_u[a];
                if (a < static_cast<int>(cell_x.size())) spec.x0[a] = cell_x[a];
            }
            spec.horizon_b = cell_b;
            spec.micro_dt = cfg.cell_numerics.micro_dt;
            spec.micro_lattice = cfg.cell_numerics.micro_lattice;
            spec.control_radius = cfg.cell_numerics.control_radius;
            spec.control_grid_n = cfg.cell_numerics.control_grid_n;
            spec.tube_radius = cfg.cell_numerics.tube_radius;
            const auto r = cell::point_to_point_cost(m, omega, spec);
            nlohmann::json j;
            j["value"] = r.value;
            j["duration"] = r.duration;
            j["ratio"] = r.value / r.duration;
            j["endpoint_residual"] = r.endpoint_residual;
            j["dp_tolerance"] = r.dp_tolerance;
            j["feasible"] = r.feasible;
            std::cout << j.dump(2) << "\n";
        });
    }

    if (cmd_table->parsed()) {
        return dispatch("table", [&] {
            auto cfg = load_with(table_args);
            cli::RunOptions opt;
            opt.stage = "table";
            opt.config_path = table_args.config_path;
            cli::run_pipeline(cfg, opt);
        });
    }

    if (cmd_solve->parsed()) {
        return dispatch("solve", [&] {
            auto cfg = load_with(solve_args);
            if (!solve_hom && solve_fine_eps <= 0.0 && solve_macro_tau <= 0.0)
                throw ConfigError("solve: pick one of --homogenized, --fine EPS, --macro TAU");
            const auto m = cfg.model(cfg.seeds.front());
            fs::create_directories(cfg.output_dir);
            if (solve_hom) {
                const auto tab =
                    io::load_table(cli::table_artifact(cfg.output_dir, cfg.seeds.front()));
                const auto v = solve::solve_homogenized(m, tab, cfg.base_grid, cfg.workers);
                io::save_value_field(v, cli::homogenized_artifact(cfg.output_dir));
            }
            if (solve_fine_eps > 0.0) {
                const auto omega = cfg.environment(cfg.seeds.front());
                const auto grid = cfg.fine_grid(solve_fine_eps, m);
                const auto v = solve::solve_fine(m, omega, solve_fine_eps, grid, cfg.workers);
                io::save_value_field(v, cli::fine_artifact(cfg.output_dir, solve_fine_eps));
            }
            if (solve_macro_tau > 0.0) {
                const auto omega = cfg.environment(cfg.seeds.front());
                solve::GridSpec grid = cfg.base_grid;
                grid.dt = solve_macro_tau;
                // macro stepping is coarse by nature; widen dx to keep the
                // per-step foot bound
                const double need = solve_macro_tau * m.dynamics.f_star(grid.control_radius);
                if (grid.dx < need) grid.dx = need * (1.0 + 1e-12);
                const double eps = cfg.eps_list.front();
                const auto v =
                    solve::solve_macro(m, omega, eps, grid, cfg.cell_numerics, cfg.workers);
                io::save_value_field(
                    v, (fs::path(cfg.output_dir) /
                        ("v_macro_tau" + io::format_double(solve_macro_tau) + ".csv"))
                           .string());
            }
        });
    }

    if (cmd_hjb->parsed()) {
        return dispatch("hjb", [&] {
            auto cfg = load_with(hjb_args);
            cli::RunOptions opt;
            opt.stage = "hjb";
            opt.config_path = hjb_args.config_path;
            cli::run_pipeline(cfg, opt);
        });
    }

    if (cmd_rep->parsed()) {
        return dispatch("report", [&] {
            auto cfg = load_with(rep_args);
            cli::RunOptions opt;
            opt.stage = "report";
            opt.config_path = rep_args.config_path;
            const auto rep = cli::run_pipeline(cfg, opt);
            for (const auto& g : rep.gaps)
                std::cout << "eps " << io::format_double(g.eps) << ": sup gap "
                          << io::format_double(g.sup_gap) << "\n";
            std::cout << "hjb vs homogenized: " << io::format_double(rep.hjb_vs_homogenized)
                      << "\n";
            for (const auto& l : rep.seed_lines) std::cout << l << "\n";
        });
    }

    return 0;
}
