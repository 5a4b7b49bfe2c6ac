#include "homlab/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "homlab/errors.hpp"
#include "homlab/io.hpp"
#include "homlab/solve.hpp"
#include "homlab/xform.hpp"

namespace homlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string table_artifact(const std::string& dir, std::uint64_t seed) {
    return (fs::path(dir) / ("table_seed" + std::to_string(seed) + ".csv")).string();
}
std::string fine_artifact(const std::string& dir, double eps) {
    return (fs::path(dir) / ("v_fine_eps" + io::format_double(eps) + ".csv")).string();
}
std::string homogenized_artifact(const std::string& dir) {
    return (fs::path(dir) / "v_homogenized.csv").string();
}
std::string hjb_artifact(const std::string& dir) {
    return (fs::path(dir) / "v_hjb.csv").string();
}

namespace {

struct StageClock {
    std::vector<std::pair<std::string, double>>& sink;
    std::string stage;
    std::chrono::steady_clock::time_point begin = std::chrono::steady_clock::now();
    ~StageClock() {
        const auto end = std::chrono::steady_clock::now();
        sink.emplace_back(stage, std::chrono::duration<double>(end - begin).count());
    }
};

bool wants(const std::string& opt_stage, const char* stage) {
    return opt_stage == "all" || opt_stage == stage;
}

// sup over the compact report window (central half of the box, every slice
// of `field`) of |field - reference|, sampling the reference in (t, x).
double sup_gap_on_compact(const solve::ValueField& field, const solve::ValueField& ref) {
    const Box compact = field.grid.space_box.central(0.5);
    double worst = 0.0;
    const std::size_t nodes = field.grid.nodes_per_slice();
    for (std::size_t s = 0; s < field.values.size(); ++s) {
        const double t = field.grid.time_at(static_cast<int>(s));
        for (std::size_t j = 0; j < nodes; ++j) {
            const Vec x = field.grid.node(j, field.dim);
            if (!compact.contains(x)) continue;
            worst = std::max(worst,
                             std::abs(field.values[s][j] - ref.sample(t, x)));
        }
    }
    return worst;
}

void write_assumptions_json(const model::AssumptionReport& rep, const std::string& path) {
    json j;
    for (const auto& e : rep.entries)
        j["assumptions"].push_back({{"id", e.id},
                                    {"name", e.name},
                                    {"pass", e.pass},
                                    {"worst_violation", e.worst_violation},
                                    {"where", e.where}});
    j["all_pass"] = rep.all_pass();
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path, std::ios::binary);
    f << j.dump(2) << "\n";
}

model::AssumptionReport load_assumptions_json(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("missing artifact: " + path);
    json j;
    f >> j;
    model::AssumptionReport rep;
    for (const auto& e : j.at("assumptions"))
        rep.entries.push_back({e.at("id").get<int>(), e.at("name").get<std::string>(),
                               e.at("pass").get<bool>(),
                               e.at("worst_violation").get<double>(),
                               e.at("where").get<std::string>()});
    return rep;
}

}  // namespace

ConvergenceReport run_pipeline(const ExperimentConfig& cfg0, const RunOptions& opt) {
    ExperimentConfig cfg = cfg0;
    if (opt.workers_override > 0) cfg.workers = opt.workers_override;
    if (opt.seed_override >= 0)
        cfg.seeds = {static_cast<std::uint64_t>(opt.seed_override)};
    if (!opt.output_override.empty()) cfg.output_dir = opt.output_override;
    cfg.validate();

    const std::string dir = cfg.output_dir;
    fs::create_directories(dir);
    ConvergenceReport rep;
    auto log = [&](const std::string& line) {
        if (!opt.quiet) std::fputs((line + "\n").c_str(), stderr);
    };

    const std::string assumptions_path = (fs::path(dir) / "assumptions.json").string();

    if (wants(opt.stage, "check")) {
        StageClock clock{rep.timings, "check-assumptions"};
        const model::ModelSpec m = cfg.model(cfg.seeds.front());
        model::SamplePlan plan;
        plan.x_box = cfg.base_grid.space_box;
        plan.u_radius = cfg.base_grid.control_radius;
        plan.t_max = cfg.base_grid.t_end;
        plan.seed = cfg.seeds.front();
        rep.assumptions = model::check_assumptions(m, plan);
        write_assumptions_json(rep.assumptions, assumptions_path);
        log("check-assumptions: " + std::string(rep.assumptions.all_pass() ? "pass" : "FAIL"));
    }

    if (wants(opt.stage, "table")) {
        StageClock clock{rep.timings, "build-table"};
        for (std::uint64_t seed : cfg.seeds) {
            const model::ModelSpec m = cfg.model(seed);
            const auto omega = cfg.environment(seed);
            const auto tab = cell::build_table(m, omega, cfg.table_lattice(), cfg.b_schedule,
                                               cfg.cell_numerics, cfg.workers);
            io::save_table(tab, table_artifact(dir, seed));
            log("build-table: seed " + std::to_string(seed) + " done");
        }
    }

    if (wants(opt.stage, "solve")) {
        StageClock clock{rep.timings, "solve"};
        const model::ModelSpec m = cfg.model(cfg.seeds.front());
        const auto tab = io::load_table(table_artifact(dir, cfg.seeds.front()));
        const auto hom = solve::solve_homogenized(m, tab, cfg.base_grid, cfg.workers);
        io::save_value_field(hom, homogenized_artifact(dir));
        log("solve: homogenized done");
        const auto omega = cfg.environment(cfg.seeds.front());
        for (double eps : cfg.eps_list) {
            const auto grid = cfg.fine_grid(eps, m);
            const auto fine = solve::solve_fine(m, omega, eps, grid, cfg.workers);
            io::save_value_field(fine, fine_artifact(dir, eps));
            log("solve: fine eps=" + io::format_double(eps) + " done");
        }
    }

    if (wants(opt.stage, "hjb")) {
        StageClock clock{rep.timings, "hjb"};
        const model::ModelSpec m = cfg.model(cfg.seeds.front());
        const auto tab = io::load_table(table_artifact(dir, cfg.seeds.front()));
        xform::HamAccessor H = [&m, &tab](double t, const Vec& x, const Vec& p) {
            return xform::effective_hamiltonian(m, tab, t, x, p);
        };
        // CFL for the effective Hamiltonian: per-axis slopes are bounded by
        // the speed at the table's control radius and the bound sums over
        // axes, so shrink dt accordingly.
        solve::GridSpec grid = cfg.base_grid;
        const double alpha_bound =
            m.dim() * (m.dynamics.f_star(tab.lattice.u[0].hi()) * 1.1 + 1e-6);
        while (grid.dt > grid.dx / alpha_bound) grid.dt *= 0.5;
        xform::HjbOptions ho;
        ho.workers = cfg.workers;
        const auto vh = xform::solve_hjb(m, H, grid, ho);
        io::save_value_field(vh, hjb_artifact(dir));
        // Export the sampled effective Hamiltonian alongside. The slope range
        // stays well inside the dual of the table's control range so the sup
        // is always attained in the lattice interior.
        const auto lat = cfg.table_lattice();
        std::vector<LatticeAxis> p_axes;
        for (int a = 0; a < m.dim(); ++a) {
            LatticeAxis ax;
            const int half = std::max(
                1, static_cast<int>(std::floor(0.6 * cfg.table_u_radius / cfg.table_u_step)));
            ax.n = 2 * half + 1;
            ax.lo = -half * cfg.table_u_step;
            ax.step = cfg.table_u_step;
            p_axes.push_back(ax);
        }
        const auto ht = xform::build_hamiltonian_table(m, tab, lat.t, lat.x, p_axes, {},
                                                       cfg.workers);
        io::save_hamiltonian_table(ht, (fs::path(dir) / "h_eff.csv").string());
        log("hjb: done");
    }

    if (wants(opt.stage, "report")) {
        StageClock clock{rep.timings, "report"};
        rep.assumptions = load_assumptions_json(assumptions_path);
        const auto hom = io::load_value_field(homogenized_artifact(dir));
        for (double eps : cfg.eps_list) {
            const auto fine = io::load_value_field(fine_artifact(dir, eps));
            GapEntry g;
            g.eps = eps;
            g.sup_gap = sup_gap_on_compact(fine, hom);
            g.clamped_feet = fine.clamped_feet;
            rep.gaps.push_back(g);
        }
        {
            const auto vh = io::load_value_field(hjb_artifact(dir));
            rep.hjb_vs_homogenized = sup_gap_on_compact(vh, hom);
        }
        // cross-seed discrepancies of the effective Lagrangian
        if (cfg.seeds.size() >= 2) {
            const auto t0 = io::load_table(table_artifact(dir, cfg.seeds[0]));
            const auto t1 = io::load_table(table_artifact(dir, cfg.seeds[1]));
            for (std::size_t i = 0; i < t0.values.size(); ++i) {
                if (!t0.feasible[i] || !t1.feasible[i]) continue;
                const double a = t0.values[i], b = t1.values[i];
                const double rel = std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-9});
                rep.max_seed_rel_diff = std::max(rep.max_seed_rel_diff, rel);
                std::ostringstream os;
                os << "node " << i << ": " << io::format_double(a) << " vs "
                   << io::format_double(b) << " rel " << io::format_double(rel);
                rep.seed_lines.push_back(os.str());
            }
        }

        // human summary
        std::ostringstream md;
        md << "# Homogenization report: " << cfg.name << "\n\n";
        md << "model hash `" << cfg.model(cfg.seeds.front()).hash() << "`, environment "
           << cfg.env_spec.describe() << ", seeds";
        for (auto s : cfg.seeds) md << " " << s;
        md << "\n\n## Assumption checks\n\n";
        md << "| id | assumption | status | worst violation |\n|---|---|---|---|\n";
        for (const auto& e : rep.assumptions.entries)
            md << "| A" << e.id << " | " << e.name << " | " << (e.pass ? "pass" : "FAIL")
               << " | " << e.worst_violation << " |\n";
        md << "\n## Scale sweep: sup over the compact window of |V_eps - V_hom|\n\n";
        md << "| eps | sup gap | clamped feet |\n|---|---|---|\n";
        for (const auto& g : rep.gaps)
            md << "| " << io::format_double(g.eps) << " | " << io::format_double(g.sup_gap)
               << " | " << g.clamped_feet << " |\n";
        md << "\nHJB cross-check: sup |V_hjb - V_hom| = "
           << io::format_double(rep.hjb_vs_homogenized) << "\n";
        if (!rep.seed_lines.empty()) {
            md << "\n## Seed discrepancies (effective Lagrangian)\n\n";
            md << "max relative difference: " << io::format_double(rep.max_seed_rel_diff)
               << "\n\n```\n";
            for (const auto& l : rep.seed_lines) md << l << "\n";
            md << "```\n";
        }
        md << "\n## Wall clock\n\n| stage | seconds |\n|---|---|\n";
        for (const auto& [k, v] : rep.timings) md << "| " << k << " | " << v << " |\n";
        {
            std::ofstream f(fs::path(dir) / "report.md", std::ios::binary);
            f << md.str();
        }

        // manifest: every artifact in the directory with its content hash
        std::vector<io::ManifestEntry> outputs;
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            const std::string name = e.path().filename().string();
            if (name == "manifest.json") continue;
            names.push_back(name);
        }
        std::sort(names.begin(), names.end());
        for (const auto& name : names)
            outputs.push_back({name, io::file_hash_hex((fs::path(dir) / name).string())});
        std::vector<io::ManifestEntry> inputs;
        if (!opt.config_path.empty())
            inputs.push_back({opt.config_path, io::file_hash_hex(opt.config_path)});
        io::write_manifest(dir, inputs, outputs,
                           {{"experiment", cfg.name},
                            {"workers", std::to_string(cfg.workers)}});
        log("report: written");
    }

    return rep;
}

}  // namespace homlab::cli
