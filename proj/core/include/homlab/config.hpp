#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homlab/cell.hpp"
#include "homlab/env.hpp"
#include "homlab/model.hpp"
#include "homlab/solve.hpp"

namespace homlab::cli {

// One experiment: a model + environment, the solver grids, and the
// epsilon/tau/horizon sweeps. Loadable from TOML (subset) or JSON.
struct ExperimentConfig {
    std::string name = "experiment";

    model::BuiltinModelParams model_params;
    env::EnvironmentSpec env_spec;

    // user-table dynamics: sampled (x, u, f) lattice plus the declared
    // inversion constants the built-ins would otherwise derive
    std::string dynamics_table_path;  // empty = built-in dynamics
    double user_delta = 0.5;
    double user_control_bound = 1.0;
    double user_eta = 0.5;
    double user_f_star_slope = 1.0;
    double user_lip_f = 1.0;
    double user_lip_H = 1.0;

    solve::GridSpec base_grid;  // homogenized / hjb solve grid
    cell::CellNumerics cell_numerics;

    int table_t_nodes = 2;
    std::vector<int> table_x_nodes;
    double table_u_radius = 3.0;
    double table_u_step = 0.25;
    bool table_u_explicit = false;  // use [u_min, u_max] instead of +-radius
    double table_u_min = 0.0;
    double table_u_max = 0.0;

    std::vector<double> eps_list;  // strictly decreasing
    std::vector<double> tau_list;
    std::vector<double> b_schedule;
    std::vector<std::uint64_t> seeds;

    std::string output_dir = "out";
    int workers = 1;

    void validate() const;

    env::EnvironmentHandle environment(std::uint64_t seed) const;
    model::ModelSpec model(std::uint64_t seed) const;
    cell::TableLattice table_lattice() const;

    // Grid for the fine solver at a given scale: dx is refined to resolve
    // eps/4 and dt shrinks with it to keep the foot bound.
    solve::GridSpec fine_grid(double eps, const model::ModelSpec& m) const;
};

ExperimentConfig load_config(const std::string& path);

}  // namespace homlab::cli
