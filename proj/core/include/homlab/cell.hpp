#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homlab/env.hpp"
#include "homlab/geometry.hpp"
#include "homlab/model.hpp"

namespace homlab::cell {

// One frozen-coefficient, endpoint-constrained fast-variable problem.
// Everything is expressed in rescaled time, so the macroscopic step tau and
// the scale epsilon enter only through the horizon b = tau / epsilon.
struct CellProblemSpec {
    double t0 = 0.0;
    Vec x0 = Vec::zero(1);  // frozen macro arguments of the Lagrangian
    Vec u_tilde = Vec::zero(1);
    double horizon_b = 25.0;
    double micro_dt = 0.1;
    double micro_lattice = 0.025;
    double control_radius = 4.0;
    int control_grid_n = 0;  // 0 = lattice-aligned control grid (exact steps for f = u)
    double tube_radius = 0.0;  // 0 = auto; admissible states stay within this
                               // distance of the straight start->target line
    bool has_fast_origin = false;
    Vec fast_origin = Vec::zero(1);  // defaults to x0

    bool want_path = false;
    bool soft_endpoint = false;  // quadratic endpoint penalty (diagnostics)
    double soft_penalty_coeff = 100.0;
    bool estimate_tolerance = true;  // Richardson re-run at (dt/2, dy/2)

    Vec start() const { return has_fast_origin ? fast_origin : x0; }
};

struct CellResult {
    double value = 0.0;     // rescaled cost F_{a,b}
    double duration = 0.0;  // b - a
    double endpoint_residual = 0.0;
    double dp_tolerance = 0.0;
    bool feasible = true;

    struct PathNode {
        double time;
        Vec y;
        Vec u;
    };
    std::vector<PathNode> argmin_path;
};

// Samples of the subadditive family F_{0,b} along a horizon schedule, with
// the plateau estimate of the per-unit-time limit.
struct SubadditiveSeries {
    std::vector<double> b_values;
    std::vector<double> f_values;
    std::vector<double> ratios;
    std::vector<double> tolerances;  // dp tolerance per entry
    double plateau_estimate = 0.0;
    double plateau_error = 0.0;  // half max-min spread of the last quartile
    bool trend_warning = false;
};

struct TableLattice {
    LatticeAxis t;
    std::vector<LatticeAxis> x;  // one per space dim
    std::vector<LatticeAxis> u;  // one per control dim
};

struct CellNumerics {
    double micro_dt = 0.1;
    double micro_lattice = 0.025;
    double control_radius = 4.0;
    int control_grid_n = 0;
    double tube_radius = 0.0;
    double richardson_fraction = 0.1;  // fraction of nodes re-run refined
};

struct EffectiveLagrangianTable {
    int dim = 1;
    TableLattice lattice;
    std::vector<double> values;
    std::vector<double> errors;
    std::vector<std::uint8_t> feasible;

    std::string model_hash;
    std::uint64_t seed = 0;
    std::vector<double> b_schedule;
    CellNumerics numerics;

    std::size_t size() const;
    std::size_t index(int it, const IVec& ix, const IVec& iu) const;

    // Multilinear accessor. Throws DomainError outside the lattice hull;
    // returns +inf if any participating corner is infeasible.
    double interpolate(double t, const Vec& x, const Vec& u) const;

    bool covers(double t, const Vec& x, const Vec& u) const;
};

// Minimal cost to transport the fast variable from start() to
// start() + b f(x0, u_tilde) under frozen dynamics. Backward DP on the
// micro lattice with a hard terminal indicator at the snapped target.
CellResult point_to_point_cost(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                               const CellProblemSpec& spec);

// Window [a, b] of the subadditive process: same problem started at
// x0 + a f(x0, u_tilde), duration b - a, environment queried at absolute
// positions so shift covariance holds exactly on lattice shifts.
CellResult f_ab(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                const CellProblemSpec& base, double a, double b);

SubadditiveSeries estimate_effective_lagrangian(const model::ModelSpec& m,
                                                const env::EnvironmentHandle& omega,
                                                const CellProblemSpec& base,
                                                const std::vector<double>& b_schedule);

EffectiveLagrangianTable build_table(const model::ModelSpec& m,
                                     const env::EnvironmentHandle& omega,
                                     const TableLattice& lattice,
                                     const std::vector<double>& b_schedule,
                                     const CellNumerics& numerics, int workers);

// Non-stationary variant: the macroscopic arguments of L follow the true
// trajectory, used to measure the frozen-coefficient error.
CellResult nonstationary_cell_cost(const model::ModelSpec& m,
                                   const env::EnvironmentHandle& omega,
                                   const CellProblemSpec& spec, double epsilon);

}  // namespace homlab::cell
