#pragma once

#include <functional>
#include <string>
#include <vector>

#include "homlab/cell.hpp"
#include "homlab/env.hpp"
#include "homlab/geometry.hpp"
#include "homlab/model.hpp"

namespace homlab::solve {

// Macro (time, space, control) discretization shared by the three value
// solvers. The step bound dt <= dx / f^*(K) keeps every characteristic foot
// within a neighbor cell.
struct GridSpec {
    double t_start = 0.0;
    double t_end = 1.0;
    double dt = 0.05;
    Box space_box;
    double dx = 0.05;
    double control_radius = 3.0;
    int control_grid_n = 0;  // 0 = aligned with dx/dt quantum

    void validate(const model::ModelSpec& m) const;
    int time_slices() const;   // number of stored slices including terminal
    double time_at(int i) const;
    int nodes_per_axis(int axis) const;
    std::size_t nodes_per_slice() const;
    Vec node(std::size_t flat, int dim) const;
};

enum class FieldKind { fine, macro, homogenized, hjb };

struct ValueField {
    GridSpec grid;
    int dim = 1;
    FieldKind kind = FieldKind::fine;
    double eps = 0.0;  // fine: scale; macro: scale (dt plays the role of tau)
    std::vector<std::vector<double>> values;  // [slice][node]
    std::vector<std::vector<Vec>> policy;     // argmin control per node
    std::string model_hash;
    long clamped_feet = 0;   // feet of characteristics clipped at the box
    double lip_quotient = 0.0;  // measured discrete space-Lipschitz constant
    double lip_bound = 0.0;     // assembled continuity bound (diagnostic)

    double value(int slice, std::size_t node) const { return values[slice][node]; }
    // Multilinear in space, linear in time.
    double sample(double t, const Vec& x) const;
    double interp_slice(int slice, const Vec& x, bool* clamped = nullptr) const;
};

// Fine-scale value function: backward semi-Lagrangian sweep of the cost with
// the oscillatory coordinate x / eps.
ValueField solve_fine(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                      double eps, const GridSpec& grid, int workers = 1);

// Macro-discretized value function: one frozen cell problem per
// (slice, node, control) transition, computed on demand through the cell
// module. grid.dt plays the role of the macroscopic step tau.
ValueField solve_macro(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                       double eps, const GridSpec& grid,
                       const cell::CellNumerics& numerics, int workers = 1);

// Homogenized value function driven by an effective-Lagrangian table.
ValueField solve_homogenized(const model::ModelSpec& m,
                             const cell::EffectiveLagrangianTable& table,
                             const GridSpec& grid, int workers = 1);

// Piecewise-constant-velocity control: on [t_i, t_{i+1}) the realized
// velocity is pinned to f(x_i, u_i), so trajectories are exact polylines.
struct StepControl {
    std::vector<double> breakpoints;  // size m + 1
    std::vector<Vec> values;          // size m

    int intervals() const { return static_cast<int>(values.size()); }
    double t_begin() const { return breakpoints.front(); }
    double t_end() const { return breakpoints.back(); }
    double sup_norm() const;
};

// Vertices of the polyline trajectory from x0 (size intervals + 1).
std::vector<Vec> trajectory_vertices(const model::ModelSpec& m, const Vec& x0,
                                     const StepControl& u);

// Cost of a step control: per-interval RK4 quadrature of the running cost
// along the exact polyline, optionally plus the terminal cost.
double evaluate_cost(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                     double eps, double t, const Vec& x, const StepControl& u,
                     bool include_terminal = true, double quad_substep = 0.01);

// Sampled control -> step control whose trajectory interpolates the true one
// at the breakpoints; interval lengths shrink until the per-interval
// oscillation is below min(kappa, lambda).
StepControl approximate_by_step_control(const model::ModelSpec& m,
                                        const std::function<Vec(double)>& u, double t0,
                                        double t1, double kappa);
StepControl approximate_by_step_control(const model::ModelSpec& m, const StepControl& u,
                                        double kappa);

struct RepairParams {
    double R = 0.0;        // target sup-norm bound
    double N = 0.0;        // slow/fast threshold; 0 = derived from measured W
    double W = 0.0;        // informational; the cost rate is always measured
    double beta = 0.9;     // cap on the |time-change rate| per pass
    double lambda = 0.0;   // oscillation bound; 0 = model lambda
};

struct RepairOutcome {
    StepControl control;
    int iterations = 0;
    double measured_W = 0.0;
    double last_beta = 0.0;
    double cost_before = 0.0;
    double cost_after = 0.0;
};

// Bounded-control surgery: repeatedly rebuilds the last interval whose
// control exceeds R as a slow traversal of the same displacement, absorbing
// the time shift by a uniform speed change on the cheap intervals. Endpoint
// and cost never degrade; throws ThresholdError (naming the required R) when
// the target bound is too small for the measured cost rate.
RepairOutcome repair_control(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                             double eps, double t0, const Vec& x0, const StepControl& u,
                             const RepairParams& params);

}  // namespace homlab::solve
