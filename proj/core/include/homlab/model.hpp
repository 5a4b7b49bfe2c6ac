#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "homlab/env.hpp"
#include "homlab/geometry.hpp"

namespace homlab::model {

enum class DynamicsKind { calculus_of_variations, bounded_speed, user_table };

// Sampled dynamics on a regular (x, u) lattice with multilinear
// interpolation; evaluation clamps to the lattice hull.
struct UserDynamicsTable {
    int dim = 1;
    std::vector<LatticeAxis> x_axes;  // size dim
    std::vector<LatticeAxis> u_axes;  // size dim
    std::vector<Vec> values;          // row-major over (x..., u...)

    Vec eval(const Vec& x, const Vec& u) const;
};

// The controlled system x' = f(x, u) together with every constant the
// assumption framework needs: the reachable-sphere radius delta, the control
// bound M realizing it, the local-inverse radius eta(R) and the declared
// Lipschitz data.
struct DynamicsSpec {
    DynamicsKind kind = DynamicsKind::calculus_of_variations;
    int dim = 1;
    double speed_bound = 0.0;  // C (bounded_speed only)
    double delta = 1.0;
    double control_bound_M = 1.0;
    double control_bound_M_tilde = 0.0;
    std::function<double(double)> eta;     // R -> inversion radius
    std::function<double(double)> f_star;  // R -> sup |f| over |u| <= R
    std::function<double(double)> lip_f;   // R -> Lipschitz of f on U^R
    std::function<double(double)> lip_H;   // R -> Lipschitz of the inverse map
    std::shared_ptr<UserDynamicsTable> table;
};

// Running + terminal cost with the coercivity data of the growth assumption.
// Built-in Lagrangians decompose as macro(t,x) + V_omega(y) + running(u);
// the decomposition keeps the cell problem separable and satisfies the
// boundedness/continuity assumptions by construction.
struct LagrangianSpec {
    std::function<double(const Vec&)> running_cost;  // l(u)
    double beta = 2.0;
    std::function<double(double, const Vec&)> macro_term;  // (t, x)
    bool has_medium = false;
    env::EnvironmentHandle medium;

    std::function<double(const Vec&)> l_star;  // coercive lower envelope L_*
    std::function<double(double)> l_upper;     // R -> sup |L| over |u| <= R
    double lambda = 1.0;
    std::function<Vec(const Vec&)> theta;       // subgradient-type map (may be null)
    std::function<double(double)> lip_l_u;      // R -> Lipschitz in u on U^R
    double lip_l_t = 0.0;                       // Lipschitz in t
    std::function<double(double)> modulus_x;    // macro-x modulus
    std::function<double(double)> modulus_joint;  // joint (x, y) modulus
    std::function<double(const Vec&)> terminal_cost;  // psi
    std::function<double(double)> modulus_psi;
    double psi_bound = 0.0;  // sup |psi|
};

enum class RunningCostKind { quadratic, power_over_beta, power };
enum class MacroKind { zero, txslope };
enum class TerminalKind { zero, abs_clip };

struct BuiltinModelParams {
    int dim = 1;
    DynamicsKind dynamics = DynamicsKind::calculus_of_variations;
    double speed_bound = 2.0;
    RunningCostKind cost = RunningCostKind::quadratic;
    double beta = 2.0;
    MacroKind macro = MacroKind::zero;
    double macro_coeff = 0.1;
    double macro_clip = 2.0;
    TerminalKind terminal = TerminalKind::zero;
    double terminal_scale = 1.0;
    double terminal_cap = 2.0;
    double lambda = 1.0;
    double t_horizon = 1.0;  // reference horizon entering macro bounds
};

struct ModelSpec {
    DynamicsSpec dynamics;
    LagrangianSpec lagrangian;
    BuiltinModelParams params;
    std::string name = "model";

    int dim() const { return dynamics.dim; }
    std::string describe() const;
    std::string hash() const;  // hex fnv-1a of describe()
};

ModelSpec make_model(const BuiltinModelParams& p,
                     std::optional<env::EnvironmentHandle> medium = std::nullopt);

// --- operations -----------------------------------------------------------

Vec eval_f(const DynamicsSpec& d, const Vec& x, const Vec& u);

// Solve f(x0, u') = v locally around the seed control u. Throws DomainError
// when v falls outside the declared inversion ball, ModelContractError when
// the damped Newton iteration cannot reach residual 1e-10.
Vec invert_dynamics(const DynamicsSpec& d, const Vec& x0, const Vec& u, const Vec& v);

Vec zero_control(const DynamicsSpec& d, const Vec& x);

// Control realizing f(x, u) = delta * v_unit.
Vec direction_control(const DynamicsSpec& d, const Vec& x, const Vec& v_unit);

double eval_L(const LagrangianSpec& l, double t, const Vec& x, const Vec& y, const Vec& u);

// Smallest radius on a geometric ladder beyond which the coercivity margin
// dominates the repair-cost budget for cost-rate bound W. `horizon` bounds
// the time window the budget is accumulated over.
double truncation_radius(const ModelSpec& m, double W, double horizon = 1.0);

struct SamplePlan {
    Box x_box;
    double u_radius = 2.0;
    int n_x = 5;
    int n_u = 7;
    int n_pairs = 200;
    double t_max = 1.0;
    std::uint64_t seed = 1;
};

struct AssumptionEntry {
    int id = 0;
    std::string name;
    bool pass = true;
    double worst_violation = 0.0;
    std::string where;
};

struct AssumptionReport {
    std::vector<AssumptionEntry> entries;  // exactly eight
    bool all_pass() const;
    std::string summary() const;
};

AssumptionReport check_assumptions(const ModelSpec& m, const SamplePlan& plan);

// Uniform control grid of the given radius. n_per_axis <= 0 selects the
// lattice-aligned grid: controls at multiples of `quantum`, which makes
// f = u dynamics step between lattice cells exactly.
std::vector<Vec> control_grid(int dim, double radius, int n_per_axis, double quantum);

}  // namespace homlab::model
