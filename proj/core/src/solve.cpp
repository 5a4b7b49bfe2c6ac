#include "homlab/solve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "homlab/errors.hpp"
#include "homlab/parallel.hpp"

namespace homlab::solve {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double effective_dt(const GridSpec& g) {
    const double span = g.t_end - g.t_start;
    const int n = std::max(1, static_cast<int>(std::llround(span / g.dt)));
    return span / n;
}

}  // namespace

void GridSpec::validate(const model::ModelSpec& m) const {
    if (!(t_end > t_start)) throw ConfigError("grid: t_end must exceed t_start");
    if (!(dt > 0.0) || !(dx > 0.0)) throw ConfigError("grid: dt and dx must be positive");
    if (space_box.dim() != m.dim())
        throw ConfigError("grid: space box dimension mismatch");
    for (int a = 0; a < space_box.dim(); ++a)
        if (!(space_box.hi[a] > space_box.lo[a]))
            throw ConfigError("grid: empty space box");
    const double fmax = m.dynamics.f_star(control_radius);
    if (dt > dx / fmax * (1.0 + 1e-9))
        throw ConfigError("grid: dt exceeds dx / f^*(K); feet leave neighbor cells");
}

int GridSpec::time_slices() const {
    const double span = t_end - t_start;
    return std::max(1, static_cast<int>(std::llround(span / dt))) + 1;
}

double GridSpec::time_at(int i) const { return t_start + effective_dt(*this) * i; }

int GridSpec::nodes_per_axis(int axis) const {
    return static_cast<int>(std::floor((space_box.hi[axis] - space_box.lo[axis]) / dx +
                                       1e-9)) +
           1;
}

std::size_t GridSpec::nodes_per_slice() const {
    std::size_t n = 1;
    for (int a = 0; a < space_box.dim(); ++a)
        n *= static_cast<std::size_t>(nodes_per_axis(a));
    return n;
}

Vec GridSpec::node(std::size_t flat, int dim) const {
    Vec x = Vec::zero(dim);
    if (dim == 1) {
        x[0] = space_box.lo[0] + dx * static_cast<double>(flat);
    } else {
        const std::size_t n1 = static_cast<std::size_t>(nodes_per_axis(1));
        x[0] = space_box.lo[0] + dx * static_cast<double>(flat / n1);
        x[1] = space_box.lo[1] + dx * static_cast<double>(flat % n1);
    }
    return x;
}

double ValueField::interp_slice(int slice, const Vec& x, bool* clamped) const {
    const auto& v = values[static_cast<std::size_t>(slice)];
    bool clip = false;
    double s[2] = {0.0, 0.0};
    int base[2] = {0, 0};
    double frac[2] = {0.0, 0.0};
    int n_axis[2] = {1, 1};
    for (int a = 0; a < dim; ++a) {
        n_axis[a] = grid.nodes_per_axis(a);
        s[a] = (x[a] - grid.space_box.lo[a]) / grid.dx;
        if (s[a] < 0.0 || s[a] > n_axis[a] - 1) clip = true;
        s[a] = std::clamp(s[a], 0.0, static_cast<double>(n_axis[a] - 1));
        base[a] = std::min(static_cast<int>(s[a]), std::max(0, n_axis[a] - 2));
        frac[a] = n_axis[a] == 1 ? 0.0 : s[a] - base[a];
        if (frac[a] == 1.0 && base[a] + 1 <= n_axis[a] - 1) {  // exact node hit
            ++base[a];
            frac[a] = 0.0;
        }
    }
    if (clamped) *clamped = clip;
    if (dim == 1) {
        const double a0 = v[static_cast<std::size_t>(base[0])];
        const double a1 = v[static_cast<std::size_t>(std::min(base[0] + 1, n_axis[0] - 1))];
        return a0 + frac[0] * (a1 - a0);
    }
    const std::size_t n1 = static_cast<std::size_t>(n_axis[1]);
    auto at = [&](int i, int j) {
        i = std::min(i, n_axis[0] - 1);
        j = std::min(j, n_axis[1] - 1);
        return v[static_cast<std::size_t>(i) * n1 + static_cast<std::size_t>(j)];
    };
    const double v00 = at(base[0], base[1]);
    const double v01 = at(base[0], base[1] + 1);
    const double v10 = at(base[0] + 1, base[1]);
    const double v11 = at(base[0] + 1, base[1] + 1);
    return (1 - frac[0]) * ((1 - frac[1]) * v00 + frac[1] * v01) +
           frac[0] * ((1 - frac[1]) * v10 + frac[1] * v11);
}

double ValueField::sample(double t, const Vec& x) const {
    const double dt = effective_dt(grid);
    double s = (t - grid.t_start) / dt;
    const int last = static_cast<int>(values.size()) - 1;
    s = std::clamp(s, 0.0, static_cast<double>(last));
    const int i = std::min(static_cast<int>(s), std::max(0, last - 1));
    const double f = last == 0 ? 0.0 : s - i;
    const double a = interp_slice(i, x);
    const double b = interp_slice(std::min(i + 1, last), x);
    return a + f * (b - a);
}

namespace {

// Shared backward sweep. stage_cost(slice, node, x, iu) returns the cost of
// taking control iu over one step (or +inf to skip); velocity(x, iu) gives
// the transported foot direction. Feet beyond the box are clamped and
// penalized at the worst running-cost rate so boundary artifacts stay local.
struct SweepCallbacks {
    std::function<double(int, std::size_t, const Vec&, std::size_t)> stage_cost;
    std::function<Vec(const Vec&, std::size_t)> velocity;
};

ValueField backward_sweep(const model::ModelSpec& m, const GridSpec& grid,
                          FieldKind kind, const std::vector<Vec>& controls,
                          const SweepCallbacks& cb, int workers) {
    const int dim = m.dim();
    ValueField vf;
    vf.grid = grid;
    vf.dim = dim;
    vf.kind = kind;
    vf.model_hash = m.hash();

    const int slices = grid.time_slices();
    const double dt = effective_dt(grid);
    const std::size_t nodes = grid.nodes_per_slice();
    vf.values.assign(static_cast<std::size_t>(slices), std::vector<double>(nodes, 0.0));
    vf.policy.assign(static_cast<std::size_t>(slices),
                     std::vector<Vec>(nodes, Vec::zero(dim)));

    // terminal slice carries psi exactly
    auto& top = vf.values.back();
    for (std::size_t j = 0; j < nodes; ++j)
        top[j] = m.lagrangian.terminal_cost(grid.node(j, dim));

    const double penalty_rate = m.lagrangian.l_upper(grid.control_radius);
    std::vector<long> clamp_counts(static_cast<std::size_t>(slices), 0);

    for (int i = slices - 2; i >= 0; --i) {
        const auto& next = vf.values[static_cast<std::size_t>(i + 1)];
        auto& cur = vf.values[static_cast<std::size_t>(i)];
        auto& pol = vf.policy[static_cast<std::size_t>(i)];
        long clamped_here = 0;

        std::vector<long> clamp_per_node(nodes, 0);
        parallel_for(workers, static_cast<std::int64_t>(nodes), [&](std::int64_t jj) {
            const std::size_t j = static_cast<std::size_t>(jj);
            const Vec x = grid.node(j, dim);
            double best = kInf;
            std::size_t best_u = 0;
            bool best_clamped = false;
            for (std::size_t iu = 0; iu < controls.size(); ++iu) {
                const double stage = cb.stage_cost(i, j, x, iu);
                if (!std::isfinite(stage)) continue;
                const Vec foot = x + cb.velocity(x, iu) * dt;
                bool clipped = false;
                double tail;
                {
                    // local multilinear interp against `next`
                    double s[2] = {0.0, 0.0};
                    int base[2] = {0, 0};
                    double frac[2] = {0.0, 0.0};
                    int n_axis[2] = {1, 1};
                    for (int a = 0; a < dim; ++a) {
                        n_axis[a] = grid.nodes_per_axis(a);
                        s[a] = (foot[a] - grid.space_box.lo[a]) / grid.dx;
                        if (s[a] < -1e-12 || s[a] > n_axis[a] - 1 + 1e-12) clipped = true;
                        s[a] = std::clamp(s[a], 0.0, static_cast<double>(n_axis[a] - 1));
                        base[a] = std::min(static_cast<int>(s[a]), std::max(0, n_axis[a] - 2));
                        frac[a] = n_axis[a] == 1 ? 0.0 : s[a] - base[a];
                        if (frac[a] == 1.0 && base[a] + 1 <= n_axis[a] - 1) {
                            ++base[a];
                            frac[a] = 0.0;
                        }
                    }
                    if (dim == 1) {
                        const double a0 = next[static_cast<std::size_t>(base[0])];
                        const double a1 =
                            next[static_cast<std::size_t>(std::min(base[0] + 1, n_axis[0] - 1))];
                        tail = a0 + frac[0] * (a1 - a0);
                    } else {
                        const std::size_t n1 = static_cast<std::size_t>(n_axis[1]);
                        auto at = [&](int ii, int jj2) {
                            ii = std::min(ii, n_axis[0] - 1);
                            jj2 = std::min(jj2, n_axis[1] - 1);
                            return next[static_cast<std::size_t>(ii) * n1 +
                                        static_cast<std::size_t>(jj2)];
                        };
                        tail = (1 - frac[0]) * ((1 - frac[1]) * at(base[0], base[1]) +
                                                frac[1] * at(base[0], base[1] + 1)) +
                               frac[0] * ((1 - frac[1]) * at(base[0] + 1, base[1]) +
                                          frac[1] * at(base[0] + 1, base[1] + 1));
                    }
                }
                double cand = stage + tail;
                if (clipped) cand += penalty_rate * dt;
                if (cand < best) {
                    best = cand;
                    best_u = iu;
                    best_clamped = clipped;
                }
            }
            if (!std::isfinite(best))
                throw NumericalError("solver: node with no admissible control at slice " +
                                     std::to_string(i));
            cur[j] = best;
            pol[j] = controls[best_u];
            if (best_clamped) clamp_per_node[j] = 1;
        });
        for (long c : clamp_per_node) clamped_here += c;
        clamp_counts[static_cast<std::size_t>(i)] = clamped_here;
    }
    for (long c : clamp_counts) vf.clamped_feet += c;

    // discrete space-Lipschitz diagnostic vs the assembled continuity bound
    double quot = 0.0;
    for (int i = 0; i < slices; ++i) {
        const auto& v = vf.values[static_cast<std::size_t>(i)];
        if (dim == 1) {
            for (std::size_t j = 0; j + 1 < v.size(); ++j)
                quot = std::max(quot, std::abs(v[j + 1] - v[j]) / grid.dx);
        } else {
            const std::size_t n1 = static_cast<std::size_t>(grid.nodes_per_axis(1));
            for (std::size_t j = 0; j + 1 < v.size(); ++j) {
                if ((j + 1) % n1 != 0)
                    quot = std::max(quot, std::abs(v[j + 1] - v[j]) / grid.dx);
                if (j + n1 < v.size())
                    quot = std::max(quot, std::abs(v[j + n1] - v[j]) / grid.dx);
            }
        }
    }
    vf.lip_quotient = quot;
    const auto& dyn = m.dynamics;
    const auto& lag = m.lagrangian;
    const double T = grid.t_end - grid.t_start;
    vf.lip_bound = lag.l_upper(dyn.control_bound_M) / dyn.delta +
                   T * lag.lip_l_t / dyn.delta +
                   T * lag.l_upper(grid.control_radius) / dyn.delta +
                   lag.modulus_psi(grid.dx / dyn.delta) / grid.dx;
    return vf;
}

}  // namespace

ValueField solve_fine(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                      double eps, const GridSpec& grid, int workers) {
    grid.validate(m);
    if (!(eps > 0.0)) throw ConfigError("solve_fine: eps must be positive");
    if (grid.dx > eps / 4.0 * (1.0 + 1e-9))
        throw ConfigError("solve_fine: dx must resolve the fast scale (dx <= eps/4)");
    const int dim = m.dim();
    const std::vector<Vec> controls =
        model::control_grid(dim, grid.control_radius, grid.control_grid_n, grid.dx / grid.dt);
    const double dt = effective_dt(grid);

    SweepCallbacks cb;
    cb.stage_cost = [&m, &omega, eps, dt, &controls, &grid](int slice, std::size_t,
                                                            const Vec& x, std::size_t iu) {
        const double t = grid.time_at(slice);
        double v = m.lagrangian.macro_term(t, x) + m.lagrangian.running_cost(controls[iu]);
        if (m.lagrangian.has_medium) v += env::evaluate_potential(omega, x / eps);
        return dt * v;
    };
    cb.velocity = [&m, &controls](const Vec& x, std::size_t iu) {
        return model::eval_f(m.dynamics, x, controls[iu]);
    };
    ValueField vf = backward_sweep(m, grid, FieldKind::fine, controls, cb, workers);
    vf.eps = eps;
    return vf;
}

ValueField solve_macro(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                       double eps, const GridSpec& grid,
                       const cell::CellNumerics& numerics, int workers) {
    grid.validate(m);
    if (!(eps > 0.0)) throw ConfigError("solve_macro: eps must be positive");
    if (grid.control_radius > numerics.control_radius + 1e-12)
        throw ConfigError("solve_macro: macro control radius exceeds the cell control radius");
    const int dim = m.dim();
    const std::vector<Vec> controls =
        model::control_grid(dim, grid.control_radius, grid.control_grid_n, grid.dx / grid.dt);
    const double tau = effective_dt(grid);
    const double b = tau / eps;
    const std::size_t nodes = grid.nodes_per_slice();

    // Frozen cell costs are t-independent up to the additive macro term, so
    // one endpoint-constrained problem per (node, control) pair suffices.
    std::vector<double> pot_part(nodes * controls.size(), kInf);
    parallel_for(workers, static_cast<std::int64_t>(nodes * controls.size()),
                 [&](std::int64_t job) {
                     const std::size_t j = static_cast<std::size_t>(job) / controls.size();
                     const std::size_t iu = static_cast<std::size_t>(job) % controls.size();
                     const Vec x = grid.node(j, dim);
                     cell::CellProblemSpec spec;
                     spec.t0 = 0.0;
                     spec.x0 = x;
                     spec.u_tilde = controls[iu];
                     spec.horizon_b = b;
                     spec.micro_dt = std::min(numerics.micro_dt, b);
                     spec.micro_lattice = numerics.micro_lattice;
                     spec.control_radius = numerics.control_radius;
                     spec.control_grid_n = numerics.control_grid_n;
                     spec.tube_radius = numerics.tube_radius;
                     spec.has_fast_origin = true;
                     spec.fast_origin = x / eps;
                     spec.estimate_tolerance = false;
                     try {
                         const cell::CellResult r = cell::point_to_point_cost(m, omega, spec);
                         pot_part[job] = r.value - b * m.lagrangian.macro_term(0.0, x);
                     } catch (const InfeasibleError&) {
                         // node skipped in the sweep
                     }
                 });

    SweepCallbacks cb;
    cb.stage_cost = [&m, eps, tau, &pot_part, &controls, &grid](int slice, std::size_t j,
                                                                const Vec& x, std::size_t iu) {
        const double pp = pot_part[j * controls.size() + iu];
        if (!std::isfinite(pp)) return kInf;
        return tau * m.lagrangian.macro_term(grid.time_at(slice), x) + eps * pp;
    };
    cb.velocity = [&m, &controls](const Vec& x, std::size_t iu) {
        return model::eval_f(m.dynamics, x, controls[iu]);
    };
    ValueField vf = backward_sweep(m, grid, FieldKind::macro, controls, cb, workers);
    vf.eps = eps;
    return vf;
}

ValueField solve_homogenized(const model::ModelSpec& m,
                             const cell::EffectiveLagrangianTable& table,
                             const GridSpec& grid, int workers) {
    grid.validate(m);
    const int dim = m.dim();
    const std::vector<Vec> controls =
        model::control_grid(dim, grid.control_radius, grid.control_grid_n, grid.dx / grid.dt);
    // hull pre-check at the grid extremes
    for (const Vec& corner : {grid.space_box.lo, grid.space_box.hi})
        for (const Vec& u : {controls.front(), controls.back()})
            for (double t : {grid.t_start, grid.t_end})
                if (!table.covers(t, corner, u))
                    throw DomainError(
                        "solve_homogenized: grid demands values outside the table hull");

    const double dt = effective_dt(grid);
    SweepCallbacks cb;
    cb.stage_cost = [&m, &table, dt, &controls, &grid](int slice, std::size_t, const Vec& x,
                                                       std::size_t iu) {
        const double lv = table.interpolate(grid.time_at(slice), x, controls[iu]);
        return std::isfinite(lv) ? dt * lv : kInf;
    };
    cb.velocity = [&m, &controls](const Vec& x, std::size_t iu) {
        return model::eval_f(m.dynamics, x, controls[iu]);
    };
    return backward_sweep(m, grid, FieldKind::homogenized, controls, cb, workers);
}

// --- step controls ----------------------------------------------------------

double StepControl::sup_norm() const {
    double s = 0.0;
    for (const Vec& u : values) s = std::max(s, u.norm());
    return s;
}

std::vector<Vec> trajectory_vertices(const model::ModelSpec& m, const Vec& x0,
                                     const StepControl& u) {
    std::vector<Vec> xs;
    xs.reserve(u.values.size() + 1);
    xs.push_back(x0);
    for (int i = 0; i < u.intervals(); ++i) {
        const double h = u.breakpoints[static_cast<std::size_t>(i) + 1] -
                         u.breakpoints[static_cast<std::size_t>(i)];
        const Vec v = model::eval_f(m.dynamics, xs.back(), u.values[static_cast<std::size_t>(i)]);
        xs.push_back(xs.back() + v * h);
    }
    return xs;
}

namespace {

// Control realized at time s inside interval i: the velocity is pinned, so
// for position-dependent dynamics the control is the inverse image along the
// segment. Built-in dynamics are position independent and return u_i as is.
Vec realized_control(const model::ModelSpec& m, const Vec& x_here, const Vec& u_i,
                     const Vec& v_i) {
    if (m.dynamics.kind != model::DynamicsKind::user_table) return u_i;
    return model::invert_dynamics(m.dynamics, x_here, u_i, v_i);
}

}  // namespace

double evaluate_cost(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                     double eps, double t, const Vec& x, const StepControl& u,
                     bool include_terminal, double quad_substep) {
    if (u.intervals() == 0) return include_terminal ? m.lagrangian.terminal_cost(x) : 0.0;
    if (std::abs(u.t_begin() - t) > 1e-9)
        throw ConfigError("evaluate_cost: control does not start at t");
    double acc = 0.0;
    Vec xi = x;
    for (int i = 0; i < u.intervals(); ++i) {
        const double a = u.breakpoints[static_cast<std::size_t>(i)];
        const double bnd = u.breakpoints[static_cast<std::size_t>(i) + 1];
        const double len = bnd - a;
        if (len <= 0.0) continue;
        const Vec ui = u.values[static_cast<std::size_t>(i)];
        const Vec vi = model::eval_f(m.dynamics, xi, ui);
        auto integrand = [&](double s) {
            const Vec xs = xi + vi * (s - a);
            const Vec ys = eps > 0.0 ? xs / eps : xs;
            const Vec us = realized_control(m, xs, ui, vi);
            double v = m.lagrangian.macro_term(s, xs) + m.lagrangian.running_cost(us);
            if (m.lagrangian.has_medium) v += env::evaluate_potential(omega, ys);
            return v;
        };
        const int sub = std::max(1, static_cast<int>(std::ceil(len / quad_substep)));
        const double h = len / sub;
        for (int k = 0; k < sub; ++k) {
            const double s0 = a + k * h;
            const double k1 = integrand(s0);
            const double k2 = integrand(s0 + 0.5 * h);
            const double k4 = integrand(s0 + h);
            acc += h / 6.0 * (k1 + 4.0 * k2 + k4);
        }
        xi = xi + vi * len;
    }
    if (include_terminal) acc += m.lagrangian.terminal_cost(xi);
    return acc;
}

StepControl approximate_by_step_control(const model::ModelSpec&, const StepControl& u,
                                        double) {
    return u;  // already a step control; the approximation is the identity
}

StepControl approximate_by_step_control(const model::ModelSpec& m,
                                        const std::function<Vec(double)>& u, double t0,
                                        double t1, double kappa) {
    if (!(t1 > t0)) throw ConfigError("approximate_by_step_control: empty window");
    if (!(kappa > 0.0)) throw ConfigError("approximate_by_step_control: kappa must be > 0");
    const double osc_target = std::min(kappa, m.lagrangian.lambda);

    int n = 8;
    while (n < 65536) {
        double worst = 0.0;
        for (int i = 0; i < n; ++i) {
            const double a = t0 + (t1 - t0) * i / n;
            const double b = t0 + (t1 - t0) * (i + 1.0) / n;
            Vec lo = u(a), hi = u(a);
            for (int k = 1; k <= 8; ++k) {
                const Vec s = u(a + (b - a) * k / 8.0);
                for (int c = 0; c < s.dim; ++c) {
                    lo[c] = std::min(lo[c], s[c]);
                    hi[c] = std::max(hi[c], s[c]);
                }
            }
            worst = std::max(worst, (hi - lo).norm());
        }
        if (worst <= osc_target) break;
        n *= 2;
    }

    // integrate the true trajectory, then pin each interval's velocity to the
    // mean velocity so the step control interpolates it at the breakpoints
    const int sub = 16;
    std::vector<Vec> vertex(static_cast<std::size_t>(n) + 1);
    Vec x = Vec::zero(m.dim());
    vertex[0] = x;
    for (int i = 0; i < n; ++i) {
        const double a = t0 + (t1 - t0) * i / n;
        const double h = (t1 - t0) / n / sub;
        for (int k = 0; k < sub; ++k) {
            const double s = a + k * h;
            const Vec k1 = model::eval_f(m.dynamics, x, u(s));
            const Vec k2 = model::eval_f(m.dynamics, x + k1 * (0.5 * h), u(s + 0.5 * h));
            const Vec k3 = model::eval_f(m.dynamics, x + k2 * (0.5 * h), u(s + 0.5 * h));
            const Vec k4 = model::eval_f(m.dynamics, x + k3 * h, u(s + h));
            x = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        vertex[static_cast<std::size_t>(i) + 1] = x;
    }

    StepControl out;
    out.breakpoints.resize(static_cast<std::size_t>(n) + 1);
    out.values.resize(static_cast<std::size_t>(n));
    for (int i = 0; i <= n; ++i)
        out.breakpoints[static_cast<std::size_t>(i)] = t0 + (t1 - t0) * i / n;
    for (int i = 0; i < n; ++i) {
        const double h = (t1 - t0) / n;
        const Vec v = (vertex[static_cast<std::size_t>(i) + 1] -
                       vertex[static_cast<std::size_t>(i)]) /
                      h;
        const double mid = out.breakpoints[static_cast<std::size_t>(i)] + 0.5 * h;
        out.values[static_cast<std::size_t>(i)] =
            model::invert_dynamics(m.dynamics, vertex[static_cast<std::size_t>(i)], u(mid), v);
    }
    return out;
}

// --- bounded-control repair -------------------------------------------------

namespace {

double ladder_radius_for(const model::ModelSpec& m, double gamma_needed, double floor_R) {
    const Vec e1 = [&] {
        Vec v = Vec::zero(m.dim());
        v[0] = 1.0;
        return v;
    }();
    double R = std::max(1.0, floor_R);
    while (R <= 1e9) {
        const double g =
            m.lagrangian.l_star(e1 * (R - m.lagrangian.lambda)) / m.dynamics.f_star(R);
        if (g >= gamma_needed) return R;
        R *= 2.0;
    }
    return 1e9;
}

}  // namespace

RepairOutcome repair_control(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                             double eps, double t0, const Vec& x0, const StepControl& u_in,
                             const RepairParams& params) {
    if (u_in.intervals() == 0) return {u_in, 0, 0.0, 0.0, 0.0, 0.0};
    if (std::abs(u_in.t_begin() - t0) > 1e-9)
        throw ConfigError("repair_control: control does not start at t0");
    const double lambda = params.lambda > 0.0 ? params.lambda : m.lagrangian.lambda;
    const double R = params.R;
    if (!(R > 0.0)) throw ConfigError("repair_control: target bound R must be positive");
    if (R < m.dynamics.control_bound_M)
        throw ThresholdError("repair_control: R below the direction-control bound M",
                             m.dynamics.control_bound_M);

    const double h = u_in.t_end() - u_in.t_begin();
    const double cost0 = evaluate_cost(m, omega, eps, t0, x0, u_in, false);
    const double W = std::max(cost0 / h, m.lagrangian.l_star(Vec::zero(m.dim())));

    // slow/fast threshold: smallest N with L_*(N) >= 2W
    double N = params.N;
    if (!(N > 0.0)) {
        const Vec e1 = [&] {
            Vec v = Vec::zero(m.dim());
            v[0] = 1.0;
            return v;
        }();
        double lo = 0.0, hi = 1e6;
        if (m.lagrangian.l_star(e1 * hi) < 2.0 * W)
            throw ModelContractError("repair_control: running cost never dominates 2W");
        for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (lo + hi);
            (m.lagrangian.l_star(e1 * mid) < 2.0 * W ? lo : hi) = mid;
        }
        N = hi;
    }

    RepairOutcome out;
    out.control = u_in;
    out.measured_W = W;
    out.cost_before = cost0;
    double cost_cur = cost0;

    const double gamma_for_beta = 2.0 * W / (std::max(params.beta, 0.05) * m.dynamics.delta);

    // count offending intervals up front; the loop must not exceed it
    int offending0 = 0;
    for (const Vec& v : u_in.values)
        if (v.norm() >= R) ++offending0;

    for (int pass = 0; pass < std::max(1, offending0); ++pass) {
        StepControl& u = out.control;
        const std::vector<Vec> xs = trajectory_vertices(m, x0, u);

        // oscillation within intervals is zero for position-independent
        // dynamics; for tables, sample the realized control
        int j = -1;
        for (int i = 0; i < u.intervals(); ++i)
            if (u.values[static_cast<std::size_t>(i)].norm() >= R) j = i;
        if (j < 0) break;  // bounded already

        const double Tj = u.breakpoints[static_cast<std::size_t>(j) + 1] -
                          u.breakpoints[static_cast<std::size_t>(j)];
        const Vec vj = model::eval_f(m.dynamics, xs[static_cast<std::size_t>(j)],
                                     u.values[static_cast<std::size_t>(j)]);
        const double vj_norm = vj.norm();

        const double min_on_j = u.values[static_cast<std::size_t>(j)].norm();
        if (min_on_j <= N)
            throw ThresholdError(
                "repair_control: offending interval dips below the slow threshold N; "
                "required R about " +
                    std::to_string(N + lambda),
                N + lambda);

        double T_slow = 0.0;
        for (int i = 0; i < u.intervals(); ++i) {
            if (i == j) continue;
            if (u.values[static_cast<std::size_t>(i)].norm() < N)
                T_slow += u.breakpoints[static_cast<std::size_t>(i) + 1] -
                          u.breakpoints[static_cast<std::size_t>(i)];
        }
        if (T_slow <= 1e-12)
            throw ThresholdError("repair_control: no slow time available to absorb the "
                                 "time change; required R about " +
                                     std::to_string(ladder_radius_for(m, gamma_for_beta, R)),
                                 ladder_radius_for(m, gamma_for_beta, R));

        const double delta = m.dynamics.delta;
        const double beta = Tj * (vj_norm - delta) / (delta * T_slow);
        out.last_beta = beta;
        if (!(beta < 1.0) || std::abs(beta) > params.beta) {
            const double req = ladder_radius_for(m, gamma_for_beta, R);
            throw ThresholdError(
                "repair_control: time-change rate " + std::to_string(beta) +
                    " out of range; required R about " + std::to_string(req),
                req);
        }

        // rebuild: slow intervals shrink by (1 - beta) at velocity v/(1-beta),
        // the offending interval becomes a delta-speed traversal of the same
        // displacement, everything else is untouched
        StepControl nu;
        nu.breakpoints.push_back(u.breakpoints.front());
        double clock = u.breakpoints.front();
        Vec xv = x0;
        for (int i = 0; i < u.intervals(); ++i) {
            const double len = u.breakpoints[static_cast<std::size_t>(i) + 1] -
                               u.breakpoints[static_cast<std::size_t>(i)];
            if (len <= 0.0) continue;
            const Vec ui = u.values[static_cast<std::size_t>(i)];
            const Vec vi = model::eval_f(m.dynamics, xs[static_cast<std::size_t>(i)], ui);
            if (i == j) {
                if (vj_norm > 1e-12) {
                    const double nlen = len * vj_norm / delta;
                    const Vec unew =
                        model::direction_control(m.dynamics, xv, vj / vj_norm);
                    clock += nlen;
                    nu.values.push_back(unew);
                    nu.breakpoints.push_back(clock);
                    xv = xv + vj * len;  // same displacement, slower clock
                }
                continue;  // zero-velocity spikes are simply excised
            }
            if (ui.norm() < N) {
                const double nlen = len * (1.0 - beta);
                if (nlen <= 0.0)
                    throw ThresholdError("repair_control: time change exhausted an interval",
                                         2.0 * R);
                const Vec vnew = vi / (1.0 - beta);
                const Vec unew = model::invert_dynamics(m.dynamics, xv, ui, vnew);
                if (unew.norm() > R)
                    throw ThresholdError(
                        "repair_control: speed-up pushes a slow control past R; required R "
                        "about " +
                            std::to_string(ladder_radius_for(m, gamma_for_beta, R)),
                        ladder_radius_for(m, gamma_for_beta, R));
                clock += nlen;
                nu.values.push_back(unew);
                nu.breakpoints.push_back(clock);
                xv = xv + vi * len;
            } else {
                clock += len;
                nu.values.push_back(ui);
                nu.breakpoints.push_back(clock);
                xv = xv + vi * len;
            }
        }
        // the construction preserves total duration and endpoint exactly
        if (std::abs(nu.t_end() - u.t_end()) > 1e-7 * std::max(1.0, h))
            throw NumericalError("repair_control: time budget drifted");
        nu.breakpoints.back() = u.t_end();

        const double cost_new = evaluate_cost(m, omega, eps, t0, x0, nu, false);
        if (cost_new > cost_cur + 1e-9) {
            const double req = ladder_radius_for(
                m, gamma_for_beta + (cost_new - cost_cur) / std::max(Tj * vj_norm, 1e-9), R);
            throw ThresholdError(
                "repair_control: pass would increase the cost; required R about " +
                    std::to_string(req),
                req);
        }
        cost_cur = cost_new;
        out.control = nu;
        ++out.iterations;
    }

    out.cost_after = cost_cur;
    return out;
}

}  // namespace homlab::solve
