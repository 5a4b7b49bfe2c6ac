#include "homlab/cell.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "homlab/errors.hpp"
#include "homlab/parallel.hpp"

namespace homlab::cell {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct EngineInput {
    const model::ModelSpec* m = nullptr;
    const env::EnvironmentHandle* omega = nullptr;
    double t0 = 0.0;
    Vec x0;
    Vec fast_start;
    Vec u_tilde;
    double duration = 0.0;
    double dt = 0.1;
    double dy = 0.025;
    double control_radius = 4.0;
    int control_grid_n = 0;
    double tube_radius = 0.0;
    bool nonstationary = false;
    double epsilon = 0.0;
    bool want_path = false;
    bool soft_endpoint = false;
    double soft_penalty_coeff = 100.0;
};

struct StageWindow {
    IVec lo, hi;  // inclusive cell bounds per axis
    bool empty = false;
    std::size_t count(int dim) const {
        std::size_t c = 1;
        for (int a = 0; a < dim; ++a) {
            if (hi[a] < lo[a]) return 0;
            c *= static_cast<std::size_t>(hi[a] - lo[a] + 1);
        }
        return c;
    }
};

double auto_tube_radius(const EngineInput& in) {
    const double env_scale = in.omega->spec.cell_size;
    const double step = in.dt * in.m->dynamics.f_star(in.control_radius);
    return std::max(4.0 * env_scale, 16.0 * in.dy) + step;
}

// Backward dynamic programming on the fast-variable lattice. States are
// global cell indices; per-stage windows intersect the forward reachability
// cone, the backward cone anchored at the target, and the tube around the
// straight-line transport.
CellResult run_dp(const EngineInput& in) {
    const int dim = in.x0.dim;
    const auto& dyn = in.m->dynamics;
    const auto& lag = in.m->lagrangian;

    const int n_steps = std::max(1, static_cast<int>(std::llround(in.duration / in.dt)));
    const double dt = in.duration / n_steps;
    const double dy = in.dy;

    const Vec v_frozen = model::eval_f(dyn, in.x0, in.u_tilde);
    if (v_frozen.norm() > dyn.f_star(in.control_radius) + 1e-12)
        throw InfeasibleError(
            "cell: required mean velocity exceeds the reachable speed at the "
            "control radius");

    const IVec start = round_to_lattice(in.fast_start, dy);
    const Vec target_true = in.fast_start + v_frozen * in.duration;
    const IVec target = round_to_lattice(target_true, dy);
    const double residual = (target_true - lattice_point(target, dy)).norm();

    const std::vector<Vec> controls =
        model::control_grid(dim, in.control_radius, in.control_grid_n, dy / dt);
    const std::size_t nu = controls.size();

    // Per-control displacement in cells (position independent unless the
    // dynamics table depends on x in the non-stationary run).
    const bool steps_uniform =
        !(in.nonstationary && dyn.kind == model::DynamicsKind::user_table);
    std::vector<IVec> steps(nu, IVec::zero(dim));
    IVec step_min = IVec::zero(dim), step_max = IVec::zero(dim);
    std::vector<double> run_cost(nu, 0.0);
    for (std::size_t i = 0; i < nu; ++i) {
        steps[i] = round_to_lattice(model::eval_f(dyn, in.x0, controls[i]) * dt, dy);
        run_cost[i] = lag.running_cost(controls[i]);
        for (int a = 0; a < dim; ++a) {
            step_min[a] = i == 0 ? steps[i][a] : std::min(step_min[a], steps[i][a]);
            step_max[a] = i == 0 ? steps[i][a] : std::max(step_max[a], steps[i][a]);
        }
    }
    if (!steps_uniform) {
        // conservative cone bounds from the speed cap
        const std::int64_t most =
            static_cast<std::int64_t>(std::ceil(dyn.f_star(in.control_radius) * dt / dy));
        for (int a = 0; a < dim; ++a) {
            step_min[a] = -most;
            step_max[a] = most;
        }
    }

    const double tube = in.tube_radius > 0.0 ? in.tube_radius : auto_tube_radius(in);
    const std::int64_t tube_cells =
        static_cast<std::int64_t>(std::ceil(tube / dy)) + 1;

    auto window_at = [&](int k) {
        StageWindow w;
        w.lo = IVec::zero(dim);
        w.hi = IVec::zero(dim);
        for (int a = 0; a < dim; ++a) {
            const double line =
                start[a] + (static_cast<double>(target[a] - start[a]) * k) / n_steps;
            std::int64_t lo = static_cast<std::int64_t>(std::floor(line)) - tube_cells;
            std::int64_t hi = static_cast<std::int64_t>(std::ceil(line)) + tube_cells;
            lo = std::max(lo, start[a] + k * step_min[a]);
            hi = std::min(hi, start[a] + k * step_max[a]);
            lo = std::max(lo, target[a] - (n_steps - k) * step_max[a]);
            hi = std::min(hi, target[a] - (n_steps - k) * step_min[a]);
            w.lo[a] = lo;
            w.hi[a] = hi;
            if (hi < lo) w.empty = true;
        }
        return w;
    };

    // Global bounding box for the potential cache.
    IVec glo = IVec::zero(dim), ghi = IVec::zero(dim);
    for (int a = 0; a < dim; ++a) {
        glo[a] = std::min(start[a], target[a]) - tube_cells - 1;
        ghi[a] = std::max(start[a], target[a]) + tube_cells + 1;
    }
    std::size_t gcount = 1;
    for (int a = 0; a < dim; ++a)
        gcount *= static_cast<std::size_t>(ghi[a] - glo[a] + 1);
    if (gcount > (std::size_t)80'000'000)
        throw NumericalError("cell: fast-variable lattice too large (" +
                             std::to_string(gcount) + " cells)");
    const std::int64_t gw1 = dim == 2 ? (ghi[1] - glo[1] + 1) : 1;
    auto gindex = [&](const IVec& j) {
        std::size_t idx = static_cast<std::size_t>(j[0] - glo[0]);
        if (dim == 2) idx = idx * static_cast<std::size_t>(gw1) +
                            static_cast<std::size_t>(j[1] - glo[1]);
        return idx;
    };

    std::vector<double> pot(gcount, 0.0);
    if (lag.has_medium) {
        if (dim == 1) {
            for (std::int64_t j = glo[0]; j <= ghi[0]; ++j)
                pot[static_cast<std::size_t>(j - glo[0])] =
                    env::evaluate_potential(*in.omega, Vec(j * dy));
        } else {
            for (std::int64_t j0 = glo[0]; j0 <= ghi[0]; ++j0)
                for (std::int64_t j1 = glo[1]; j1 <= ghi[1]; ++j1)
                    pot[gindex(IVec(j0, j1))] =
                        env::evaluate_potential(*in.omega, Vec(j0 * dy, j1 * dy));
        }
    }

    // value-to-go slabs over stage windows
    std::vector<double> next_val, cur_val;
    std::vector<std::vector<std::uint16_t>> policy;
    if (in.want_path) policy.resize(static_cast<std::size_t>(n_steps));

    StageWindow w_next = window_at(n_steps);
    if (w_next.empty) {
        CellResult r;
        r.feasible = false;
        r.value = kInf;
        r.duration = in.duration;
        r.endpoint_residual = residual;
        return r;
    }
    auto windex = [&](const StageWindow& w, const IVec& j) {
        std::size_t idx = static_cast<std::size_t>(j[0] - w.lo[0]);
        if (dim == 2)
            idx = idx * static_cast<std::size_t>(w.hi[1] - w.lo[1] + 1) +
                  static_cast<std::size_t>(j[1] - w.lo[1]);
        return idx;
    };

    next_val.assign(w_next.count(dim), kInf);
    if (in.soft_endpoint) {
        IVec j = w_next.lo;
        for (;;) {
            const Vec p = lattice_point(j, dy);
            next_val[windex(w_next, j)] = in.soft_penalty_coeff * (p - target_true).norm2();
            int a = dim - 1;
            for (; a >= 0; --a) {
                if (++j[a] <= w_next.hi[a]) break;
                j[a] = w_next.lo[a];
            }
            if (a < 0) break;
        }
    } else {
        bool inside = true;
        for (int a = 0; a < dim; ++a)
            inside = inside && target[a] >= w_next.lo[a] && target[a] <= w_next.hi[a];
        if (inside) next_val[windex(w_next, target)] = 0.0;
    }

    const double macro_frozen = lag.macro_term(in.t0, in.x0);

    for (int k = n_steps - 1; k >= 0; --k) {
        const StageWindow w_cur = window_at(k);
        if (w_cur.empty) {
            CellResult r;
            r.feasible = false;
            r.value = kInf;
            r.duration = in.duration;
            r.endpoint_residual = residual;
            return r;
        }
        cur_val.assign(w_cur.count(dim), kInf);
        if (in.want_path)
            policy[static_cast<std::size_t>(k)].assign(w_cur.count(dim), 0);

        const double t_here = in.nonstationary ? in.t0 + in.epsilon * (k * dt) : in.t0;

        // tight loop for the 1-d frozen case; float arithmetic matches the
        // generic path below operation for operation
        if (dim == 1 && steps_uniform && !in.nonstationary) {
            const std::int64_t nlo = w_next.lo[0], nhi = w_next.hi[0];
            const std::int64_t clo = w_cur.lo[0], chi = w_cur.hi[0];
            for (std::int64_t j1 = clo; j1 <= chi; ++j1) {
                const double pot_here =
                    lag.has_medium ? pot[static_cast<std::size_t>(j1 - glo[0])] : 0.0;
                double best = kInf;
                std::uint16_t best_u = 0;
                for (std::size_t iu = 0; iu < nu; ++iu) {
                    const std::int64_t nxt = j1 + steps[iu][0];
                    if (nxt < nlo || nxt > nhi) continue;
                    const double tail = next_val[static_cast<std::size_t>(nxt - nlo)];
                    if (tail == kInf) continue;
                    const double cand =
                        dt * (macro_frozen + pot_here + run_cost[iu]) + tail;
                    if (cand < best) {
                        best = cand;
                        best_u = static_cast<std::uint16_t>(iu);
                    }
                }
                cur_val[static_cast<std::size_t>(j1 - clo)] = best;
                if (in.want_path)
                    policy[static_cast<std::size_t>(k)][static_cast<std::size_t>(j1 - clo)] =
                        best_u;
            }
            next_val.swap(cur_val);
            w_next = w_cur;
            continue;
        }

        IVec j = w_cur.lo;
        for (;;) {
            const std::size_t ci = windex(w_cur, j);
            const double pot_here = lag.has_medium ? pot[gindex(j)] : 0.0;
            double macro_here = macro_frozen;
            Vec x_here = in.x0;
            if (in.nonstationary) {
                x_here = lattice_point(j, dy) * in.epsilon;
                macro_here = lag.macro_term(t_here, x_here);
            }
            double best = kInf;
            std::uint16_t best_u = 0;
            for (std::size_t iu = 0; iu < nu; ++iu) {
                IVec nxt = j;
                if (steps_uniform) {
                    nxt = j + steps[iu];
                } else {
                    nxt = j + round_to_lattice(
                                  model::eval_f(dyn, x_here, controls[iu]) * dt, dy);
                }
                bool ok = true;
                for (int a = 0; a < dim; ++a)
                    ok = ok && nxt[a] >= w_next.lo[a] && nxt[a] <= w_next.hi[a];
                if (!ok) continue;
                const double tail = next_val[windex(w_next, nxt)];
                if (tail == kInf) continue;
                const double cand = dt * (macro_here + pot_here + run_cost[iu]) + tail;
                if (cand < best) {  // ties keep the lowest control index
                    best = cand;
                    best_u = static_cast<std::uint16_t>(iu);
                }
            }
            cur_val[ci] = best;
            if (in.want_path) policy[static_cast<std::size_t>(k)][ci] = best_u;

            int a = dim - 1;
            for (; a >= 0; --a) {
                if (++j[a] <= w_cur.hi[a]) break;
                j[a] = w_cur.lo[a];
            }
            if (a < 0) break;
        }
        next_val.swap(cur_val);
        w_next = w_cur;
    }

    CellResult r;
    r.duration = in.duration;
    r.endpoint_residual = residual;
    {
        bool inside = true;
        for (int a = 0; a < dim; ++a)
            inside = inside && start[a] >= w_next.lo[a] && start[a] <= w_next.hi[a];
        r.value = inside ? next_val[windex(w_next, start)] : kInf;
    }
    if (!std::isfinite(r.value)) {
        r.feasible = false;
        return r;
    }

    if (in.want_path) {
        // forward reconstruction through the stored policies
        IVec j = start;
        for (int k = 0; k < n_steps; ++k) {
            const StageWindow w = window_at(k);
            const std::uint16_t iu = policy[static_cast<std::size_t>(k)][windex(w, j)];
            r.argmin_path.push_back({k * dt, lattice_point(j, dy), controls[iu]});
            if (steps_uniform) {
                j = j + steps[iu];
            } else {
                const Vec x_here = in.nonstationary ? lattice_point(j, dy) * in.epsilon : in.x0;
                j = j + round_to_lattice(model::eval_f(dyn, x_here, controls[iu]) * dt, dy);
            }
        }
        r.argmin_path.push_back({in.duration, lattice_point(j, dy), Vec::zero(dim)});
    }
    return r;
}

EngineInput engine_input(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                         const CellProblemSpec& spec) {
    if (!(spec.micro_dt > 0.0)) throw ConfigError("cell: micro_dt must be positive");
    if (!(spec.micro_lattice > 0.0))
        throw ConfigError("cell: micro_lattice must be positive");
    if (spec.horizon_b < spec.micro_dt)
        throw ConfigError("cell: horizon must be at least one micro step");
    if (spec.control_radius < spec.u_tilde.norm())
        throw ConfigError("cell: control_radius below |u_tilde|");
    EngineInput in;
    in.m = &m;
    in.omega = &omega;
    in.t0 = spec.t0;
    in.x0 = spec.x0;
    in.fast_start = spec.start();
    in.u_tilde = spec.u_tilde;
    in.duration = spec.horizon_b;
    in.dt = spec.micro_dt;
    in.dy = spec.micro_lattice;
    in.control_radius = spec.control_radius;
    in.control_grid_n = spec.control_grid_n;
    in.tube_radius = spec.tube_radius;
    in.want_path = spec.want_path;
    in.soft_endpoint = spec.soft_endpoint;
    in.soft_penalty_coeff = spec.soft_penalty_coeff;
    return in;
}

// Error budget attached to a DP value: one-step Richardson refinement in
// (dt, dy) plus the endpoint snapping residual scaled by a cost slope.
double tolerance_for(const model::ModelSpec& m, const EngineInput& base,
                     const CellResult& coarse) {
    EngineInput fine = base;
    fine.dt *= 0.5;
    fine.dy *= 0.5;
    fine.want_path = false;
    const CellResult refined = run_dp(fine);
    double tol = std::abs(refined.value - coarse.value);
    tol += coarse.endpoint_residual *
           m.lagrangian.lip_l_u(base.u_tilde.norm() + 1.0);
    tol += 1e-9 * (1.0 + std::abs(coarse.value));
    return tol;
}

}  // namespace

CellResult point_to_point_cost(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                               const CellProblemSpec& spec) {
    EngineInput in = engine_input(m, omega, spec);
    CellResult r = run_dp(in);
    if (!r.feasible)
        throw InfeasibleError("cell: endpoint unreachable on the given grids");
    if (spec.estimate_tolerance) r.dp_tolerance = tolerance_for(m, in, r);
    return r;
}

CellResult f_ab(const model::ModelSpec& m, const env::EnvironmentHandle& omega,
                const CellProblemSpec& base, double a, double b) {
    if (!(0.0 <= a && a < b)) throw ConfigError("f_ab: need 0 <= a < b");
    CellProblemSpec s = base;
    const Vec v = model::eval_f(m.dynamics, base.x0, base.u_tilde);
    s.fast_origin = base.start() + v * a;
    s.has_fast_origin = true;
    s.horizon_b = b - a;
    return point_to_point_cost(m, omega, s);
}

SubadditiveSeries estimate_effective_lagrangian(const model::ModelSpec& m,
                                                const env::EnvironmentHandle& omega,
                                                const CellProblemSpec& base,
                                                const std::vector<double>& b_schedule) {
    if (b_schedule.size() < 4)
        throw ConfigError("estimate_effective_lagrangian: schedule needs >= 4 horizons");
    for (std::size_t i = 1; i < b_schedule.size(); ++i)
        if (b_schedule[i] <= b_schedule[i - 1])
            throw ConfigError("estimate_effective_lagrangian: schedule must increase");

    SubadditiveSeries s;
    for (double b : b_schedule) {
        CellProblemSpec p = base;
        p.horizon_b = b;
        p.want_path = false;
        const CellResult r = point_to_point_cost(m, omega, p);
        s.b_values.push_back(b);
        s.f_values.push_back(r.value);
        s.ratios.push_back(r.value / b);
        s.tolerances.push_back(r.dp_tolerance);
    }
    const std::size_t n = s.ratios.size();
    const std::size_t quart = std::max<std::size_t>(2, (n + 3) / 4);
    double lo = kInf, hi = -kInf, acc = 0.0;
    for (std::size_t i = n - quart; i < n; ++i) {
        lo = std::min(lo, s.ratios[i]);
        hi = std::max(hi, s.ratios[i]);
        acc += s.ratios[i];
    }
    s.plateau_estimate = acc / quart;
    s.plateau_error = 0.5 * (hi - lo);

    if (n >= 3) {
        const double d_prev = std::abs(s.ratios[n - 2] - s.ratios[n - 3]);
        const double d_last = std::abs(s.ratios[n - 1] - s.ratios[n - 2]);
        const double slack = s.tolerances[n - 1] / s.b_values[n - 1] +
                             2.0 * s.tolerances[n - 2] / s.b_values[n - 2] +
                             s.tolerances[n - 3] / s.b_values[n - 3] + 1e-12;
        s.trend_warning = d_last > d_prev + slack;
    }
    return s;
}

std::size_t EffectiveLagrangianTable::size() const {
    std::size_t c = static_cast<std::size_t>(lattice.t.n);
    for (const auto& a : lattice.x) c *= static_cast<std::size_t>(a.n);
    for (const auto& a : lattice.u) c *= static_cast<std::size_t>(a.n);
    return c;
}

std::size_t EffectiveLagrangianTable::index(int it, const IVec& ix, const IVec& iu) const {
    std::size_t idx = static_cast<std::size_t>(it);
    for (int a = 0; a < dim; ++a)
        idx = idx * static_cast<std::size_t>(lattice.x[a].n) +
              static_cast<std::size_t>(ix[a]);
    for (int a = 0; a < dim; ++a)
        idx = idx * static_cast<std::size_t>(lattice.u[a].n) +
              static_cast<std::size_t>(iu[a]);
    return idx;
}

bool EffectiveLagrangianTable::covers(double t, const Vec& x, const Vec& u) const {
    auto inside = [](const LatticeAxis& ax, double q) {
        const double tol = 1e-9 * std::max(1.0, std::abs(ax.step) * ax.n);
        return q >= ax.lo - tol && q <= ax.hi() + tol;
    };
    if (!inside(lattice.t, t)) return false;
    for (int a = 0; a < dim; ++a)
        if (!inside(lattice.x[a], x[a]) || !inside(lattice.u[a], u[a])) return false;
    return true;
}

double EffectiveLagrangianTable::interpolate(double t, const Vec& x, const Vec& u) const {
    if (!covers(t, x, u)) {
        std::ostringstream os;
        os << "effective-Lagrangian table: query (t=" << t << ", x=" << format_vec(x)
           << ", u=" << format_vec(u) << ") outside the lattice hull";
        throw DomainError(os.str());
    }
    const int na = 1 + 2 * dim;
    int base[5];
    double frac[5];
    int dims[5];
    auto locate = [](const LatticeAxis& ax, double q, int& b, double& f) {
        if (ax.n == 1) {
            b = 0;
            f = 0.0;
            return;
        }
        double s = (q - ax.lo) / ax.step;
        s = std::clamp(s, 0.0, static_cast<double>(ax.n - 1));
        b = std::min(static_cast<int>(s), ax.n - 2);
        f = s - b;
    };
    locate(lattice.t, t, base[0], frac[0]);
    dims[0] = lattice.t.n;
    for (int a = 0; a < dim; ++a) {
        locate(lattice.x[a], x[a], base[1 + a], frac[1 + a]);
        dims[1 + a] = lattice.x[a].n;
    }
    for (int a = 0; a < dim; ++a) {
        locate(lattice.u[a], u[a], base[1 + dim + a], frac[1 + dim + a]);
        dims[1 + dim + a] = lattice.u[a].n;
    }
    double acc = 0.0;
    for (int corner = 0; corner < (1 << na); ++corner) {
        double w = 1.0;
        std::size_t idx = 0;
        for (int a = 0; a < na; ++a) {
            const int hi = (corner >> a) & 1;
            w *= hi ? frac[a] : 1.0 - frac[a];
            int jj = std::min(base[a] + hi, dims[a] - 1);
            idx = idx * static_cast<std::size_t>(dims[a]) + static_cast<std::size_t>(jj);
        }
        if (w == 0.0) continue;
        if (!feasible[idx]) return kInf;
        acc += w * values[idx];
    }
    return acc;
}

EffectiveLagrangianTable build_table(const model::ModelSpec& m,
                                     const env::EnvironmentHandle& omega,
                                     const TableLattice& lattice,
                                     const std::vector<double>& b_schedule,
                                     const CellNumerics& numerics, int workers) {
    const int dim = m.dim();
    if (static_cast<int>(lattice.x.size()) != dim ||
        static_cast<int>(lattice.u.size()) != dim)
        throw ConfigError("build_table: lattice dimensionality mismatch");
    if (lattice.t.n < 1) throw ConfigError("build_table: empty lattice");

    EffectiveLagrangianTable tab;
    tab.dim = dim;
    tab.lattice = lattice;
    tab.model_hash = m.hash();
    tab.seed = omega.seed;
    tab.b_schedule = b_schedule;
    tab.numerics = numerics;
    tab.values.assign(tab.size(), 0.0);
    tab.errors.assign(tab.size(), 0.0);
    tab.feasible.assign(tab.size(), 1);

    // The potential part of an estimate depends on (x, u) only; the frozen
    // macro term is additive and is restored per t slice below.
    std::int64_t nxu = 1;
    for (const auto& a : lattice.x) nxu *= a.n;
    std::int64_t nu = 1;
    for (const auto& a : lattice.u) nu *= a.n;
    const std::int64_t jobs = nxu * nu;

    struct NodeOut {
        double pot_ratio = 0.0;
        double plateau_err = 0.0;
        double dp_err = 0.0;
        bool sampled = false;  // Richardson refinement ran on this node
        bool feasible = true;
    };
    std::vector<NodeOut> out(static_cast<std::size_t>(jobs));

    auto decode = [&](std::int64_t job, IVec& ix, IVec& iu) {
        ix = IVec::zero(dim);
        iu = IVec::zero(dim);
        std::int64_t rest = job;
        for (int a = dim - 1; a >= 0; --a) {
            iu[a] = rest % lattice.u[a].n;
            rest /= lattice.u[a].n;
        }
        for (int a = dim - 1; a >= 0; --a) {
            ix[a] = rest % lattice.x[a].n;
            rest /= lattice.x[a].n;
        }
    };

    const int keep_every =
        numerics.richardson_fraction > 0.0
            ? std::max(1, static_cast<int>(std::llround(1.0 / numerics.richardson_fraction)))
            : 0;

    parallel_for(workers, jobs, [&](std::int64_t job) {
        IVec ix, iu;
        decode(job, ix, iu);
        CellProblemSpec spec;
        spec.t0 = lattice.t.at(0);
        spec.x0 = Vec::zero(dim);
        spec.u_tilde = Vec::zero(dim);
        for (int a = 0; a < dim; ++a) {
            spec.x0[a] = lattice.x[a].at(static_cast<int>(ix[a]));
            spec.u_tilde[a] = lattice.u[a].at(static_cast<int>(iu[a]));
        }
        spec.micro_dt = numerics.micro_dt;
        spec.micro_lattice = numerics.micro_lattice;
        spec.control_radius = numerics.control_radius;
        spec.control_grid_n = numerics.control_grid_n;
        spec.tube_radius = numerics.tube_radius;
        spec.estimate_tolerance = keep_every > 0 && (job % keep_every == 0);
        NodeOut& o = out[static_cast<std::size_t>(job)];
        o.sampled = spec.estimate_tolerance;
        if (spec.u_tilde.norm() > spec.control_radius) {
            o.feasible = false;
            return;
        }
        try {
            const SubadditiveSeries s =
                estimate_effective_lagrangian(m, omega, spec, b_schedule);
            const double macro0 = m.lagrangian.macro_term(spec.t0, spec.x0);
            o.pot_ratio = s.plateau_estimate - macro0;
            o.plateau_err = s.plateau_error;
            for (std::size_t i = 0; i < s.b_values.size(); ++i)
                o.dp_err = std::max(o.dp_err, s.tolerances[i] / s.b_values[i]);
        } catch (const InfeasibleError&) {
            o.feasible = false;
        }
    });

    // Nodes skipped by the Richardson subsample inherit the worst observed
    // dp error so every entry carries an honest bar.
    double worst_dp = 0.0;
    for (const auto& o : out)
        if (o.sampled && o.feasible) worst_dp = std::max(worst_dp, o.dp_err);

    for (std::int64_t job = 0; job < jobs; ++job) {
        IVec ix, iu;
        decode(job, ix, iu);
        const NodeOut& o = out[static_cast<std::size_t>(job)];
        for (int it = 0; it < lattice.t.n; ++it) {
            Vec x = Vec::zero(dim);
            for (int a = 0; a < dim; ++a) x[a] = lattice.x[a].at(static_cast<int>(ix[a]));
            const std::size_t idx = tab.index(it, ix, iu);
            if (!o.feasible) {
                tab.feasible[idx] = 0;
                tab.values[idx] = kInf;
                tab.errors[idx] = kInf;
                continue;
            }
            tab.values[idx] = m.lagrangian.macro_term(lattice.t.at(it), x) + o.pot_ratio;
            tab.errors[idx] = o.plateau_err + (o.sampled ? o.dp_err : worst_dp);
        }
    }
    return tab;
}

CellResult nonstationary_cell_cost(const model::ModelSpec& m,
                                   const env::EnvironmentHandle& omega,
                                   const CellProblemSpec& spec, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("nonstationary_cell_cost: epsilon must be > 0");
    const double tau = epsilon * spec.horizon_b;
    const double K = spec.control_radius;
    if (tau * m.dynamics.f_star(K) > m.dynamics.eta(K) + 1e-12)
        throw DomainError(
            "nonstationary_cell_cost: tau * f^*(K) exceeds the inversion radius eta(K); "
            "shrink tau");
    EngineInput in = engine_input(m, omega, spec);
    in.nonstationary = true;
    in.epsilon = epsilon;
    CellResult r = run_dp(in);
    if (!r.feasible)
        throw InfeasibleError("nonstationary cell: endpoint unreachable on the given grids");
    if (spec.estimate_tolerance) r.dp_tolerance = tolerance_for(m, in, r);
    return r;
}

}  // namespace homlab::cell
