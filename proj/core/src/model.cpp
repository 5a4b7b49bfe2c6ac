#include "homlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "homlab/errors.hpp"
#include "homlab/rng.hpp"

namespace homlab::model {

namespace {

double radial_pow(double r, double beta) { return std::pow(std::max(r, 0.0), beta); }

// Multilinear interpolation over a joint (x, u) lattice (up to 4 axes).
Vec interp_table(const UserDynamicsTable& t, const Vec& x, const Vec& u) {
    const int d = t.dim;
    const int na = 2 * d;
    double frac[4];
    int base[4];
    int dims[4];
    auto locate = [](const LatticeAxis& ax, double q, int& b, double& f) {
        double s = (q - ax.lo) / ax.step;
        s = std::clamp(s, 0.0, static_cast<double>(ax.n - 1));
        b = std::min(static_cast<int>(s), ax.n - 2);
        if (ax.n == 1) b = 0;
        f = ax.n == 1 ? 0.0 : s - b;
    };
    for (int i = 0; i < d; ++i) {
        locate(t.x_axes[i], x[i], base[i], frac[i]);
        dims[i] = t.x_axes[i].n;
    }
    for (int i = 0; i < d; ++i) {
        locate(t.u_axes[i], u[i], base[d + i], frac[d + i]);
        dims[d + i] = t.u_axes[i].n;
    }
    Vec acc = Vec::zero(d);
    for (int corner = 0; corner < (1 << na); ++corner) {
        double w = 1.0;
        std::size_t idx = 0;
        for (int a = 0; a < na; ++a) {
            const int hi = (corner >> a) & 1;
            w *= hi ? frac[a] : 1.0 - frac[a];
            int j = base[a] + hi;
            j = std::min(j, dims[a] - 1);
            idx = idx * static_cast<std::size_t>(dims[a]) + static_cast<std::size_t>(j);
        }
        if (w == 0.0) continue;
        acc += w * t.values[idx];
    }
    return acc;
}

// Damped Newton with finite-difference Jacobian; a local method suffices
// inside the declared inversion ball.
Vec newton_solve_velocity(const DynamicsSpec& d, const Vec& x0, Vec u, const Vec& v) {
    const int dim = d.dim;
    auto residual = [&](const Vec& uu) { return eval_f(d, x0, uu) - v; };
    Vec r = residual(u);
    for (int iter = 0; iter < 50 && r.norm() > 1e-12; ++iter) {
        double J[2][2] = {{0, 0}, {0, 0}};
        for (int j = 0; j < dim; ++j) {
            Vec up = u;
            const double h = 1e-6 * (1.0 + std::abs(u[j]));
            up[j] += h;
            const Vec df = eval_f(d, x0, up) - eval_f(d, x0, u);
            for (int i = 0; i < dim; ++i) J[i][j] = df[i] / h;
        }
        Vec step = Vec::zero(dim);
        if (dim == 1) {
            if (std::abs(J[0][0]) < 1e-14)
                throw ModelContractError("invert_dynamics: singular Jacobian");
            step[0] = r[0] / J[0][0];
        } else {
            const double det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
            if (std::abs(det) < 1e-14)
                throw ModelContractError("invert_dynamics: singular Jacobian");
            step[0] = (J[1][1] * r[0] - J[0][1] * r[1]) / det;
            step[1] = (-J[1][0] * r[0] + J[0][0] * r[1]) / det;
        }
        double lam = 1.0;
        bool accepted = false;
        while (lam >= 1.0 / 1024.0) {
            const Vec u_try = u - step * lam;
            const Vec r_try = residual(u_try);
            if (r_try.norm() < r.norm()) {
                u = u_try;
                r = r_try;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if (!accepted) break;
    }
    if (r.norm() > 1e-10)
        throw ModelContractError("invert_dynamics: Newton residual " +
                                 std::to_string(r.norm()) + " above 1e-10");
    return u;
}

}  // namespace

Vec UserDynamicsTable::eval(const Vec& x, const Vec& u) const {
    return interp_table(*this, x, u);
}

Vec eval_f(const DynamicsSpec& d, const Vec& x, const Vec& u) {
    switch (d.kind) {
        case DynamicsKind::calculus_of_variations:
            return u;
        case DynamicsKind::bounded_speed:
            return u * (d.speed_bound / std::sqrt(u.norm2() + 1.0));
        case DynamicsKind::user_table:
            return d.table->eval(x, u);
    }
    return Vec::zero(d.dim);
}

Vec invert_dynamics(const DynamicsSpec& d, const Vec& x0, const Vec& u, const Vec& v) {
    const double R = u.norm();
    const double eta = d.eta ? d.eta(R) : 0.0;
    const Vec f0 = eval_f(d, x0, u);
    const double dist = (v - f0).norm();
    if (dist > eta * (1.0 + 1e-12) + 1e-15) {
        std::ostringstream os;
        os << "invert_dynamics: target velocity " << format_vec(v) << " lies " << dist
           << " from f(x0,u), outside the inversion ball eta(" << R << ") = " << eta;
        throw DomainError(os.str());
    }
    switch (d.kind) {
        case DynamicsKind::calculus_of_variations:
            return v;
        case DynamicsKind::bounded_speed: {
            // v = C u / sqrt(|u|^2 + 1) inverts to u = v / sqrt(C^2 - |v|^2)
            const double C2 = d.speed_bound * d.speed_bound;
            const double gap = C2 - v.norm2();
            if (gap <= 0.0) throw DomainError("invert_dynamics: |v| >= speed bound C");
            return v / std::sqrt(gap);
        }
        case DynamicsKind::user_table:
            return newton_solve_velocity(d, x0, u, v);
    }
    return u;
}

Vec zero_control(const DynamicsSpec& d, const Vec& x) {
    switch (d.kind) {
        case DynamicsKind::calculus_of_variations:
        case DynamicsKind::bounded_speed:
            return Vec::zero(d.dim);
        case DynamicsKind::user_table: {
            const Vec u = newton_solve_velocity(d, x, Vec::zero(d.dim), Vec::zero(d.dim));
            if (u.norm() > d.control_bound_M + 1e-9)
                throw ModelContractError("zero_control: |u| exceeds control bound M");
            return u;
        }
    }
    return Vec::zero(d.dim);
}

Vec direction_control(const DynamicsSpec& d, const Vec& x, const Vec& v_unit) {
    if (std::abs(v_unit.norm() - 1.0) > 1e-12)
        throw DomainError("direction_control: v_unit must be a unit vector");
    const Vec target = v_unit * d.delta;
    switch (d.kind) {
        case DynamicsKind::calculus_of_variations:
            return target;
        case DynamicsKind::bounded_speed:
            return target / std::sqrt(d.speed_bound * d.speed_bound - d.delta * d.delta);
        case DynamicsKind::user_table: {
            // Continuation from the zero control toward the delta-sphere.
            Vec u = zero_control(d, x);
            const int steps = 8;
            for (int k = 1; k <= steps; ++k)
                u = newton_solve_velocity(d, x, u, target * (static_cast<double>(k) / steps));
            if (u.norm() > d.control_bound_M + 1e-9)
                throw ModelContractError("direction_control: |u| exceeds control bound M");
            return u;
        }
    }
    return target;
}

double eval_L(const LagrangianSpec& l, double t, const Vec& x, const Vec& y, const Vec& u) {
    double v = l.macro_term(t, x) + l.running_cost(u);
    if (l.has_medium) v += env::evaluate_potential(l.medium, y);
    return v;
}

double truncation_radius(const ModelSpec& m, double W, double horizon) {
    const auto& lag = m.lagrangian;
    const auto& dyn = m.dynamics;
    const Vec e1 = [&] {
        Vec v = Vec::zero(m.dim());
        v[0] = 1.0;
        return v;
    }();
    const double l_star0 = lag.l_star(Vec::zero(m.dim()));
    if (W < l_star0)
        throw DomainError("truncation_radius: W below L_*(0)");

    // Threshold N: smallest radius whose guaranteed running cost dominates
    // twice the cost-rate bound, so at least half of any cheap control's
    // time is spent below N.
    if (lag.l_star(e1 * 1e6) < 2.0 * W)
        throw ModelContractError("truncation_radius: running cost never dominates 2W");
    double nlo = 0.0, nhi = 1e6;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (nlo + nhi);
        (lag.l_star(e1 * mid) < 2.0 * W ? nlo : nhi) = mid;
    }
    const double N = nhi;

    const double c_W = 5.0 * horizon * lag.lip_l_t +
                       4.0 * lag.lip_l_u(N) * dyn.lip_H(N) * dyn.f_star(N);
    const double needed = 2.0 * (c_W + lag.l_upper(dyn.control_bound_M)) / dyn.delta;

    double R = std::max({1.0, dyn.control_bound_M, N + lag.lambda});
    while (R <= 1e6) {
        const double gamma = lag.l_star(e1 * (R - lag.lambda)) / dyn.f_star(R);
        if (gamma >= needed) return R;
        R *= 2.0;
    }
    throw ModelContractError(
        "truncation_radius: coercivity too weak, radius ladder exhausted at 1e6");
}

// --- assumption checks ------------------------------------------------------

namespace {

Vec sample_point(const Box& b, std::uint64_t seed, int i, int tag) {
    Vec p = Vec::zero(b.dim());
    for (int a = 0; a < b.dim(); ++a) {
        const double u = u01(hash_key(seed, salt::sample_plan, i * 4 + tag, a));
        p[a] = b.lo[a] + (b.hi[a] - b.lo[a]) * u;
    }
    return p;
}

Vec sample_ball(int dim, double radius, std::uint64_t seed, int i, int tag) {
    Vec p = Vec::zero(dim);
    for (int a = 0; a < dim; ++a) {
        const double u = u01(hash_key(seed, salt::sample_plan, i * 4 + tag, 100 + a));
        p[a] = radius * (2.0 * u - 1.0);
    }
    return p;
}

struct Check {
    AssumptionEntry e;
    void fail(double violation, const std::string& where) {
        if (!e.pass && violation <= e.worst_violation) return;
        e.pass = false;
        e.worst_violation = std::max(e.worst_violation, violation);
        e.where = where;
    }
};

}  // namespace

bool AssumptionReport::all_pass() const {
    for (const auto& e : entries)
        if (!e.pass) return false;
    return true;
}

std::string AssumptionReport::summary() const {
    std::ostringstream os;
    for (const auto& e : entries) {
        os << "A" << e.id << " " << e.name << ": " << (e.pass ? "pass" : "FAIL");
        if (!e.pass)
            os << " (violation " << e.worst_violation << " at " << e.where << ")";
        os << "\n";
    }
    return os.str();
}

AssumptionReport check_assumptions(const ModelSpec& m, const SamplePlan& plan) {
    const auto& dyn = m.dynamics;
    const auto& lag = m.lagrangian;
    const int d = m.dim();
    const std::uint64_t seed = plan.seed;

    Check a1{{1, "stationary_ergodic_shift", true, 0.0, ""}};
    Check a2{{2, "dynamics_lipschitz", true, 0.0, ""}};
    Check a3{{3, "finite_bounds", true, 0.0, ""}};
    Check a4{{4, "continuity_moduli", true, 0.0, ""}};
    Check a5{{5, "zero_control_in_ball", true, 0.0, ""}};
    Check a6{{6, "local_inverse", true, 0.0, ""}};
    Check a7{{7, "coercive_growth_theta", true, 0.0, ""}};
    Check a8{{8, "convex_velocity_image", true, 0.0, ""}};

    // A1: exact shift equivariance of the medium.
    if (lag.has_medium) {
        for (int i = 0; i < plan.n_pairs; ++i) {
            const Vec y = sample_ball(d, 10.0, seed, i, 0);
            const Vec r = sample_ball(d, 10.0, seed, i, 1);
            const double lhs =
                env::evaluate_potential(env::shift_environment(lag.medium, r), y);
            const double rhs = env::evaluate_potential(lag.medium, y + r);
            const double err = std::abs(lhs - rhs);
            if (err > 1e-12) a1.fail(err, "y=" + format_vec(y) + " r=" + format_vec(r));
        }
    }

    // A2: sampled Lipschitz quotients of f.
    for (int i = 0; i < plan.n_pairs; ++i) {
        const Vec x1 = sample_point(plan.x_box, seed, i, 0);
        const Vec x2 = sample_point(plan.x_box, seed, i, 1);
        const Vec u1 = sample_ball(d, plan.u_radius, seed, i, 2);
        const Vec u2 = sample_ball(d, plan.u_radius, seed, i, 3);
        const double den = (x1 - x2).norm() + (u1 - u2).norm();
        if (den < 1e-12) continue;
        const double q = (eval_f(dyn, x1, u1) - eval_f(dyn, x2, u2)).norm() / den;
        const double bound = dyn.lip_f(plan.u_radius) * (1.0 + 1e-9) + 1e-9;
        if (q > bound) a2.fail(q - bound, "x=" + format_vec(x1) + " u=" + format_vec(u1));
    }

    // A3: declared sup bounds on f and L.
    for (int i = 0; i < plan.n_pairs; ++i) {
        const Vec x = sample_point(plan.x_box, seed, i, 0);
        const Vec u = sample_ball(d, plan.u_radius, seed, i, 1);
        const Vec y = sample_ball(d, 10.0, seed, i, 2);
        const double t = plan.t_max * u01(hash_key(seed, salt::sample_plan, i, 55));
        const double fb = dyn.f_star(u.norm()) + 1e-9;
        const double fn = eval_f(dyn, x, u).norm();
        if (fn > fb) a3.fail(fn - fb, "f at u=" + format_vec(u));
        const double lb = lag.l_upper(plan.u_radius) + 1e-9;
        const double lv = std::abs(eval_L(lag, t, x, y, u));
        if (lv > lb) a3.fail(lv - lb, "L at u=" + format_vec(u));
        // Coercive lower envelope is global.
        const double low = lag.l_star(u) - 1e-12;
        const double val = eval_L(lag, t, x, y, u);
        if (val < low) a3.fail(low - val, "L below L_* at u=" + format_vec(u));
    }

    // A4: continuity moduli of L and psi.
    for (int i = 0; i < plan.n_pairs; ++i) {
        const Vec x1 = sample_point(plan.x_box, seed, i, 0);
        const Vec x2 = sample_point(plan.x_box, seed, i, 1);
        const Vec y1 = sample_ball(d, 5.0, seed, i, 2);
        const Vec y2 = sample_ball(d, 5.0, seed, i, 3);
        const Vec u = sample_ball(d, plan.u_radius, seed, i, 0);
        const double t1 = plan.t_max * u01(hash_key(seed, salt::sample_plan, i, 56));
        const double t2 = plan.t_max * u01(hash_key(seed, salt::sample_plan, i, 57));
        double gap = std::abs(eval_L(lag, t1, x1, y1, u) - eval_L(lag, t2, x1, y1, u));
        double bound = lag.lip_l_t * std::abs(t1 - t2) + 1e-9;
        if (gap > bound) a4.fail(gap - bound, "t-Lipschitz");
        gap = std::abs(eval_L(lag, t1, x1, y1, u) - eval_L(lag, t1, x2, y2, u));
        bound = lag.modulus_joint((x1 - x2).norm() + (y1 - y2).norm()) + 1e-9;
        if (gap > bound) a4.fail(gap - bound, "(x,y) modulus");
        gap = std::abs(lag.terminal_cost(x1) - lag.terminal_cost(x2));
        bound = lag.modulus_psi((x1 - x2).norm()) + 1e-9;
        if (gap > bound) a4.fail(gap - bound, "psi modulus");
        if (std::abs(lag.terminal_cost(x1)) > lag.psi_bound + 1e-9)
            a4.fail(std::abs(lag.terminal_cost(x1)) - lag.psi_bound, "psi bound");
    }

    // A5: resting control inside the declared ball.
    for (int i = 0; i < plan.n_x; ++i) {
        const Vec x = sample_point(plan.x_box, seed, i, 0);
        try {
            const Vec u0 = zero_control(dyn, x);
            const double fn = eval_f(dyn, x, u0).norm();
            if (fn > 1e-10) a5.fail(fn, "residual at x=" + format_vec(x));
            if (u0.norm() > dyn.control_bound_M + 1e-9)
                a5.fail(u0.norm() - dyn.control_bound_M, "norm at x=" + format_vec(x));
        } catch (const std::exception& ex) {
            a5.fail(1.0, ex.what());
        }
    }

    // A6: local inverse roundtrip and Lipschitz bound.
    for (int i = 0; i < plan.n_pairs; ++i) {
        const Vec x = sample_point(plan.x_box, seed, i, 0);
        const Vec u = sample_ball(d, plan.u_radius, seed, i, 1);
        const double eta = dyn.eta(u.norm());
        Vec v = eval_f(dyn, x, u) + sample_ball(d, 0.9 * eta / std::sqrt(1.0 * d), seed, i, 2);
        try {
            const Vec u2 = invert_dynamics(dyn, x, u, v);
            const double res = (eval_f(dyn, x, u2) - v).norm();
            if (res > 1e-10) a6.fail(res, "roundtrip at u=" + format_vec(u));
            const double drift = (u2 - u).norm();
            const double bound =
                dyn.lip_H(u.norm()) * (v - eval_f(dyn, x, u)).norm() + 1e-8;
            if (drift > bound) a6.fail(drift - bound, "H-Lipschitz at u=" + format_vec(u));
        } catch (const std::exception& ex) {
            a6.fail(1.0, ex.what());
        }
    }

    // A7: growth of gamma along a radius ladder, then the theta inequality.
    {
        double prev = -1e300;
        double first = 0.0, last = 0.0;
        for (int k = 0; k <= 10; ++k) {
            const double R = std::pow(2.0, k);
            Vec uR = Vec::zero(d);
            uR[0] = R;
            const double g = lag.l_star(uR) / dyn.f_star(R + lag.lambda);
            if (k == 0) first = g;
            last = g;
            if (g < prev * 0.999 - 1e-9)
                a7.fail(prev - g, "gamma not increasing at R=" + std::to_string(R));
            prev = g;
        }
        if (last < 10.0 * std::max(first, 1e-6) && last < 1e3)
            a7.fail(10.0 * std::max(first, 1e-6) - last, "gamma growth too slow");
    }
    if (!lag.theta) {
        a7.fail(1.0, "theta not supplied");
    } else {
        for (int i = 0; i < plan.n_pairs; ++i) {
            const Vec x = sample_point(plan.x_box, seed, i, 0);
            const Vec u1 = sample_ball(d, plan.u_radius, seed, i, 1);
            const Vec u2 = sample_ball(d, plan.u_radius, seed, i, 2);
            const double lhs = lag.l_star(u1) - lag.l_star(u2);
            const double rhs = lag.theta(u2).dot(eval_f(dyn, x, u1) - eval_f(dyn, x, u2));
            if (lhs < rhs - 1e-7)
                a7.fail(rhs - lhs,
                        "theta inequality at u1=" + format_vec(u1) + " u2=" + format_vec(u2));
        }
    }

    // A8: midpoint of two attainable velocities is attainable.
    for (int i = 0; i < plan.n_pairs / 2; ++i) {
        const Vec x = sample_point(plan.x_box, seed, i, 0);
        const Vec u1 = sample_ball(d, plan.u_radius, seed, i, 1);
        const Vec u2 = sample_ball(d, plan.u_radius, seed, i, 2);
        const Vec target = (eval_f(dyn, x, u1) + eval_f(dyn, x, u2)) * 0.5;
        bool ok = false;
        for (int steps = 1; steps <= 32 && !ok; steps *= 2) {
            try {
                Vec u = u1;
                const Vec v0 = eval_f(dyn, x, u1);
                for (int k = 1; k <= steps; ++k) {
                    const Vec v = v0 + (target - v0) * (static_cast<double>(k) / steps);
                    u = invert_dynamics(dyn, x, u, v);
                }
                ok = (eval_f(dyn, x, u) - target).norm() <= 1e-8;
            } catch (const std::exception&) {
                ok = false;
            }
        }
        if (!ok) a8.fail(1.0, "midpoint of u1=" + format_vec(u1) + " u2=" + format_vec(u2));
    }

    AssumptionReport rep;
    rep.entries = {a1.e, a2.e, a3.e, a4.e, a5.e, a6.e, a7.e, a8.e};
    return rep;
}

std::vector<Vec> control_grid(int dim, double radius, int n_per_axis, double quantum) {
    std::vector<double> axis;
    if (n_per_axis <= 0) {
        const int k = std::max(1, static_cast<int>(std::floor(radius / quantum + 1e-9)));
        axis.reserve(static_cast<size_t>(2 * k + 1));
        for (int i = -k; i <= k; ++i) axis.push_back(i * quantum);
    } else {
        const int n = std::max(2, n_per_axis);
        axis.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) axis.push_back(-radius + 2.0 * radius * i / (n - 1));
    }
    std::vector<Vec> grid;
    if (dim == 1) {
        grid.reserve(axis.size());
        for (double a : axis) grid.push_back(Vec(a));
    } else {
        grid.reserve(axis.size() * axis.size());
        for (double a : axis)
            for (double b : axis) grid.push_back(Vec(a, b));
    }
    return grid;
}

// --- built-in catalogue -----------------------------------------------------

std::string ModelSpec::describe() const {
    std::ostringstream os;
    os << name << "|dyn=";
    switch (dynamics.kind) {
        case DynamicsKind::calculus_of_variations: os << "cov"; break;
        case DynamicsKind::bounded_speed: os << "bounded_speed C=" << dynamics.speed_bound; break;
        case DynamicsKind::user_table: os << "user_table"; break;
    }
    os << "|d=" << dim() << "|cost=";
    switch (params.cost) {
        case RunningCostKind::quadratic: os << "quadratic"; break;
        case RunningCostKind::power_over_beta: os << "pow_over_beta b=" << params.beta; break;
        case RunningCostKind::power: os << "pow b=" << params.beta; break;
    }
    os << "|macro=";
    switch (params.macro) {
        case MacroKind::zero: os << "zero"; break;
        case MacroKind::txslope:
            os << "txslope c=" << params.macro_coeff << " clip=" << params.macro_clip;
            break;
    }
    os << "|psi=";
    switch (params.terminal) {
        case TerminalKind::zero: os << "zero"; break;
        case TerminalKind::abs_clip:
            os << "abs_clip scale=" << params.terminal_scale
               << " cap=" << params.terminal_cap;
            break;
    }
    os << "|lambda=" << params.lambda;
    if (lagrangian.has_medium) os << "|env=" << lagrangian.medium.spec.describe()
                                  << " seed=" << lagrangian.medium.seed;
    return os.str();
}

std::string ModelSpec::hash() const {
    const std::string s = describe();
    const std::uint64_t h = fnv1a64(s.data(), s.size());
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

ModelSpec make_model(const BuiltinModelParams& p,
                     std::optional<env::EnvironmentHandle> medium) {
    if (p.dim != 1 && p.dim != 2) throw ConfigError("model: dim must be 1 or 2");
    if (p.beta <= 0.0) throw ConfigError("model: beta must be positive");
    if (p.lambda <= 0.0) throw ConfigError("model: lambda must be positive");
    ModelSpec m;
    m.params = p;

    DynamicsSpec& dyn = m.dynamics;
    dyn.kind = p.dynamics;
    dyn.dim = p.dim;
    dyn.speed_bound = p.speed_bound;
    if (p.dynamics == DynamicsKind::calculus_of_variations) {
        dyn.delta = 1.0;
        dyn.control_bound_M = 1.0;
        dyn.control_bound_M_tilde = 0.0;
        dyn.eta = [](double) { return 1.0; };
        dyn.f_star = [](double R) { return R; };
        dyn.lip_f = [](double) { return 1.0; };
        dyn.lip_H = [](double) { return 1.0; };
    } else if (p.dynamics == DynamicsKind::bounded_speed) {
        const double C = p.speed_bound;
        if (!(C > 0.0)) throw ConfigError("model: bounded_speed needs C > 0");
        dyn.delta = C / 2.0;
        // direction controls have |u| = delta / sqrt(C^2 - delta^2) = 1/sqrt(3)
        dyn.control_bound_M = 1.0 / std::sqrt(3.0);
        dyn.control_bound_M_tilde = 0.0;
        dyn.f_star = [C](double R) { return C * R / std::sqrt(R * R + 1.0); };
        dyn.eta = [C, fs = dyn.f_star](double R) { return (C - fs(R)) / 4.0; };
        dyn.lip_f = [C](double) { return C; };
        dyn.lip_H = [C, fs = dyn.f_star, et = dyn.eta](double R) {
            const double reach = std::min(fs(R) + et(R), C * (1.0 - 1e-9));
            return C * C * std::pow(C * C - reach * reach, -1.5);
        };
    } else {
        throw ConfigError("make_model: user_table dynamics are assembled via io loaders");
    }

    LagrangianSpec& lag = m.lagrangian;
    lag.beta = p.beta;
    lag.lambda = p.lambda;
    const double beta = p.beta;
    switch (p.cost) {
        case RunningCostKind::quadratic:
            lag.running_cost = [](const Vec& u) { return 0.5 * u.norm2(); };
            lag.lip_l_u = [](double R) { return R; };
            break;
        case RunningCostKind::power_over_beta:
            lag.running_cost = [beta](const Vec& u) { return radial_pow(u.norm(), beta) / beta; };
            lag.lip_l_u = [beta](double R) {
                return beta >= 1.0 ? radial_pow(R, beta - 1.0) : 1e9;
            };
            break;
        case RunningCostKind::power:
            lag.running_cost = [beta](const Vec& u) { return radial_pow(u.norm(), beta); };
            lag.lip_l_u = [beta](double R) {
                return beta >= 1.0 ? beta * radial_pow(R, beta - 1.0) : 1e9;
            };
            break;
    }

    double env_lo = 0.0, env_hi = 0.0, env_lip = 0.0;
    if (medium) {
        if (medium->spec.dimension != p.dim)
            throw ConfigError("model: environment dimension does not match model dim");
        lag.has_medium = true;
        lag.medium = *medium;
        env_lo = medium->spec.value_lo();
        env_hi = medium->spec.value_hi();
        env_lip = medium->spec.lipschitz();
    }

    double macro_lo = 0.0, macro_hi = 0.0, macro_lip_x = 0.0, macro_lip_t = 0.0;
    if (p.macro == MacroKind::zero) {
        lag.macro_term = [](double, const Vec&) { return 0.0; };
    } else {
        const double c = p.macro_coeff, clip = p.macro_clip, T = p.t_horizon;
        lag.macro_term = [c, clip](double t, const Vec& x) {
            return c * t * std::clamp(x[0], -clip, clip);
        };
        macro_lo = -std::abs(c) * T * clip;
        macro_hi = std::abs(c) * T * clip;
        macro_lip_x = std::abs(c) * T;
        macro_lip_t = std::abs(c) * clip;
    }
    lag.lip_l_t = macro_lip_t;
    lag.modulus_x = [macro_lip_x](double r) { return macro_lip_x * r; };
    lag.modulus_joint = [macro_lip_x, env_lip](double r) {
        return (macro_lip_x + env_lip) * r;
    };

    const auto running = lag.running_cost;
    const double floor = macro_lo + env_lo;
    lag.l_star = [running, floor](const Vec& u) { return running(u) + floor; };
    const double cap = macro_hi + env_hi;
    auto running_sup = [p, beta](double R) {
        switch (p.cost) {
            case RunningCostKind::quadratic: return 0.5 * R * R;
            case RunningCostKind::power_over_beta: return radial_pow(R, beta) / beta;
            case RunningCostKind::power: return radial_pow(R, beta);
        }
        return 0.0;
    };
    lag.l_upper = [running_sup, cap, floor](double R) {
        return std::max(std::abs(running_sup(R) + cap), std::abs(floor));
    };

    if (p.terminal == TerminalKind::zero) {
        lag.terminal_cost = [](const Vec&) { return 0.0; };
        lag.modulus_psi = [](double) { return 0.0; };
        lag.psi_bound = 0.0;
    } else {
        const double scale = p.terminal_scale;
        const double topcap = p.terminal_cap;
        lag.terminal_cost = [scale, topcap](const Vec& x) {
            return std::min(scale * x.norm(), topcap);
        };
        lag.modulus_psi = [scale, topcap](double r) { return std::min(scale * r, topcap); };
        lag.psi_bound = topcap;
    }

    // Theta: gradient of the coercive envelope pushed through the local
    // inverse, evaluated by central differences in the velocity variable.
    const DynamicsSpec dyn_copy = dyn;
    const auto l_star = lag.l_star;
    if (p.dynamics == DynamicsKind::calculus_of_variations) {
        lag.theta = [l_star, d = p.dim](const Vec& u) {
            Vec g = Vec::zero(d);
            const double h = 1e-6 * (1.0 + u.norm());
            for (int i = 0; i < d; ++i) {
                Vec up = u, dn = u;
                up[i] += h;
                dn[i] -= h;
                g[i] = (l_star(up) - l_star(dn)) / (2.0 * h);
            }
            return g;
        };
    } else {
        lag.theta = [l_star, dyn_copy, d = p.dim](const Vec& u) {
            const Vec v0 = eval_f(dyn_copy, Vec::zero(d), u);
            const double C = dyn_copy.speed_bound;
            auto g_of_v = [&](const Vec& v) {
                const Vec uu = v / std::sqrt(std::max(C * C - v.norm2(), 1e-12));
                return l_star(uu);
            };
            Vec g = Vec::zero(d);
            const double h = std::min(1e-6 * (1.0 + v0.norm()), 0.49 * (C - v0.norm()));
            for (int i = 0; i < d; ++i) {
                Vec up = v0, dn = v0;
                up[i] += h;
                dn[i] -= h;
                g[i] = (g_of_v(up) - g_of_v(dn)) / (2.0 * h);
            }
            return g;
        };
    }

    m.name = "builtin";
    return m;
}

}  // namespace homlab::model
