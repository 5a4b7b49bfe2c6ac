#include "homlab/xform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "homlab/errors.hpp"
#include "homlab/parallel.hpp"

namespace homlab::xform {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kGolden = 0.5 * (std::sqrt(5.0) - 1.0);

// Coercivity confines the sup to a ball: beyond the radius where the running
// cost outgrows |p| times the speed, no control can beat the resting value.
double auto_radius(const model::ModelSpec& m, double p_norm, double resting_value) {
    Vec e1 = Vec::zero(m.dim());
    e1[0] = 1.0;
    double R = std::max(1.0, m.dynamics.control_bound_M);
    while (R <= 1e6) {
        const double worst = -m.lagrangian.l_star(e1 * R) + p_norm * m.dynamics.f_star(R);
        if (worst < resting_value - 1.0) return R;
        R *= 2.0;
    }
    throw NumericalError("hamiltonian: coercivity never dominates |p|; sup unbounded?");
}

// One golden-section pass along each control axis around the scan argmax.
template <class Obj>
Vec refine_axes(Obj&& objective, Vec u, double spacing, int dim, int iters) {
    for (int a = 0; a < dim; ++a) {
        double lo = u[a] - spacing, hi = u[a] + spacing;
        double c = hi - kGolden * (hi - lo);
        double d = lo + kGolden * (hi - lo);
        Vec uc = u, ud = u;
        uc[a] = c;
        ud[a] = d;
        double fc = objective(uc), fd = objective(ud);
        for (int it = 0; it < iters; ++it) {
            if (fc > fd) {
                hi = d;
                d = c;
                fd = fc;
                c = hi - kGolden * (hi - lo);
                uc[a] = c;
                fc = objective(uc);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + kGolden * (hi - lo);
                ud[a] = d;
                fd = objective(ud);
            }
        }
        Vec um = u;
        um[a] = 0.5 * (lo + hi);
        if (objective(um) > objective(u)) u = um;
    }
    return u;
}

struct SupResult {
    double value;
    Vec argmax;
};

template <class Obj>
SupResult sup_over_grid(Obj&& objective, int dim, double radius, int n,
                        bool* on_boundary) {
    const std::vector<Vec> grid = model::control_grid(dim, radius, n, radius);
    double best = -kInf;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double v = objective(grid[i]);
        // ties resolve toward the origin so flat objectives stay interior
        if (v > best || (v == best && grid[i].norm2() < grid[best_i].norm2())) {
            best = v;
            best_i = i;
        }
    }
    const Vec u = grid[best_i];
    *on_boundary = false;
    for (int a = 0; a < dim; ++a)
        if (std::abs(std::abs(u[a]) - radius) < 1e-12) *on_boundary = true;
    return {best, u};
}

}  // namespace

double hamiltonian(const model::ModelSpec& m, double t, const Vec& x, const Vec* y,
                   const Vec& p, const HamOptions& opt) {
    const int dim = m.dim();
    const Vec y0 = y ? *y : Vec::zero(dim);
    auto objective = [&](const Vec& v) {
        return -model::eval_f(m.dynamics, x, v).dot(p) - model::eval_L(m.lagrangian, t, x, y0, v);
    };
    double radius = opt.radius > 0.0
                        ? opt.radius
                        : auto_radius(m, p.norm(), objective(Vec::zero(dim)));
    for (int attempt = 0; attempt < 2; ++attempt) {
        bool boundary = false;
        SupResult s = sup_over_grid(objective, dim, radius, opt.grid_n, &boundary);
        if (boundary) {
            radius *= 2.0;
            continue;
        }
        const double spacing = 2.0 * radius / (std::max(2, opt.grid_n) - 1);
        const Vec u = refine_axes(objective, s.argmax, spacing, dim, opt.refine_iters);
        return objective(u);
    }
    throw NumericalError(
        "hamiltonian: sup attained on the scan boundary after doubling the radius");
}

double effective_hamiltonian(const model::ModelSpec& m,
                             const cell::EffectiveLagrangianTable& table, double t,
                             const Vec& x, const Vec& p, const HamOptions& opt) {
    const int dim = m.dim();
    auto objective = [&](const Vec& v) {
        const double lv = table.interpolate(t, x, v);
        if (!std::isfinite(lv)) return -kInf;
        return -model::eval_f(m.dynamics, x, v).dot(p) - lv;
    };
    // scan the table's own control lattice
    double best = -kInf;
    Vec best_u = Vec::zero(dim);
    bool have = false;
    IVec iu = IVec::zero(dim);
    for (;;) {
        Vec u = Vec::zero(dim);
        for (int a = 0; a < dim; ++a) u[a] = table.lattice.u[a].at(static_cast<int>(iu[a]));
        const double v = objective(u);
        if (v > best || (have && v == best && u.norm2() < best_u.norm2())) {
            best = v;
            best_u = u;
            have = true;
        }
        int a = dim - 1;
        for (; a >= 0; --a) {
            if (++iu[a] < table.lattice.u[a].n) break;
            iu[a] = 0;
        }
        if (a < 0) break;
    }
    if (!std::isfinite(best))
        throw NumericalError("effective_hamiltonian: no feasible table node at this (t,x)");
    bool on_boundary = false;
    for (int a = 0; a < dim; ++a) {
        const auto& ax = table.lattice.u[a];
        if (std::abs(best_u[a] - ax.lo) < 1e-12 || std::abs(best_u[a] - ax.hi()) < 1e-12)
            on_boundary = true;
    }
    if (on_boundary)
        throw NumericalError(
            "effective_hamiltonian: sup attained on the control-lattice boundary; extend "
            "the table's control range");
    // refine within the hull
    auto clipped = [&](const Vec& v) {
        for (int a = 0; a < dim; ++a) {
            const auto& ax = table.lattice.u[a];
            if (v[a] < ax.lo || v[a] > ax.hi()) return -kInf;
        }
        return objective(v);
    };
    const double spacing = table.lattice.u[0].step;
    const Vec u = refine_axes(clipped, best_u, spacing, dim, opt.refine_iters);
    return clipped(u);
}

std::size_t HamiltonianTable::size() const {
    std::size_t c = static_cast<std::size_t>(t.n);
    for (const auto& a : x) c *= static_cast<std::size_t>(a.n);
    for (const auto& a : p) c *= static_cast<std::size_t>(a.n);
    return c;
}

std::size_t HamiltonianTable::index(int it, const IVec& ix, const IVec& ip) const {
    std::size_t idx = static_cast<std::size_t>(it);
    for (int a = 0; a < dim; ++a)
        idx = idx * static_cast<std::size_t>(x[a].n) + static_cast<std::size_t>(ix[a]);
    for (int a = 0; a < dim; ++a)
        idx = idx * static_cast<std::size_t>(p[a].n) + static_cast<std::size_t>(ip[a]);
    return idx;
}

double HamiltonianTable::interpolate(double tq, const Vec& xq, const Vec& pq) const {
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
    locate(t, tq, base[0], frac[0]);
    dims[0] = t.n;
    for (int a = 0; a < dim; ++a) {
        locate(x[a], xq[a], base[1 + a], frac[1 + a]);
        dims[1 + a] = x[a].n;
    }
    for (int a = 0; a < dim; ++a) {
        locate(p[a], pq[a], base[1 + dim + a], frac[1 + dim + a]);
        dims[1 + dim + a] = p[a].n;
    }
    double acc = 0.0;
    for (int corner = 0; corner < (1 << na); ++corner) {
        double w = 1.0;
        std::size_t idx = 0;
        for (int a = 0; a < na; ++a) {
            const int hi = (corner >> a) & 1;
            w *= hi ? frac[a] : 1.0 - frac[a];
            const int jj = std::min(base[a] + hi, dims[a] - 1);
            idx = idx * static_cast<std::size_t>(dims[a]) + static_cast<std::size_t>(jj);
        }
        if (w == 0.0) continue;
        acc += w * values[idx];
    }
    return acc;
}

HamiltonianTable build_hamiltonian_table(const model::ModelSpec& m,
                                         const cell::EffectiveLagrangianTable& table,
                                         const LatticeAxis& t_axis,
                                         const std::vector<LatticeAxis>& x_axes,
                                         const std::vector<LatticeAxis>& p_axes,
                                         const HamOptions& opt, int workers) {
    HamiltonianTable ht;
    ht.dim = m.dim();
    ht.t = t_axis;
    ht.x = x_axes;
    ht.p = p_axes;
    ht.model_hash = m.hash();
    ht.control_radius = table.lattice.u[0].hi();
    ht.values.assign(ht.size(), 0.0);
    ht.argmax.assign(ht.size(), Vec::zero(ht.dim));

    std::int64_t jobs = static_cast<std::int64_t>(ht.size());
    parallel_for(workers, jobs, [&](std::int64_t job) {
        // decode (it, ix..., ip...)
        std::int64_t rest = job;
        IVec ip = IVec::zero(ht.dim), ix = IVec::zero(ht.dim);
        for (int a = ht.dim - 1; a >= 0; --a) {
            ip[a] = rest % p_axes[a].n;
            rest /= p_axes[a].n;
        }
        for (int a = ht.dim - 1; a >= 0; --a) {
            ix[a] = rest % x_axes[a].n;
            rest /= x_axes[a].n;
        }
        const int it = static_cast<int>(rest);
        Vec x = Vec::zero(ht.dim), p = Vec::zero(ht.dim);
        for (int a = 0; a < ht.dim; ++a) {
            x[a] = x_axes[a].at(static_cast<int>(ix[a]));
            p[a] = p_axes[a].at(static_cast<int>(ip[a]));
        }
        ht.values[static_cast<std::size_t>(job)] =
            effective_hamiltonian(m, table, t_axis.at(it), x, p, opt);
    });
    return ht;
}

solve::ValueField solve_hjb(const model::ModelSpec& m, const HamAccessor& H,
                            const solve::GridSpec& grid, const HjbOptions& opt) {
    const int dim = m.dim();
    solve::ValueField vf;
    vf.grid = grid;
    vf.dim = dim;
    vf.kind = solve::FieldKind::hjb;
    vf.model_hash = m.hash();

    const int slices = grid.time_slices();
    const double dt = (grid.t_end - grid.t_start) / (slices - 1);
    const std::size_t nodes = grid.nodes_per_slice();
    vf.values.assign(static_cast<std::size_t>(slices), std::vector<double>(nodes, 0.0));
    vf.policy.assign(static_cast<std::size_t>(slices),
                     std::vector<Vec>(nodes, Vec::zero(dim)));
    auto& top = vf.values.back();
    for (std::size_t j = 0; j < nodes; ++j)
        top[j] = m.lagrangian.terminal_cost(grid.node(j, dim));

    // Dissipation coefficients from sampled dH/dp over the slope range the
    // march can produce (the terminal Lipschitz constant, plus headroom).
    // Control-driven Hamiltonians always satisfy |dH/dp| <= f^*(K), which
    // caps the estimate and covers sampling failures.
    double p_max = opt.p_max;
    if (p_max <= 0.0) {
        double psi_lip = 0.0;
        for (std::size_t j = 0; j + 1 < nodes; ++j)
            psi_lip = std::max(psi_lip, std::abs(top[j + 1] - top[j]) / grid.dx);
        p_max = 1.2 * psi_lip + 0.1;
    }
    const double alpha_cap = m.dynamics.f_star(grid.control_radius);
    double alpha[2] = {0.0, 0.0};
    {
        const double hp = 1e-4 * std::max(1.0, p_max);
        const int npx = 9, npp = 21;
        for (int a = 0; a < dim; ++a) {
            bool sampled_ok = true;
            for (int i = 0; i < npx && sampled_ok; ++i) {
                Vec x = grid.space_box.lo +
                        (grid.space_box.hi - grid.space_box.lo) * (static_cast<double>(i) / (npx - 1));
                for (int k = 0; k < npp; ++k) {
                    Vec p = Vec::zero(dim);
                    p[a] = -p_max + 2.0 * p_max * k / (npp - 1);
                    Vec pp = p, pm = p;
                    pp[a] += hp;
                    pm[a] -= hp;
                    try {
                        const double d =
                            std::abs(H(grid.t_end, x, pp) - H(grid.t_end, x, pm)) / (2.0 * hp);
                        alpha[a] = std::max(alpha[a], d);
                    } catch (const std::exception&) {
                        sampled_ok = false;
                        break;
                    }
                }
            }
            alpha[a] = sampled_ok ? alpha[a] * 1.05 : alpha_cap;
        }
    }
    double cfl = 0.0;
    for (int a = 0; a < dim; ++a) cfl += alpha[a] * dt / grid.dx;
    if (cfl > 1.0) {
        std::ostringstream os;
        os << "solve_hjb: CFL violation (sum alpha dt/dx = " << cfl
           << "); use dt <= " << dt / cfl;
        throw NumericalError(os.str());
    }

    const int n0 = grid.nodes_per_axis(0);
    const int n1 = dim == 2 ? grid.nodes_per_axis(1) : 1;
    auto flat = [&](int i, int j) {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(n1) +
               static_cast<std::size_t>(j);
    };

    for (int s = slices - 2; s >= 0; --s) {
        const auto& nxt = vf.values[static_cast<std::size_t>(s + 1)];
        auto& cur = vf.values[static_cast<std::size_t>(s)];
        const double t = grid.time_at(s);
        parallel_for(opt.workers, static_cast<std::int64_t>(nodes), [&](std::int64_t jj) {
            const std::size_t idx = static_cast<std::size_t>(jj);
            const int i = static_cast<int>(jj / n1);
            const int j = static_cast<int>(jj % n1);
            const Vec x = grid.node(idx, dim);
            double dplus[2] = {0.0, 0.0}, dminus[2] = {0.0, 0.0};
            {
                const int ip = std::min(i + 1, n0 - 1), im = std::max(i - 1, 0);
                const double fwd = (nxt[flat(ip, j)] - nxt[flat(i, j)]) /
                                   (ip == i ? grid.dx : (ip - i) * grid.dx);
                const double bwd = (nxt[flat(i, j)] - nxt[flat(im, j)]) /
                                   (im == i ? grid.dx : (i - im) * grid.dx);
                dplus[0] = ip == i ? bwd : fwd;
                dminus[0] = im == i ? fwd : bwd;
            }
            if (dim == 2) {
                const int jp = std::min(j + 1, n1 - 1), jm = std::max(j - 1, 0);
                const double fwd = (nxt[flat(i, jp)] - nxt[flat(i, j)]) /
                                   (jp == j ? grid.dx : (jp - j) * grid.dx);
                const double bwd = (nxt[flat(i, j)] - nxt[flat(i, jm)]) /
                                   (jm == j ? grid.dx : (j - jm) * grid.dx);
                dplus[1] = jp == j ? bwd : fwd;
                dminus[1] = jm == j ? fwd : bwd;
            }
            Vec pbar = Vec::zero(dim);
            double dissipation = 0.0;
            for (int a = 0; a < dim; ++a) {
                pbar[a] = 0.5 * (dplus[a] + dminus[a]);
                dissipation += 0.5 * alpha[a] * (dplus[a] - dminus[a]);
            }
            cur[idx] = nxt[idx] - dt * (H(t, x, pbar) - dissipation);
        });
    }
    return vf;
}

}  // namespace homlab::xform
