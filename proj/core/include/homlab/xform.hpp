#pragma once

#include <functional>
#include <vector>

#include "homlab/cell.hpp"
#include "homlab/geometry.hpp"
#include "homlab/model.hpp"
#include "homlab/solve.hpp"

namespace homlab::xform {

struct HamOptions {
    int grid_n = 129;        // sup-scan points per control axis
    double radius = 0.0;     // 0 = auto-derived from |p| via the coercive envelope
    int refine_iters = 32;   // golden-section refinement per axis
};

// Pointwise Hamiltonian sup_v { -f(x,v).p - L(t,x,y,v) }. Pass y = nullptr
// for Lagrangians without a fast argument (the medium still enters when the
// model carries one and y is given). Retries once with a doubled radius if
// the sup lands on the scan boundary, then throws NumericalError.
double hamiltonian(const model::ModelSpec& m, double t, const Vec& x, const Vec* y,
                   const Vec& p, const HamOptions& opt = {});

// Same transform driven by an effective-Lagrangian table; the sup scans the
// table's control lattice with multilinear interpolation plus one
// golden-section pass per axis.
double effective_hamiltonian(const model::ModelSpec& m,
                             const cell::EffectiveLagrangianTable& table, double t,
                             const Vec& x, const Vec& p, const HamOptions& opt = {});

struct HamiltonianTable {
    int dim = 1;
    LatticeAxis t;
    std::vector<LatticeAxis> x;
    std::vector<LatticeAxis> p;
    std::vector<double> values;
    std::vector<Vec> argmax;
    double control_radius = 0.0;
    std::string model_hash;

    std::size_t size() const;
    std::size_t index(int it, const IVec& ix, const IVec& ip) const;

    // Multilinear accessor over (t, x, p); queries clamp to the lattice hull.
    double interpolate(double t, const Vec& x, const Vec& p) const;
};

// Tabulate H-tilde over a (t, x, p) lattice for export and plotting.
HamiltonianTable build_hamiltonian_table(const model::ModelSpec& m,
                                         const cell::EffectiveLagrangianTable& table,
                                         const LatticeAxis& t_axis,
                                         const std::vector<LatticeAxis>& x_axes,
                                         const std::vector<LatticeAxis>& p_axes,
                                         const HamOptions& opt, int workers);

using HamAccessor = std::function<double(double, const Vec&, const Vec&)>;

struct HjbOptions {
    double p_max = 0.0;  // 0 = derived from the terminal data slope
    int workers = 1;
};

// Monotone Lax-Friedrichs march of -dV/dt + H(t,x,DV) = 0 backward from the
// terminal condition. Throws NumericalError with a suggested dt when the CFL
// bound dt * sum_a alpha_a / dx <= 1 fails.
solve::ValueField solve_hjb(const model::ModelSpec& m, const HamAccessor& H,
                            const solve::GridSpec& grid, const HjbOptions& opt = {});

}  // namespace homlab::xform
