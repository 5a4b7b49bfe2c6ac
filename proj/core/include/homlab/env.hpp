#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homlab/geometry.hpp"

namespace homlab::env {

enum class FieldKind { periodic, checkerboard, shot_noise };
enum class BumpProfile { cosine, bump };

// Law of the random potential. `periodic` is the deterministic reference
// field; `checkerboard` draws i.i.d. uniform amplitudes per cell (mollified
// across a blend margin so a finite modulus of continuity exists);
// `shot_noise` superposes compactly supported bumps on a thinned point
// process realized lazily per cell.
struct EnvironmentSpec {
    FieldKind kind = FieldKind::periodic;
    int dimension = 1;
    double cell_size = 1.0;  // period (periodic), cell side (checkerboard),
                             // bump radius and candidate-cell side (shot noise)
    double v_min = 0.0;
    double v_max = 1.0;
    BumpProfile profile = BumpProfile::cosine;  // shot noise only
    double intensity = 1.0;                     // points per unit volume (shot noise)
    double blend_margin = 0.1;                  // checkerboard mollifier, fraction of cell

    void validate() const;  // throws ConfigError

    // Range actually attained by evaluations. Shot-noise fields vanish on
    // empty regions, so their lower bound is 0 regardless of v_min.
    double value_lo() const;
    double value_hi() const;

    // Lipschitz constant of y -> V(y), recorded into the model modulus m_L.
    double lipschitz() const;

    std::string describe() const;
};

// A realized field omega together with an accumulated translation. Handles
// are immutable values; evaluation is pure.
struct EnvironmentHandle {
    EnvironmentSpec spec;
    std::uint64_t seed = 0;
    Vec offset = Vec::zero(1);
};

EnvironmentHandle create_environment(const EnvironmentSpec& spec, std::uint64_t seed);

double evaluate_potential(const EnvironmentHandle& h, const Vec& y);

// Exact group action: evaluate(shift(h, r), y) == evaluate(h, y + r).
EnvironmentHandle shift_environment(const EnvironmentHandle& h, const Vec& r);

// Stratified Monte-Carlo average of the potential over [0, box_side]^d,
// stream derived from (seed, "mean"). Ergodicity diagnostic.
double estimate_spatial_mean(const EnvironmentHandle& h, double box_side, int n_samples);

// Deterministic field dump for plotting: rows (y..., value) over a lattice.
struct FieldSample {
    Vec y;
    double value;
};
std::vector<FieldSample> sample_field(const EnvironmentHandle& h, const Box& window,
                                      int points_per_axis);

}  // namespace homlab::env
