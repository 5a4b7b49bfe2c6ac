#include "homlab/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "homlab/errors.hpp"
#include "homlab/rng.hpp"

namespace homlab::env {

namespace {

constexpr double kPi = 3.14159265358979323846;

// C1 ramp on [0,1] with slope <= 1.5.
double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

double checker_amplitude(const EnvironmentSpec& s, std::uint64_t seed,
                         std::int64_t i0, std::int64_t i1) {
    const double u = u01(hash_key(seed, salt::checker_amplitude, i0, i1));
    return s.v_min + (s.v_max - s.v_min) * u;
}

// Per-axis blended cell weights. Returns the base cell index and the weight
// of the *next* cell; weight is nonzero only inside the trailing margin.
void axis_blend(double y, double cell, double margin, std::int64_t& idx, double& w_next) {
    const double q = y / cell;
    double f = q - std::floor(q);
    idx = static_cast<std::int64_t>(std::floor(q));
    if (margin <= 0.0 || f < 1.0 - margin) {
        w_next = 0.0;
    } else {
        w_next = smoothstep((f - (1.0 - margin)) / margin);
    }
}

double eval_checkerboard(const EnvironmentSpec& s, std::uint64_t seed, const Vec& y) {
    std::int64_t i0 = 0, i1 = 0;
    double w0 = 0.0, w1 = 0.0;
    axis_blend(y[0], s.cell_size, s.blend_margin, i0, w0);
    if (s.dimension == 1) {
        const double a = checker_amplitude(s, seed, i0, 0);
        const double b = checker_amplitude(s, seed, i0 + 1, 0);
        return (1.0 - w0) * a + w0 * b;
    }
    axis_blend(y[1], s.cell_size, s.blend_margin, i1, w1);
    double v = 0.0;
    for (int dx = 0; dx <= 1; ++dx)
        for (int dy = 0; dy <= 1; ++dy) {
            const double w = (dx ? w0 : 1.0 - w0) * (dy ? w1 : 1.0 - w1);
            if (w > 0.0) v += w * checker_amplitude(s, seed, i0 + dx, i1 + dy);
        }
    return v;
}

double bump_shape(BumpProfile p, double r_over_rb) {
    if (r_over_rb >= 1.0) return 0.0;
    if (p == BumpProfile::cosine) return 0.5 * (1.0 + std::cos(kPi * r_over_rb));
    const double q = r_over_rb * r_over_rb;
    return std::exp(1.0 - 1.0 / (1.0 - q));
}

double eval_shot_noise(const EnvironmentSpec& s, std::uint64_t seed, const Vec& y) {
    const double w = s.cell_size;       // candidate-cell side
    const double rb = s.cell_size;      // bump radius
    const double p_keep = s.intensity * std::pow(w, s.dimension);
    const double amp_lo = std::max(0.0, s.v_min);

    double sum = 0.0;
    const std::int64_t c0 = static_cast<std::int64_t>(std::floor(y[0] / w));
    const std::int64_t c1 =
        s.dimension == 2 ? static_cast<std::int64_t>(std::floor(y[1] / w)) : 0;
    const int ring1 = s.dimension == 2 ? 1 : 0;
    for (std::int64_t di = -1; di <= 1; ++di) {
        for (std::int64_t dj = -ring1; dj <= ring1; ++dj) {
            const std::int64_t ix = c0 + di;
            const std::int64_t iy = c1 + dj;
            if (u01(hash_key(seed, salt::shot_presence, ix, iy)) >= p_keep) continue;
            Vec center = Vec::zero(s.dimension);
            center[0] = (static_cast<double>(ix) +
                         u01(hash_key(seed, salt::shot_jitter0, ix, iy))) * w;
            if (s.dimension == 2)
                center[1] = (static_cast<double>(iy) +
                             u01(hash_key(seed, salt::shot_jitter1, ix, iy))) * w;
            const double r = (y - center).norm();
            if (r >= rb) continue;
            const double amp =
                amp_lo + (s.v_max - amp_lo) * u01(hash_key(seed, salt::shot_amplitude, ix, iy));
            sum += amp * bump_shape(s.profile, r / rb);
        }
    }
    return std::min(sum, s.v_max);
}

double eval_periodic(const EnvironmentSpec& s, const Vec& y) {
    // Mean over axes of the reference profile (1 - cos), rescaled to the
    // amplitude range; 1-d with range [0,2] gives exactly 1 - cos(2 pi y).
    double acc = 0.0;
    for (int i = 0; i < s.dimension; ++i)
        acc += 0.5 * (1.0 - std::cos(2.0 * kPi * y[i] / s.cell_size));
    acc /= s.dimension;
    return s.v_min + (s.v_max - s.v_min) * acc;
}

double eval_raw(const EnvironmentSpec& s, std::uint64_t seed, const Vec& y) {
    switch (s.kind) {
        case FieldKind::periodic:
            return eval_periodic(s, y);
        case FieldKind::checkerboard:
            return eval_checkerboard(s, seed, y);
        case FieldKind::shot_noise:
            return eval_shot_noise(s, seed, y);
    }
    return 0.0;
}

}  // namespace

void EnvironmentSpec::validate() const {
    if (dimension != 1 && dimension != 2)
        throw ConfigError("environment: dimension must be 1 or 2");
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
        throw ConfigError("environment: cell_size/period must be positive");
    if (!std::isfinite(v_min) || !std::isfinite(v_max) || v_min > v_max)
        throw ConfigError("environment: need finite v_min <= v_max");
    if (kind == FieldKind::shot_noise) {
        if (!(intensity > 0.0)) throw ConfigError("environment: intensity must be > 0");
        if (intensity * std::pow(cell_size, dimension) > 1.0)
            throw ConfigError(
                "environment: intensity * cell volume exceeds 1 candidate point per cell");
        if (v_min < 0.0)
            throw ConfigError("environment: shot-noise amplitudes need v_min >= 0");
    }
    if (kind == FieldKind::checkerboard &&
        (blend_margin < 0.0 || blend_margin > 0.5))
        throw ConfigError("environment: blend_margin must lie in [0, 0.5]");
}

double EnvironmentSpec::value_lo() const {
    return kind == FieldKind::shot_noise ? 0.0 : v_min;
}

double EnvironmentSpec::value_hi() const { return v_max; }

double EnvironmentSpec::lipschitz() const {
    const double dv = v_max - value_lo();
    switch (kind) {
        case FieldKind::periodic:
            return dv * kPi / cell_size;  // max slope of the rescaled 1-cos profile
        case FieldKind::checkerboard:
            if (blend_margin <= 0.0) return 1e300;  // raw field is discontinuous
            return dimension * 1.5 * dv / (blend_margin * cell_size);
        case FieldKind::shot_noise: {
            // At most 3^d overlapping bumps; cosine slope pi/2, bump slope < 2.
            const double per_bump = (profile == BumpProfile::cosine ? kPi / 2.0 : 2.0);
            return std::pow(3.0, dimension) * v_max * per_bump / cell_size;
        }
    }
    return 0.0;
}

std::string EnvironmentSpec::describe() const {
    std::ostringstream os;
    switch (kind) {
        case FieldKind::periodic: os << "periodic"; break;
        case FieldKind::checkerboard: os << "checkerboard"; break;
        case FieldKind::shot_noise: os << "shot_noise"; break;
    }
    os << " d=" << dimension << " cell=" << cell_size << " range=[" << v_min << ","
       << v_max << "]";
    if (kind == FieldKind::shot_noise)
        os << " intensity=" << intensity
           << " profile=" << (profile == BumpProfile::cosine ? "cosine" : "bump");
    if (kind == FieldKind::checkerboard) os << " margin=" << blend_margin;
    return os.str();
}

EnvironmentHandle create_environment(const EnvironmentSpec& spec, std::uint64_t seed) {
    spec.validate();
    EnvironmentHandle h;
    h.spec = spec;
    h.seed = seed;
    h.offset = Vec::zero(spec.dimension);
    return h;
}

double evaluate_potential(const EnvironmentHandle& h, const Vec& y) {
    Vec q = Vec::zero(h.spec.dimension);
    for (int i = 0; i < h.spec.dimension; ++i)
        q[i] = (i < y.dim ? y[i] : 0.0) + h.offset[i];
    return eval_raw(h.spec, h.seed, q);
}

EnvironmentHandle shift_environment(const EnvironmentHandle& h, const Vec& r) {
    EnvironmentHandle s = h;
    for (int i = 0; i < h.spec.dimension; ++i) s.offset[i] += (i < r.dim ? r[i] : 0.0);
    return s;
}

double estimate_spatial_mean(const EnvironmentHandle& h, double box_side, int n_samples) {
    if (!(box_side > 0.0)) throw ConfigError("estimate_spatial_mean: box_side must be > 0");
    if (n_samples < 1) throw ConfigError("estimate_spatial_mean: n_samples must be >= 1");
    const int d = h.spec.dimension;
    double acc = 0.0;
    if (d == 1) {
        for (int i = 0; i < n_samples; ++i) {
            const double u = (i + u01(hash_key(h.seed, salt::spatial_mean, i, 0))) / n_samples;
            acc += evaluate_potential(h, Vec(u * box_side));
        }
        return acc / n_samples;
    }
    // 2-d: stratify along a square grid of ~n_samples cells.
    const int m = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(n_samples))));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const double ux = (i + u01(hash_key(h.seed, salt::spatial_mean, i, j))) / m;
            const double uy =
                (j + u01(hash_key(h.seed, salt::spatial_mean, j + 7919, i))) / m;
            acc += evaluate_potential(h, Vec(ux * box_side, uy * box_side));
        }
    return acc / (static_cast<double>(m) * m);
}

std::vector<FieldSample> sample_field(const EnvironmentHandle& h, const Box& window,
                                      int points_per_axis) {
    std::vector<FieldSample> out;
    const int d = h.spec.dimension;
    const int n = std::max(2, points_per_axis);
    if (d == 1) {
        out.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            Vec y(window.lo[0] + (window.hi[0] - window.lo[0]) * i / (n - 1));
            out.push_back({y, evaluate_potential(h, y)});
        }
    } else {
        out.reserve(static_cast<size_t>(n) * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                Vec y(window.lo[0] + (window.hi[0] - window.lo[0]) * i / (n - 1),
                      window.lo[1] + (window.hi[1] - window.lo[1]) * j / (n - 1));
                out.push_back({y, evaluate_potential(h, y)});
            }
    }
    return out;
}

}  // namespace homlab::env

namespace homlab {
std::string format_vec(const Vec& v) {
    std::ostringstream os;
    os << "(";
    for (int i = 0; i < v.dim; ++i) os << (i ? "," : "") << v[i];
    os << ")";
    return os.str();
}
}  // namespace homlab
