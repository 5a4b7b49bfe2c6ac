#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <string>

namespace homlab {

// Points, velocities and controls all live in R^d with d in {1, 2}.
// A fixed-capacity value type keeps the whole stack allocation-free.
struct Vec {
    std::array<double, 2> c{0.0, 0.0};
    int dim = 1;

    Vec() = default;
    explicit Vec(double x) : c{x, 0.0}, dim(1) {}
    Vec(double x, double y) : c{x, y}, dim(2) {}

    static Vec zero(int d) {
        Vec v;
        v.dim = d;
        return v;
    }

    double& operator[](int i) { return c[static_cast<size_t>(i)]; }
    double operator[](int i) const { return c[static_cast<size_t>(i)]; }

    Vec operator+(const Vec& o) const {
        assert(dim == o.dim);
        Vec r = *this;
        for (int i = 0; i < dim; ++i) r.c[i] += o.c[i];
        return r;
    }
    Vec operator-(const Vec& o) const {
        assert(dim == o.dim);
        Vec r = *this;
        for (int i = 0; i < dim; ++i) r.c[i] -= o.c[i];
        return r;
    }
    Vec operator*(double s) const {
        Vec r = *this;
        for (int i = 0; i < dim; ++i) r.c[i] *= s;
        return r;
    }
    Vec operator/(double s) const { return *this * (1.0 / s); }
    Vec operator-() const { return *this * -1.0; }
    Vec& operator+=(const Vec& o) { return *this = *this + o; }

    double dot(const Vec& o) const {
        assert(dim == o.dim);
        double s = 0.0;
        for (int i = 0; i < dim; ++i) s += c[i] * o.c[i];
        return s;
    }
    double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }
    double norm_inf() const {
        double m = 0.0;
        for (int i = 0; i < dim; ++i) m = std::max(m, std::abs(c[i]));
        return m;
    }
    bool finite() const {
        for (int i = 0; i < dim; ++i)
            if (!std::isfinite(c[i])) return false;
        return true;
    }
};

inline Vec operator*(double s, const Vec& v) { return v * s; }

// Integer lattice index, same dimensionality conventions as Vec.
struct IVec {
    std::array<std::int64_t, 2> c{0, 0};
    int dim = 1;

    IVec() = default;
    explicit IVec(std::int64_t x) : c{x, 0}, dim(1) {}
    IVec(std::int64_t x, std::int64_t y) : c{x, y}, dim(2) {}

    static IVec zero(int d) {
        IVec v;
        v.dim = d;
        return v;
    }

    std::int64_t& operator[](int i) { return c[static_cast<size_t>(i)]; }
    std::int64_t operator[](int i) const { return c[static_cast<size_t>(i)]; }

    IVec operator+(const IVec& o) const {
        assert(dim == o.dim);
        IVec r = *this;
        for (int i = 0; i < dim; ++i) r.c[i] += o.c[i];
        return r;
    }
    IVec operator-(const IVec& o) const {
        assert(dim == o.dim);
        IVec r = *this;
        for (int i = 0; i < dim; ++i) r.c[i] -= o.c[i];
        return r;
    }
    bool operator==(const IVec& o) const {
        if (dim != o.dim) return false;
        for (int i = 0; i < dim; ++i)
            if (c[i] != o.c[i]) return false;
        return true;
    }
};

inline IVec round_to_lattice(const Vec& v, double spacing) {
    IVec r = IVec::zero(v.dim);
    for (int i = 0; i < v.dim; ++i) r[i] = std::llround(v[i] / spacing);
    return r;
}

inline Vec lattice_point(const IVec& j, double spacing) {
    Vec r = Vec::zero(j.dim);
    for (int i = 0; i < j.dim; ++i) r[i] = static_cast<double>(j[i]) * spacing;
    return r;
}

// Axis-aligned box, used for solver domains and report windows.
struct Box {
    Vec lo = Vec::zero(1);
    Vec hi = Vec::zero(1);

    int dim() const { return lo.dim; }
    bool contains(const Vec& p) const {
        for (int i = 0; i < dim(); ++i)
            if (p[i] < lo[i] || p[i] > hi[i]) return false;
        return true;
    }
    Vec clamp(const Vec& p) const {
        Vec r = p;
        for (int i = 0; i < dim(); ++i) r[i] = std::min(std::max(r[i], lo[i]), hi[i]);
        return r;
    }
    // Central fraction of the box (e.g. 0.5 keeps the middle half per axis).
    Box central(double fraction) const {
        Box b = *this;
        for (int i = 0; i < dim(); ++i) {
            const double mid = 0.5 * (lo[i] + hi[i]);
            const double half = 0.5 * (hi[i] - lo[i]) * fraction;
            b.lo[i] = mid - half;
            b.hi[i] = mid + half;
        }
        return b;
    }
};

// Uniform 1-d lattice {lo + i*step : 0 <= i < n}.
struct LatticeAxis {
    double lo = 0.0;
    double step = 1.0;
    int n = 1;

    double at(int i) const { return lo + step * i; }
    double hi() const { return at(n - 1); }
};

std::string format_vec(const Vec& v);

}  // namespace homlab
