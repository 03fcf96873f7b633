#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace billiards {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised by the expression parser; carries the offset of the offending token.
struct ParseError : Error {
    ParseError(const std::string& msg, int pos) : Error(msg), position(pos) {}
    int position;
};

/// Raised when evaluation hits a domain error (sqrt of a negative, 1/0).
struct EvalError : Error {
    EvalError(const std::string& msg, std::string subexpr)
        : Error(msg), subexpression(std::move(subexpr)) {}
    std::string subexpression;
};

/// Fixed-capacity point/vector in R^n, n <= 8. Value type, no allocation.
class Vec {
  public:
    static constexpr int kMaxDim = 8;

    Vec() = default;
    explicit Vec(int n, double fill = 0.0) : n_(check_dim(n)) {
        for (int i = 0; i < n_; ++i) v_[i] = fill;
    }
    Vec(std::initializer_list<double> xs) : n_(check_dim(static_cast<int>(xs.size()))) {
        int i = 0;
        for (double x : xs) v_[i++] = x;
    }
    static Vec from(const std::vector<double>& xs) {
        Vec v(static_cast<int>(xs.size()));
        for (int i = 0; i < v.n_; ++i) v.v_[i] = xs[i];
        return v;
    }
    std::vector<double> to_vector() const { return {v_, v_ + n_}; }

    int size() const { return n_; }
    double operator[](int i) const { return v_[i]; }
    double& operator[](int i) { return v_[i]; }
    const double* data() const { return v_; }

    Vec& operator+=(const Vec& o) {
        for (int i = 0; i < n_; ++i) v_[i] += o.v_[i];
        return *this;
    }
    Vec& operator-=(const Vec& o) {
        for (int i = 0; i < n_; ++i) v_[i] -= o.v_[i];
        return *this;
    }
    Vec& operator*=(double s) {
        for (int i = 0; i < n_; ++i) v_[i] *= s;
        return *this;
    }
    friend Vec operator+(Vec a, const Vec& b) { return a += b; }
    friend Vec operator-(Vec a, const Vec& b) { return a -= b; }
    friend Vec operator*(Vec a, double s) { return a *= s; }
    friend Vec operator*(double s, Vec a) { return a *= s; }
    friend Vec operator-(Vec a) { return a *= -1.0; }
    friend bool operator==(const Vec& a, const Vec& b) {
        if (a.n_ != b.n_) return false;
        for (int i = 0; i < a.n_; ++i)
            if (a.v_[i] != b.v_[i]) return false;
        return true;
    }

    bool finite() const {
        for (int i = 0; i < n_; ++i)
            if (!std::isfinite(v_[i])) return false;
        return true;
    }

  private:
    static int check_dim(int n) {
        if (n < 0 || n > kMaxDim) throw Error("vector dimension out of range: " + std::to_string(n));
        return n;
    }
    int n_ = 0;
    double v_[kMaxDim] = {};
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (int i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}
inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec& a, const Vec& b) { return norm(a - b); }
inline Vec normalized(const Vec& a) {
    double m = norm(a);
    if (m == 0) throw Error("cannot normalize zero vector");
    return a * (1.0 / m);
}
inline Vec lerp(const Vec& a, const Vec& b, double t) { return a + (b - a) * t; }

/// Axis-aligned box.
struct Box {
    Vec lo, hi;

    int dim() const { return lo.size(); }
    Vec center() const { return (lo + hi) * 0.5; }
    double diagonal() const { return distance(lo, hi); }
    double extent(int axis) const { return hi[axis] - lo[axis]; }
    bool contains(const Vec& x) const {
        for (int i = 0; i < dim(); ++i)
            if (x[i] < lo[i] || x[i] > hi[i]) return false;
        return true;
    }
    Box scaled(double factor) const {
        Vec c = center();
        return {c + (lo - c) * factor, c + (hi - c) * factor};
    }
};

/// Deterministic xoshiro-free uniform helpers on top of a 64-bit generator.
/// Using raw bit draws keeps streams identical across standard libraries.
template <typename Rng>
double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
template <typename Rng>
double uniform(Rng& rng, double a, double b) {
    return a + (b - a) * uniform01(rng);
}
template <typename Rng>
Vec uniform_in_box(Rng& rng, const Box& box) {
    Vec x(box.dim());
    for (int i = 0; i < box.dim(); ++i) x[i] = uniform(rng, box.lo[i], box.hi[i]);
    return x;
}
/// Uniform direction on the unit sphere (Gaussian-free Marsaglia rejection).
template <typename Rng>
Vec uniform_direction(Rng& rng, int n) {
    while (true) {
        Vec u(n);
        for (int i = 0; i < n; ++i) u[i] = uniform(rng, -1.0, 1.0);
        double m = norm(u);
        if (m > 1e-3 && m <= 1.0) return u * (1.0 / m);
    }
}

std::string format_double(double x, int significant = 9);

}  // namespace billiards
