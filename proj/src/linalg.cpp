#include "billiards/linalg.hpp"

#include <algorithm>
#include <cstdio>

namespace billiards {

std::string format_double(double x, int significant) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", significant, x);
    return buf;
}

bool solve_dense(Mat a, std::vector<double> b, std::vector<double>& x, double tol) {
    const int n = a.rows();
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int i = col + 1; i < n; ++i)
            if (std::fabs(a(i, col)) > std::fabs(a(piv, col))) piv = i;
        if (std::fabs(a(piv, col)) < tol) return false;
        if (piv != col) {
            for (int j = 0; j < n; ++j) std::swap(a(piv, j), a(col, j));
            std::swap(b[piv], b[col]);
        }
        for (int i = col + 1; i < n; ++i) {
            double f = a(i, col) / a(col, col);
            if (f == 0) continue;
            for (int j = col; j < n; ++j) a(i, j) -= f * a(col, j);
            b[i] -= f * b[col];
        }
    }
    x.assign(n, 0.0);
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
        x[i] = s / a(i, i);
    }
    return true;
}

std::vector<double> symmetric_eigenvalues(Mat a, int sweeps) {
    const int n = a.rows();
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        double off = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off < 1e-30) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::fabs(a(p, q)) < 1e-300) continue;
                double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1));
                double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (int i = 0; i < n; ++i) ev[i] = a(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

std::vector<Vec> orthonormal_complement(const Vec& u) {
    const int n = u.size();
    std::vector<Vec> basis;
    basis.reserve(n - 1);
    for (int axis = 0; axis < n && static_cast<int>(basis.size()) < n - 1; ++axis) {
        Vec e(n);
        e[axis] = 1.0;
        Vec w = e - u * dot(e, u);
        for (const Vec& b : basis) w -= b * dot(w, b);
        double m = norm(w);
        if (m > 1e-6) basis.push_back(w * (1.0 / m));
    }
    if (static_cast<int>(basis.size()) != n - 1) throw Error("failed to build tangent basis");
    return basis;
}

}  // namespace billiards
