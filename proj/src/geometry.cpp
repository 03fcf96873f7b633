#include "billiards/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "billiards/linalg.hpp"
#include "billiards/parallel.hpp"

namespace billiards {
namespace {

constexpr double kMinGradNorm = 1e-6;  // smooth-boundary proxy

// Deterministic direction fan: equal angles in the plane, Fibonacci points
// on the sphere, seeded draws above n = 3.
std::vector<Vec> direction_fan(int n, int count) {
    std::vector<Vec> dirs;
    dirs.reserve(count);
    if (n == 2) {
        for (int i = 0; i < count; ++i) {
            double a = 2.0 * M_PI * i / count + 0.37;
            dirs.push_back({std::cos(a), std::sin(a)});
        }
    } else if (n == 3) {
        const double golden = M_PI * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < count; ++i) {
            double z = 1.0 - 2.0 * (i + 0.5) / count;
            double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
            dirs.push_back({rho * std::cos(golden * i), rho * std::sin(golden * i), z});
        }
    } else {
        std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
        for (int i = 0; i < count; ++i) dirs.push_back(uniform_direction(rng, n));
    }
    return dirs;
}

// First zero of F along x + t*dir for t in (0, t_max], bracketing by
// marching then bisection. Root is located to ~1e-14 * t_max in t.
std::optional<Vec> ray_boundary_hit(const ImplicitDomain& d, const Vec& x, const Vec& dir,
                                    double t_max) {
    const int march_steps = 256;
    double f0 = d.value(x);
    double t_prev = 0, f_prev = f0;
    for (int i = 1; i <= march_steps; ++i) {
        double t = t_max * i / march_steps;
        double f = d.value(x + dir * t);
        if ((f_prev < 0) != (f < 0) || f == 0) {
            double lo = t_prev, hi = t;
            for (int b = 0; b < 64; ++b) {
                double mid = 0.5 * (lo + hi);
                double fm = d.value(x + dir * mid);
                if ((fm < 0) == (f_prev < 0))
                    lo = mid;
                else
                    hi = mid;
            }
            return x + dir * (0.5 * (lo + hi));
        }
        t_prev = t;
        f_prev = f;
    }
    return std::nullopt;
}

}  // namespace

std::optional<Vec> first_boundary_hit(const ImplicitDomain& d, const Vec& x, const Vec& dir,
                                      double t_max) {
    return ray_boundary_hit(d, x, dir, t_max);
}

bool contains(const ImplicitDomain& d, const Vec& x, bool closure) {
    if (!x.finite()) throw Error("membership test at non-finite point");
    double f = d.value(x);
    return closure ? f <= d.tol_boundary() : f < -d.tol_boundary();
}

Vec boundary_normal(const ImplicitDomain& d, const Vec& y) {
    Vec g = d.gradient(y);
    double m = norm(g);
    if (m < kMinGradNorm)
        throw Error("gradient norm " + format_double(m) +
                    " below smooth-boundary threshold at a boundary point");
    return g * (1.0 / m);
}

std::optional<BoundaryPoint> project_newton(const ImplicitDomain& d, const Vec& x,
                                            const Vec& start, int max_iter) {
    // Newton on the KKT system of min |y-x|^2 s.t. F(y) = 0, reduced to the
    // boundary: eliminate the multiplier and the normal coordinate, leaving
    // a tangential step s solving (I + dhat * II) s = t, where t is the
    // tangential offset, dhat the signed normal offset and II the second
    // fundamental form. Exact in one step on circles/spheres; quadratic in
    // general. Each iteration re-snaps onto the zero set along grad F.
    const int n = d.dim();
    const double scale = std::max(1.0, d.bounding_box().diagonal());
    const double tol_t = 1e-13 * scale;

    Vec y = start;
    Jet2 jet;
    auto eval = [&](const Vec& q, Jet2& out) {
        try {
            out = d.jet(q);
        } catch (const EvalError&) {
            return false;
        }
        return true;
    };
    if (!eval(y, jet)) return std::nullopt;

    // The distance value is flat where the KKT system degenerates (x at a
    // curvature center), so accept feet whose tangential misalignment moves
    // the distance by provably less than 1e-10 * scale.
    auto value_converged = [&](double t_norm) {
        Vec offset = x - y;
        double dist = norm(offset);
        if (dist <= 1e-12 * scale) return true;
        return t_norm * t_norm / (2.0 * dist) <= 1e-10 * scale;
    };

    double prev_t = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        // snap to the zero set along the gradient (up to 3 Newton steps)
        for (int snap = 0; snap < 3; ++snap) {
            double gg = dot(jet.gradient, jet.gradient);
            if (gg < kMinGradNorm * kMinGradNorm) return std::nullopt;
            if (std::fabs(jet.value) <= 1e-14 * scale) break;
            Vec y_new = y - jet.gradient * (jet.value / gg);
            Jet2 j_new;
            if (!eval(y_new, j_new)) return std::nullopt;
            y = y_new;
            jet = j_new;
        }
        if (std::fabs(jet.value) > 1e-11 * scale) return std::nullopt;

        double gm = norm(jet.gradient);
        if (gm < kMinGradNorm) return std::nullopt;
        Vec nu = jet.gradient * (1.0 / gm);
        std::vector<Vec> tau = orthonormal_complement(nu);
        Vec e = x - y;
        double dhat = dot(e, nu);

        std::vector<double> t(n - 1);
        double t_norm = 0;
        for (int a = 0; a < n - 1; ++a) {
            t[a] = dot(e, tau[a]);
            t_norm += t[a] * t[a];
        }
        t_norm = std::sqrt(t_norm);
        if (t_norm <= tol_t || value_converged(t_norm))
            return BoundaryPoint{y, nu};
        if (t_norm > 0.9 * prev_t && iter > 4) return std::nullopt;  // stagnating
        prev_t = t_norm;

        // (I + dhat * II) s = t with II_ab = tau_a^T H tau_b / |grad F|
        Mat m(n - 1, n - 1);
        for (int a = 0; a < n - 1; ++a)
            for (int b = 0; b < n - 1; ++b) {
                double hab = 0;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) hab += tau[a][i] * jet.hessian(i, j) * tau[b][j];
                m(a, b) = (a == b ? 1.0 : 0.0) + dhat * hab / gm;
            }
        std::vector<double> s;
        if (!solve_dense(m, t, s, 1e-10)) {
            // curvature-center degeneracy: fall back to an undamped
            // tangential slide; the value test above decides acceptance
            s = t;
        }
        double s_norm = 0;
        for (double v : s) s_norm += v * v;
        s_norm = std::sqrt(s_norm);
        double cap = 0.25 * scale;
        double factor = s_norm > cap ? cap / s_norm : 1.0;
        Vec y_new = y;
        for (int a = 0; a < n - 1; ++a) y_new += tau[a] * (factor * s[a]);
        if (!eval(y_new, jet)) return std::nullopt;
        y = y_new;
    }
    return std::nullopt;
}

BoundaryPoint project_to_boundary(const ImplicitDomain& d, const Vec& x) {
    const double diag = d.bounding_box().diagonal();

    // Collect boundary candidates from a fan of ray bisections.
    std::vector<Vec> hits;
    if (std::fabs(d.value(x)) <= d.tol_boundary()) hits.push_back(x);
    for (const Vec& dir : direction_fan(d.dim(), 32)) {
        if (auto hit = ray_boundary_hit(d, x, dir, diag)) hits.push_back(*hit);
    }
    if (hits.empty())
        throw ProjectionError("no boundary found along any search ray", x,
                              std::fabs(d.value(x)));
    std::sort(hits.begin(), hits.end(),
              [&](const Vec& a, const Vec& b) { return distance(a, x) < distance(b, x); });

    // Newton-polish deduplicated hits; keep the closest converged foot.
    std::optional<BoundaryPoint> best;
    Vec best_raw = hits.front();
    int polished = 0;
    for (const Vec& hit : hits) {
        bool duplicate = false;
        for (int i = 0; i < polished && !duplicate; ++i)
            duplicate = distance(hit, hits[i]) < 1e-9 * diag;
        if (duplicate) continue;
        if (polished >= 12) break;
        ++polished;
        if (auto foot = project_newton(d, x, hit, 30)) {
            if (!best || distance(foot->point, x) < distance(best->point, x)) best = *foot;
        }
    }
    if (!best) {
        // Tangential-slide fallback: snap to the boundary, then slide along
        // the tangent toward x until the offset is normal. Linear rate, but
        // it tolerates the curvature-center degeneracy.
        Vec y = best_raw;
        for (int iter = 0; iter < 400; ++iter) {
            Jet2 j = d.jet(y);
            double gg = dot(j.gradient, j.gradient);
            if (gg < kMinGradNorm * kMinGradNorm) break;
            y -= j.gradient * (j.value / gg);
            j = d.jet(y);
            Vec nu = j.gradient * (1.0 / norm(j.gradient));
            Vec t = (x - y) - nu * dot(x - y, nu);
            if (norm(t) < 1e-12 * std::max(1.0, diag)) {
                if (std::fabs(j.value) < 1e-10 * std::max(1.0, diag))
                    return BoundaryPoint{y, nu};
                break;
            }
            y += t * 0.7;
        }
        throw ProjectionError("boundary projection did not converge", best_raw,
                              std::fabs(d.value(best_raw)));
    }
    return *best;
}

double distance_to_boundary(const ImplicitDomain& d, const Vec& x) {
    if (!contains(d, x, true))
        throw Error("distance_to_boundary: point is outside the domain closure (F = " +
                    format_double(d.value(x)) + ")");
    return distance(project_to_boundary(d, x).point, x);
}

bool segment_in_closure(const ImplicitDomain& d, const Vec& a, const Vec& b, int samples) {
    for (int i = 1; i <= samples; ++i) {
        double t = static_cast<double>(i) / (samples + 1);
        if (d.value(lerp(a, b, t)) > d.tol_boundary()) return false;
    }
    return true;
}

// --- DistanceTracker -------------------------------------------------------

DistanceTracker::DistanceTracker(const ImplicitDomain& d, int max_queries)
    : domain_(d), max_queries_(max_queries) {}

void DistanceTracker::refresh(const Vec& q) {
    const double diag = domain_.bounding_box().diagonal();
    std::vector<BoundaryPoint> feet;
    for (const Vec& dir : direction_fan(domain_.dim(), 16)) {
        auto hit = ray_boundary_hit(domain_, q, dir, diag);
        if (!hit) continue;
        if (auto foot = project_newton(domain_, q, *hit)) {
            bool duplicate = false;
            for (const auto& f : feet)
                if (billiards::distance(f.point, foot->point) < 1e-9 * diag) {
                    duplicate = true;
                    break;
                }
            if (!duplicate) feet.push_back(*foot);
        }
    }
    if (feet.empty()) {
        // fall back to the fully robust path (throws if truly stuck)
        feet.push_back(project_to_boundary(domain_, q));
    }
    std::sort(feet.begin(), feet.end(), [&](const BoundaryPoint& a, const BoundaryPoint& b) {
        return billiards::distance(a.point, q) < billiards::distance(b.point, q);
    });
    if (feet.size() > 4) feet.resize(4);
    candidates_ = std::move(feet);
    since_refresh_ = 0;
    ++generation_;
    refresh_q_ = q;
    refresh_d_ = billiards::distance(candidates_.front().point, q);
}

double DistanceTracker::distance(const Vec& q) {
    bool stale = candidates_.empty() || ++since_refresh_ >= max_queries_ ||
                 billiards::distance(q, refresh_q_) >
                     std::max(0.4 * refresh_d_, 1e-4 * domain_.bounding_box().diagonal());
    if (!stale) {
        for (auto& c : candidates_) {
            auto foot = project_newton(domain_, q, c.point, 12);
            if (!foot) {
                // a failed warm update means the query jumped out of this
                // foot's basin; distrust the whole candidate set
                stale = true;
                break;
            }
            c = *foot;
        }
    }
    if (stale) refresh(q);
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates_) {
        double dist = billiards::distance(c.point, q);
        if (dist < best) {
            second = best;
            best = dist;
            nearest_ = c;
        } else if (dist < second) {
            second = dist;
        }
    }
    nearest_gap_ = second - best;
    return best;
}

Vec DistanceTracker::distance_gradient(const Vec& q) const {
    Vec delta = q - nearest_.point;
    double m = norm(delta);
    if (m < 1e-14) throw Error("distance gradient undefined on the boundary");
    return delta * (1.0 / m);
}

// --- inradius ---------------------------------------------------------------

InradiusResult inradius(const ImplicitDomain& d, int seed_grid) {
    if (seed_grid < 8) throw Error("inradius: seed_grid must be >= 8");
    const Box& box = d.bounding_box();
    const int n = d.dim();

    std::vector<Vec> seeds;
    std::vector<int> counter(n, 0);
    while (true) {
        Vec x(n);
        for (int i = 0; i < n; ++i)
            x[i] = box.lo[i] + box.extent(i) * (counter[i] + 0.5) / seed_grid;
        if (contains(d, x, false)) seeds.push_back(x);
        int axis = 0;
        while (axis < n && ++counter[axis] == seed_grid) counter[axis++] = 0;
        if (axis == n) break;
    }
    if (seeds.empty())
        throw Error("inradius: no interior seed found on a " + std::to_string(seed_grid) +
                    "-per-axis grid; the domain may be thin, try a finer grid");

    // Distance at every seed (the reported r must dominate all of them).
    std::vector<double> seed_dist(seeds.size());
    parallel_for(static_cast<int>(seeds.size()),
                 [&](int i) { seed_dist[i] = distance_to_boundary(d, seeds[i]); });

    // Ascend from the best few well-separated seeds.
    std::vector<int> order(seeds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (seed_dist[a] != seed_dist[b]) return seed_dist[a] > seed_dist[b];
        return a < b;
    });
    double pitch = 0;
    for (int i = 0; i < n; ++i) pitch = std::max(pitch, box.extent(i) / seed_grid);
    std::vector<int> starts;
    for (int i : order) {
        bool crowded = false;
        for (int s : starts)
            if (distance(seeds[i], seeds[s]) < 2.0 * pitch) {
                crowded = true;
                break;
            }
        if (!crowded) starts.push_back(i);
        if (starts.size() >= 8) break;
    }

    const double step0 = box.diagonal() / seed_grid;
    std::vector<InradiusResult> results(starts.size());
    parallel_for(static_cast<int>(starts.size()), [&](int si) {
        Vec x = seeds[starts[si]];
        double dx = seed_dist[starts[si]];
        double step = step0;
        for (int sweep = 0; sweep < 4000 && step > 1e-8; ++sweep) {
            bool improved = false;
            for (int axis = 0; axis < n && !improved; ++axis) {
                for (int sign = -1; sign <= 1 && !improved; sign += 2) {
                    Vec y = x;
                    y[axis] += sign * step;
                    if (!contains(d, y, false)) continue;
                    double dy = distance_to_boundary(d, y);
                    if (dy > dx) {
                        x = y;
                        dx = dy;
                        improved = true;
                    }
                }
            }
            if (!improved) step *= 0.5;
        }
        results[si] = {dx, x};
    });

    InradiusResult best{0, seeds[order[0]]};
    for (const auto& res : results)
        if (res.r > best.r) best = res;
    best.r = distance_to_boundary(d, best.incenter);  // robust final value
    return best;
}

// --- ImplicitDomain ---------------------------------------------------------

ImplicitDomain::ImplicitDomain(Expression f, Box bounding_box, double tol_boundary,
                               std::string name, std::optional<Vec> star_center)
    : f_(std::move(f)),
      bbox_(bounding_box),
      tol_(tol_boundary),
      name_(std::move(name)),
      star_center_(std::move(star_center)) {
    if (bbox_.dim() != f_.dimension())
        throw Error("bounding box dimension does not match expression dimension");
    if (tol_ <= 0) throw Error("tol_boundary must be positive");

    // Nonempty interior, by seed sampling.
    const int n = dim();
    const int grid = n <= 2 ? 16 : 8;
    std::optional<Vec> interior;
    std::vector<int> counter(n, 0);
    while (!interior) {
        Vec x(n);
        for (int i = 0; i < n; ++i)
            x[i] = bbox_.lo[i] + bbox_.extent(i) * (counter[i] + 0.5) / grid;
        double fv;
        try {
            fv = f_.value(x);
        } catch (const EvalError&) {
            fv = 1.0;
        }
        if (fv < -tol_) interior = x;
        int axis = 0;
        while (axis < n && ++counter[axis] == grid) counter[axis++] = 0;
        if (axis == n) break;
    }
    if (!interior)
        throw Error("domain '" + name_ + "' has no interior point on the seed grid");

    // Smooth-boundary proxy: |grad F| on sampled boundary points.
    for (const Vec& dir : direction_fan(n, 16)) {
        auto hit = ray_boundary_hit(*this, *interior, dir, bbox_.diagonal());
        if (!hit) continue;
        double gm = norm(f_.gradient(*hit));
        if (gm < kMinGradNorm)
            throw Error("domain '" + name_ + "': |grad F| = " + format_double(gm) +
                        " at a sampled boundary point; boundary is not numerically smooth");
    }

    if (star_center_) {
        if (star_center_->size() != n) throw Error("star_center dimension mismatch");
        if (f_.value(*star_center_) >= -tol_)
            throw Error("declared star_center is not an interior point");
    }
}

}  // namespace billiards
