#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "billiards/common.hpp"
#include "billiards/expr.hpp"

namespace billiards {

/// Projection onto the boundary did not converge; carries the best candidate.
struct ProjectionError : Error {
    ProjectionError(const std::string& msg, Vec best, double residual)
        : Error(msg), best_candidate(best), residual(residual) {}
    Vec best_candidate;
    double residual;
};

/// A point on the zero set of F together with the unit outward normal
/// grad F / |grad F|.
struct BoundaryPoint {
    Vec point;
    Vec normal;
};

/// A bounded domain V = {F < 0} described by an implicit function. The
/// geometric ground truth for every other module. Immutable; all member
/// queries are pure and safe to call concurrently.
class ImplicitDomain {
  public:
    /// Verifies on construction that the interior is nonempty inside the
    /// bounding box (seed sampling) and that |grad F| >= 1e-6 on sampled
    /// boundary points, a smooth-boundary proxy.
    ImplicitDomain(Expression f, Box bounding_box, double tol_boundary = 1e-9,
                   std::string name = "", std::optional<Vec> star_center = std::nullopt);

    int dim() const { return f_.dimension(); }
    const Expression& f() const { return f_; }
    const Box& bounding_box() const { return bbox_; }
    double tol_boundary() const { return tol_; }
    const std::string& name() const { return name_; }
    const std::optional<Vec>& star_center() const { return star_center_; }

    double value(const Vec& x) const { return f_.value(x); }
    Vec gradient(const Vec& x) const { return f_.gradient(x); }
    Jet2 jet(const Vec& x) const { return f_.eval_jet(x); }

  private:
    Expression f_;
    Box bbox_;
    double tol_;
    std::string name_;
    std::optional<Vec> star_center_;
};

using DomainPtr = std::shared_ptr<const ImplicitDomain>;

/// Membership test: open V when closure = false, closed V-bar otherwise.
bool contains(const ImplicitDomain& d, const Vec& x, bool closure);

/// Unit outward normal at a point on (or very near) the boundary.
Vec boundary_normal(const ImplicitDomain& d, const Vec& y);

/// Nearest boundary point: damped Newton on the KKT system of
/// min |y - x|^2 s.t. F(y) = 0, seeded from directional ray bisection hits.
/// Robust on nonconvex domains where naive gradient steps find a non-nearest
/// point. Throws ProjectionError when no seed converges.
BoundaryPoint project_to_boundary(const ImplicitDomain& d, const Vec& x);

/// First zero of F along x + t * dir for t in (0, t_max], by marching and
/// bisection; nullopt when the ray never crosses the boundary.
std::optional<Vec> first_boundary_hit(const ImplicitDomain& d, const Vec& x, const Vec& dir,
                                      double t_max);

/// Warm-started KKT Newton from a known nearby boundary point. Returns
/// nullopt when the iteration fails to converge.
std::optional<BoundaryPoint> project_newton(const ImplicitDomain& d, const Vec& x,
                                            const Vec& start, int max_iter = 40);

/// Exact-projection distance to the boundary (not an F-value proxy).
double distance_to_boundary(const ImplicitDomain& d, const Vec& x);

struct InradiusResult {
    double r;
    Vec incenter;
};

/// Inradius sup_x dist(x, boundary) by multistart pattern search over
/// interior grid seeds. The distance field is treated as non-smooth
/// (medial axis), hence coordinate-wise search with a shrinking step.
InradiusResult inradius(const ImplicitDomain& d, int seed_grid);

/// True iff F <= tol_boundary at `samples` equispaced interior points of
/// the segment [a, b].
bool segment_in_closure(const ImplicitDomain& d, const Vec& a, const Vec& b, int samples);

/// Warm multistart evaluator for dist(q, boundary) along a continuous path
/// of query points. Tracks a set of candidate boundary feet found by a full
/// ray-fan multistart and warm-updates them per query; the fan is re-run
/// whenever the query drifts a fraction of the clearance away from the last
/// fan position (or after `max_queries` warm updates), so medial-axis
/// crossings do not leave the tracker following a non-nearest foot.
class DistanceTracker {
  public:
    explicit DistanceTracker(const ImplicitDomain& d, int max_queries = 64);

    double distance(const Vec& q);
    /// Boundary foot achieving the most recent distance() result.
    const BoundaryPoint& nearest() const { return nearest_; }
    /// grad of dist at the last query (unit vector from foot toward q).
    Vec distance_gradient(const Vec& q) const;
    /// Distance gap between the nearest and second-nearest tracked feet at
    /// the last query; infinity with fewer than two feet. Small gaps flag
    /// medial-axis proximity, where grad dist flips between branches.
    double nearest_gap() const { return nearest_gap_; }
    /// Bumped on every fan re-run; callers caching distances can use it to
    /// tell when previously returned values should be re-queried.
    long generation() const { return generation_; }

  private:
    void refresh(const Vec& q);
    const ImplicitDomain& domain_;
    int max_queries_;
    int since_refresh_ = 0;
    long generation_ = 0;
    Vec refresh_q_;
    double refresh_d_ = 0;
    double nearest_gap_ = 0;
    std::vector<BoundaryPoint> candidates_;
    BoundaryPoint nearest_;
};

}  // namespace billiards
