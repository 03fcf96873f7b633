#pragma once

#include <string>
#include <vector>

#include "billiards/geometry.hpp"

namespace billiards {

/// Polyline loop in R^n: the desk-scale model of a W^{1,2} loop. The cyclic
/// vertex list is traversed in order and closed back to vertices[0], which
/// doubles as the basepoint. Immutable value type.
struct DiscreteLoop {
    std::vector<Vec> vertices;

    DiscreteLoop() = default;
    explicit DiscreteLoop(std::vector<Vec> verts);
    static DiscreteLoop constant(const Vec& x) { return DiscreteLoop({x}); }

    const Vec& basepoint() const { return vertices.front(); }
    int dim() const { return vertices.front().size(); }
};

/// Cyclic polyline length.
double loop_length(const DiscreteLoop& loop);

/// Number of interior samples tested per edge by the membership predicates.
inline constexpr int kLoopEdgeSamples = 8;

/// True iff every vertex and `edge_samples` interior samples per edge lie in
/// the closed domain (F <= tol_boundary).
bool in_closure(const ImplicitDomain& d, const DiscreteLoop& loop,
                int edge_samples = kLoopEdgeSamples);

/// True iff the loop touches the boundary: some vertex or edge sample has
/// F >= -tol_boundary. Requires in_closure(d, loop); loops satisfying both
/// model membership in the complement of the open-loop space.
bool escapes(const ImplicitDomain& d, const DiscreteLoop& loop,
             int edge_samples = kLoopEdgeSamples);

/// Concatenation of loops sharing a basepoint (within 1e-12): one loop
/// traversing each input in order. Polyline length is exactly additive.
DiscreteLoop concatenate(const std::vector<DiscreteLoop>& loops);

/// True iff every vertex and edge sample keeps distance > clearance from p.
bool avoids_point(const DiscreteLoop& loop, const Vec& p, double clearance,
                  int edge_samples = kLoopEdgeSamples);

/// CSV rows "loop_id,vertex_index,x0,x1,..." for rendering.
std::string loops_to_csv(const std::vector<DiscreteLoop>& loops);

}  // namespace billiards
