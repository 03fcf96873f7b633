#include "billiards/loops.hpp"

#include <cmath>
#include <sstream>

namespace billiards {

DiscreteLoop::DiscreteLoop(std::vector<Vec> verts) : vertices(std::move(verts)) {
    if (vertices.empty()) throw Error("a loop needs at least one vertex");
    const int n = vertices.front().size();
    for (const Vec& v : vertices) {
        if (v.size() != n) throw Error("loop vertices have mixed dimensions");
        if (!v.finite()) throw Error("loop vertex is not finite");
    }
}

double loop_length(const DiscreteLoop& loop) {
    const auto& v = loop.vertices;
    double len = 0;
    for (size_t i = 0; i < v.size(); ++i) len += distance(v[i], v[(i + 1) % v.size()]);
    return len;
}

namespace {

// Applies fn to every vertex and `edge_samples` interior points per edge;
// stops early when fn returns true.
template <typename Fn>
bool any_sample(const DiscreteLoop& loop, int edge_samples, Fn&& fn) {
    const auto& v = loop.vertices;
    for (size_t i = 0; i < v.size(); ++i) {
        if (fn(v[i])) return true;
        const Vec& a = v[i];
        const Vec& b = v[(i + 1) % v.size()];
        for (int s = 1; s <= edge_samples; ++s) {
            if (fn(lerp(a, b, static_cast<double>(s) / (edge_samples + 1)))) return true;
        }
    }
    return false;
}

}  // namespace

bool in_closure(const ImplicitDomain& d, const DiscreteLoop& loop, int edge_samples) {
    return !any_sample(loop, edge_samples,
                       [&](const Vec& x) { return d.value(x) > d.tol_boundary(); });
}

bool escapes(const ImplicitDomain& d, const DiscreteLoop& loop, int edge_samples) {
    return any_sample(loop, edge_samples,
                      [&](const Vec& x) { return d.value(x) >= -d.tol_boundary(); });
}

DiscreteLoop concatenate(const std::vector<DiscreteLoop>& loops) {
    if (loops.empty()) throw Error("concatenate: empty loop list");
    const Vec& base = loops.front().basepoint();
    std::vector<Vec> verts;
    for (const DiscreteLoop& loop : loops) {
        if (distance(loop.basepoint(), base) > 1e-12)
            throw Error("concatenate: basepoint mismatch of " +
                        format_double(distance(loop.basepoint(), base)));
        // each loop starts at the shared basepoint, so appending vertex lists
        // closes every factor through the basepoint and lengths add exactly
        verts.insert(verts.end(), loop.vertices.begin(), loop.vertices.end());
    }
    return DiscreteLoop(std::move(verts));
}

bool avoids_point(const DiscreteLoop& loop, const Vec& p, double clearance, int edge_samples) {
    return !any_sample(loop, edge_samples,
                       [&](const Vec& x) { return distance(x, p) <= clearance; });
}

std::string loops_to_csv(const std::vector<DiscreteLoop>& loops) {
    std::ostringstream out;
    const int n = loops.empty() ? 0 : loops.front().dim();
    out << "loop_id,vertex_index";
    for (int i = 0; i < n; ++i) out << ",x" << i;
    out << "\n";
    for (size_t id = 0; id < loops.size(); ++id) {
        const auto& v = loops[id].vertices;
        for (size_t k = 0; k < v.size(); ++k) {
            out << id << "," << k;
            for (int i = 0; i < n; ++i) out << "," << format_double(v[k][i], 17);
            out << "\n";
        }
    }
    return out.str();
}

}  // namespace billiards
