#include "billiards/smoothed_flow.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "billiards/linalg.hpp"
#include "billiards/parallel.hpp"

namespace billiards {

SmoothedHamiltonian::SmoothedHamiltonian(DomainPtr domain, double eps)
    : domain_(std::move(domain)), eps_(eps) {
    if (eps_ <= 0) throw Error("smoothed Hamiltonian needs eps > 0");
}

double SmoothedHamiltonian::h(const Vec& q) const {
    double d = distance_to_boundary(*domain_, q);
    if (d <= 0) throw Error("h undefined on the boundary");
    return 1.0 / (d * d);
}

double SmoothedHamiltonian::energy(const Vec& q, const Vec& p) const {
    return 0.5 * dot(p, p) + eps_ * h(q);
}

Vec SmoothedHamiltonian::grad_potential(const Vec& q) const {
    BoundaryPoint foot = project_to_boundary(*domain_, q);
    Vec delta = q - foot.point;
    double d = norm(delta);
    if (d <= 0) throw Error("grad of eps*h undefined on the boundary");
    // grad(eps d^-2) = -2 eps d^-3 grad d, with grad d the unit inward offset
    return delta * (-2.0 * eps_ / (d * d * d * d));
}

namespace {

// Shared integration core: a kick-drift-kick stepper with a warm distance
// tracker and recursive substepping near the wall.
class Stepper {
  public:
    explicit Stepper(const SmoothedHamiltonian& h)
        : h_(h), domain_(h.domain()), tracker_(h.domain()) {}

    double dist(const Vec& q) { return tracker_.distance(q); }

    Vec grad_w(const Vec& q) {
        double d = tracker_.distance(q);
        Vec gd = tracker_.distance_gradient(q);
        return gd * (-2.0 * h_.eps() / (d * d * d));
    }

    double energy(const Vec& q, const Vec& p) {
        double d = tracker_.distance(q);
        return 0.5 * dot(p, p) + h_.eps() / (d * d);
    }

    /// One step of size dt; false when q escapes the open domain.
    /// Substeps recursively near the wall (force-magnitude trigger) and near
    /// the medial axis, where grad dist jumps between branches and an
    /// unrefined step picks up an O(eps dt) energy kick.
    bool step(Vec& q, Vec& p, double dt, int depth = 0, int medial_depth = 0) {
        Vec g = grad_w(q);
        bool stiff = norm(g) * dt > 0.01 && depth < 42;
        bool medial = medial_depth < 7 &&
                      tracker_.nearest_gap() < 6.0 * dt * (norm(p) + 0.1) && depth < 42;
        if (stiff || medial) {
            int md = medial_depth + (medial ? 1 : 0);
            return step(q, p, 0.5 * dt, depth + 1, md) && step(q, p, 0.5 * dt, depth + 1, md);
        }
        p -= g * (0.5 * dt);
        q += p * dt;
        if (domain_.value(q) > -domain_.tol_boundary()) return false;
        p -= grad_w(q) * (0.5 * dt);
        return true;
    }

    /// Integrates a state copy forward by `span` using ceil(span/dt_cap)
    /// substeps; used by event refinement.
    bool advance_copy(Vec q, Vec p, double span, double dt_cap, Vec& q_out, Vec& p_out) {
        int pieces = std::max(1, static_cast<int>(std::ceil(span / dt_cap)));
        double h_step = span / pieces;
        for (int i = 0; i < pieces; ++i)
            if (!step(q, p, h_step)) return false;
        q_out = q;
        p_out = p;
        return true;
    }

  private:
    const SmoothedHamiltonian& h_;
    const ImplicitDomain& domain_;
    DistanceTracker tracker_;
};

}  // namespace

IntegrationResult integrate(const SmoothedHamiltonian& h, Vec q, Vec p, double dt, int steps) {
    if (dt <= 0) throw Error("integrate: dt must be positive");
    Stepper st(h);
    IntegrationResult out;
    out.states.reserve(steps + 1);
    double e0 = st.energy(q, p);
    out.states.push_back({0.0, q, p, e0});
    for (int i = 1; i <= steps; ++i) {
        if (!st.step(q, p, dt)) {
            out.escaped = true;
            break;
        }
        double e = st.energy(q, p);
        out.states.push_back({i * dt, q, p, e});
        out.max_energy_drift = std::max(out.max_energy_drift, std::fabs(e - e0));
    }
    return out;
}

// --- periodic orbits ----------------------------------------------------------

namespace {

struct TurningEvent {
    double t;
    Vec q, p;
};

// Integrates forward until |p|^2 passes through a local minimum below
// `threshold`, then refines the event time by bisection on p . nhat, where
// nhat is the wall direction at the near-turning point.
std::optional<TurningEvent> next_turning(Stepper& st, Vec q, Vec p, double dt, double t_budget,
                                         double threshold = 0.04) {
    double m_prev = dot(p, p);
    Vec q_prev = q, p_prev = p;
    double t = 0;
    bool armed = false;  // |p|^2 must rise above threshold before an event counts
    int max_steps = static_cast<int>(t_budget / dt) + 1;
    for (int i = 0; i < max_steps; ++i) {
        Vec q_new = q, p_new = p;
        if (!st.step(q_new, p_new, dt)) return std::nullopt;
        t += dt;
        double m_new = dot(p_new, p_new);
        double m_cur = dot(p, p);
        if (m_cur > 4 * threshold) armed = true;
        if (armed && i >= 1 && m_cur < threshold && m_cur <= m_prev && m_cur <= m_new) {
            // local min at t - dt: refine within [t - 2dt, t] from the state
            // at t - 2dt
            Vec nhat = st.grad_w(q);
            double gn = norm(nhat);
            if (gn == 0) return std::nullopt;
            nhat *= 1.0 / gn;
            auto e_of = [&](double span, Vec& qe, Vec& pe) {
                if (!st.advance_copy(q_prev, p_prev, span, dt * 0.51, qe, pe))
                    return std::numeric_limits<double>::quiet_NaN();
                return dot(pe, nhat);
            };
            Vec qe, pe;
            double lo = 0, hi = 2 * dt;
            double e_lo = e_of(1e-12 * dt + lo, qe, pe);
            double e_hi = e_of(hi, qe, pe);
            if (std::isnan(e_lo) || std::isnan(e_hi)) return std::nullopt;
            if ((e_lo < 0) == (e_hi < 0)) {
                // no sign change: fall back to the parabola vertex of |p|^2
                double denom = m_prev - 2 * m_cur + m_new;
                double vertex = denom > 0 ? 0.5 * (m_prev - m_new) / denom : 0.0;
                double span = dt + std::clamp(vertex, -1.0, 1.0) * dt;
                if (std::isnan(e_of(span, qe, pe))) return std::nullopt;
                return TurningEvent{t - 2 * dt + span, qe, pe};
            }
            for (int b = 0; b < 60; ++b) {
                double mid = 0.5 * (lo + hi);
                double em = e_of(mid, qe, pe);
                if (std::isnan(em)) return std::nullopt;
                ((em < 0) == (e_lo < 0) ? lo : hi) = mid;
                if (hi - lo < 1e-13 * std::max(1.0, t)) break;
            }
            double span = 0.5 * (lo + hi);
            if (std::isnan(e_of(span, qe, pe))) return std::nullopt;
            return TurningEvent{t - 2 * dt + span, qe, pe};
        }
        q_prev = q;
        p_prev = p;
        m_prev = m_cur;
        q = q_new;
        p = p_new;
    }
    return std::nullopt;
}

// Minimizes |z(t) - z0| over t in [tau_lo, tau_hi] along the fixed-dt
// trajectory (full steps to the last grid point before tau_lo, then a
// remainder chunked exactly like assemble_orbit does), so the defect the
// caller later measures is the defect of one and the same discrete orbit.
std::pair<double, double> refine_closure(const SmoothedHamiltonian& h, const Vec& q0,
                                         const Vec& p0, double tau_lo, double tau_hi,
                                         double dt) {
    Stepper st(h);
    Vec q = q0, p = p0;
    int grid_steps = std::max(0, static_cast<int>(std::floor(tau_lo / dt)));
    for (int i = 0; i < grid_steps; ++i)
        if (!st.step(q, p, dt)) throw Error("orbit escaped while refining the period");
    double t_base = grid_steps * dt;

    auto defect_at = [&](double span) {
        Vec qe = q, pe = p;
        if (span > 0 && !st.advance_copy(q, p, span, dt * 0.51, qe, pe))
            return std::numeric_limits<double>::infinity();
        return std::sqrt(dot(qe - q0, qe - q0) + dot(pe - p0, pe - p0));
    };

    // golden-section search, locally convex near the closure
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = std::max(0.0, tau_lo - t_base), b = tau_hi - t_base;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = defect_at(x1), f2 = defect_at(x2);
    for (int it = 0; it < 80 && b - a > 1e-14 * std::max(1.0, t_base); ++it) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = defect_at(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = defect_at(x2);
        }
    }
    double span = f1 <= f2 ? x1 : x2;
    return {t_base + span, std::min(f1, f2)};
}

SmoothedOrbit assemble_orbit(const SmoothedHamiltonian& h, const Vec& q0, const Vec& p0,
                             double period, double dt) {
    Stepper st(h);
    SmoothedOrbit orbit;
    orbit.eps = h.eps();
    orbit.period = period;
    orbit.dt = dt;
    Vec q = q0, p = p0;
    // drift is measured against the level value 1/2, per the orbit contract
    orbit.states.push_back({0.0, q, p, st.energy(q, p)});
    orbit.max_energy_drift = std::fabs(orbit.states.front().energy - 0.5);
    int full_steps = static_cast<int>(std::floor(period / dt));
    for (int i = 1; i <= full_steps; ++i) {
        if (!st.step(q, p, dt)) throw Error("orbit escaped the domain while assembling states");
        double e = st.energy(q, p);
        orbit.states.push_back({i * dt, q, p, e});
        orbit.max_energy_drift = std::max(orbit.max_energy_drift, std::fabs(e - 0.5));
    }
    double rest = period - full_steps * dt;
    if (rest > 1e-15 * std::max(1.0, period)) {
        Vec qe, pe;
        if (!st.advance_copy(q, p, rest, dt * 0.51, qe, pe))
            throw Error("orbit escaped the domain while assembling states");
        double e = st.energy(qe, pe);
        orbit.states.push_back({period, qe, pe, e});
        orbit.max_energy_drift = std::max(orbit.max_energy_drift, std::fabs(e - 0.5));
    }
    const FlowState& last = orbit.states.back();
    orbit.closure_defect =
        std::sqrt(dot(last.q - q0, last.q - q0) + dot(last.p - p0, last.p - p0));
    orbit.action = action(orbit);
    return orbit;
}

SmoothedOrbit symmetric_shooting(const SmoothedHamiltonian& h, Vec q, Vec p, double dt) {
    Stepper st(h);
    const double t_budget = 40.0 * (h.domain().bounding_box().diagonal() + 1.0);

    // roll to a turning point unless already at one
    if (norm(p) > 1e-8) {
        auto ev = next_turning(st, q, p, dt, t_budget);
        if (!ev) throw Error("symmetric shooting: no turning point found within budget");
        q = ev->q;
        p = ev->p;
    }
    // re-seed exactly on the brake configuration: p = 0 and the turning
    // distance sqrt(2 eps) along the local inward normal, so H = 1/2 to
    // projection accuracy
    BoundaryPoint foot = project_to_boundary(h.domain(), q);
    Vec inward = q - foot.point;
    double d = norm(inward);
    if (d <= 0) throw Error("symmetric shooting: turning point on the boundary");
    Vec q0 = foot.point + inward * (std::sqrt(2.0 * h.eps()) / d);
    Vec p0(q0.size());

    auto ev = next_turning(st, q0, p0, dt, t_budget);
    if (!ev) throw Error("symmetric shooting: opposite turning point not found within budget");
    double tau_est = 2.0 * ev->t;
    // Snap dt so the period is close to a whole number of steps: the closure
    // comparison then happens at matching leapfrog shadow phases and the
    // defect measures the true transverse miss, not the O(dt^2) shadow
    // offset of a fractional tail step.
    double dt_adj = tau_est / std::max(4.0, std::round(tau_est / dt));
    auto [period, defect] = refine_closure(h, q0, p0, std::max(dt_adj, tau_est - 2 * dt_adj),
                                           tau_est + 2 * dt_adj, dt_adj);
    (void)defect;

    SmoothedOrbit orbit = assemble_orbit(h, q0, p0, period, dt_adj);
    if (orbit.closure_defect > kTolClosure)
        throw Error("symmetric shooting: closure defect " + format_double(orbit.closure_defect) +
                    " exceeds " + format_double(kTolClosure));
    if (orbit.max_energy_drift > kTolEnergy)
        throw Error("symmetric shooting: energy drift " + format_double(orbit.max_energy_drift) +
                    " exceeds " + format_double(kTolEnergy));
    return orbit;
}

// Poincare-section coordinates: q in the hyperplane through q_ref normal to
// e, momentum tangential components; p . e recovered from H = 1/2.
struct Section {
    const SmoothedHamiltonian* h;
    Vec ref, e;
    std::vector<Vec> basis;
    int m;  // n - 1

    std::optional<std::pair<Vec, Vec>> unpack(const std::vector<double>& xi) const {
        Vec q = ref;
        for (int a = 0; a < m; ++a) q += basis[a] * xi[a];
        if (!contains(h->domain(), q, false)) return std::nullopt;
        Vec pt(q.size());
        double pt2 = 0;
        for (int a = 0; a < m; ++a) {
            pt += basis[a] * xi[m + a];
            pt2 += xi[m + a] * xi[m + a];
        }
        double pe2 = 2.0 * (0.5 - h->eps() * h->h(q)) - pt2;
        if (pe2 <= 0) return std::nullopt;
        return std::make_pair(q, pt + e * std::sqrt(pe2));
    }
    std::vector<double> pack(const Vec& q, const Vec& p) const {
        std::vector<double> xi(2 * m);
        for (int a = 0; a < m; ++a) {
            xi[a] = dot(q - ref, basis[a]);
            xi[m + a] = dot(p, basis[a]);
        }
        return xi;
    }
};

struct CrossingResult {
    std::vector<double> xi;
    double period;
    Vec q, p;
};

std::optional<CrossingResult> return_map(const Section& sec, const SmoothedHamiltonian& h,
                                         const std::vector<double>& xi, double dt) {
    auto state = sec.unpack(xi);
    if (!state) return std::nullopt;
    Stepper st(h);
    Vec q = state->first, p = state->second;
    const double t_budget = 40.0 * (h.domain().bounding_box().diagonal() + 1.0);
    double g_prev = 0;  // starts on the section
    Vec q_prev = q, p_prev = p;
    double t = 0;
    bool left = false;
    int max_steps = static_cast<int>(t_budget / dt) + 1;
    for (int i = 0; i < max_steps; ++i) {
        if (!st.step(q, p, dt)) return std::nullopt;
        t += dt;
        double g = dot(q - sec.ref, sec.e);
        if (g < -1e-6) left = true;
        if (left && g_prev < 0 && g >= 0 && dot(p, sec.e) > 0) {
            // refine the crossing time within [t - dt, t]
            double lo = 0, hi = dt;
            Vec qe = q, pe = p;
            for (int b = 0; b < 60; ++b) {
                double mid = 0.5 * (lo + hi);
                if (!st.advance_copy(q_prev, p_prev, mid, dt * 0.51, qe, pe))
                    return std::nullopt;
                ((dot(qe - sec.ref, sec.e) < 0) ? lo : hi) = mid;
                if (hi - lo < 1e-14 * std::max(1.0, t)) break;
            }
            double span = hi;
            if (!st.advance_copy(q_prev, p_prev, span, dt * 0.51, qe, pe)) return std::nullopt;
            return CrossingResult{sec.pack(qe, pe), t - dt + span, qe, pe};
        }
        g_prev = g;
        q_prev = q;
        p_prev = p;
    }
    return std::nullopt;
}

SmoothedOrbit return_map_newton(const SmoothedHamiltonian& h, const Vec& q, const Vec& p,
                                double dt) {
    const int n = h.domain().dim();
    if (norm(p) < 0.3)
        throw Error("return-map mode needs a transversal seed (|p| >= 0.3); "
                    "use symmetric shooting near turning points");
    Section sec{&h, q, normalized(p), orthonormal_complement(normalized(p)), n - 1};
    std::vector<double> xi = sec.pack(q, p);
    const int dim = 2 * (n - 1);

    double rn = std::numeric_limits<double>::infinity();
    double period = 0;
    for (int iter = 0; iter < 50; ++iter) {
        auto crossing = return_map(sec, h, xi, dt);
        if (!crossing) throw Error("return map: section never re-crossed within the time budget");
        std::vector<double> r(dim);
        rn = 0;
        for (int i = 0; i < dim; ++i) {
            r[i] = crossing->xi[i] - xi[i];
            rn += r[i] * r[i];
        }
        rn = std::sqrt(rn);
        period = crossing->period;
        if (rn <= 1e-10) break;

        Mat jac(dim, dim);
        const double fd = 1e-8;
        for (int col = 0; col < dim; ++col) {
            std::vector<double> xi_d = xi;
            xi_d[col] += fd;
            auto cd = return_map(sec, h, xi_d, dt);
            if (!cd) throw Error("return map: finite-difference probe lost the section");
            for (int row = 0; row < dim; ++row)
                jac(row, col) = ((cd->xi[row] - xi_d[row]) - r[row]) / fd;
        }
        std::vector<double> step;
        if (!solve_dense(jac, r, step)) throw Error("return map: singular Newton system");
        bool accepted = false;
        for (double alpha : {1.0, 0.5, 0.25, 0.125}) {
            std::vector<double> xi_new = xi;
            for (int i = 0; i < dim; ++i) xi_new[i] -= alpha * step[i];
            auto cn = return_map(sec, h, xi_new, dt);
            if (!cn) continue;
            double rn_new = 0;
            for (int i = 0; i < dim; ++i) {
                double ri = cn->xi[i] - xi_new[i];
                rn_new += ri * ri;
            }
            rn_new = std::sqrt(rn_new);
            if (rn_new < rn) {
                xi = std::move(xi_new);
                accepted = true;
                break;
            }
        }
        if (!accepted) break;  // stalled at the map's discretization noise floor
    }
    if (rn > 3e-8)
        throw Error("return map Newton did not converge in 50 iterations (residual " +
                    format_double(rn) + ")");

    // Start the orbit from the discrete crossing state itself (not the chart
    // reconstruction, whose exact-level p would sit off the integrated
    // energy shell by the drift and pollute the closure defect).
    auto final_crossing = return_map(sec, h, xi, dt);
    if (!final_crossing) throw Error("return map: converged point left the section chart");
    const Vec& q0 = final_crossing->q;
    const Vec& p0 = final_crossing->p;
    period = final_crossing->period;
    // match leapfrog shadow phases at the endpoints (see symmetric_shooting)
    double dt_adj = period / std::max(4.0, std::round(period / dt));
    auto [tau, defect] = refine_closure(h, q0, p0, std::max(dt_adj, period - 2 * dt_adj),
                                        period + 2 * dt_adj, dt_adj);
    (void)defect;
    SmoothedOrbit orbit = assemble_orbit(h, q0, p0, tau, dt_adj);
    if (orbit.closure_defect > kTolClosure)
        throw Error("return map: closure defect " + format_double(orbit.closure_defect) +
                    " exceeds " + format_double(kTolClosure));
    if (orbit.max_energy_drift > kTolEnergy)
        throw Error("return map: energy drift " + format_double(orbit.max_energy_drift));
    return orbit;
}

}  // namespace

SmoothedOrbit find_periodic_orbit(const SmoothedHamiltonian& h, const Vec& q, const Vec& p,
                                  OrbitMode mode, double dt) {
    double e = h.energy(q, p);
    if (std::fabs(e - 0.5) > kTolLevel)
        throw Error("seed is off the level set: H = " + format_double(e) +
                    ", |H - 1/2| > " + format_double(kTolLevel));
    return mode == OrbitMode::kSymmetricShooting ? symmetric_shooting(h, q, p, dt)
                                                 : return_map_newton(h, q, p, dt);
}

double action(const SmoothedOrbit& orbit) {
    double a = 0;
    for (size_t i = 0; i + 1 < orbit.states.size(); ++i) {
        const FlowState& s0 = orbit.states[i];
        const FlowState& s1 = orbit.states[i + 1];
        a += 0.5 * (dot(s0.p, s0.p) + dot(s1.p, s1.p)) * (s1.t - s0.t);
    }
    return a;
}

ContinuationResult continue_to_billiard(DomainPtr domain, const SmoothedOrbit& seed,
                                        const std::vector<double>& schedule, OrbitMode mode,
                                        double dt, double extract_tol) {
    if (schedule.empty()) throw Error("continuation: empty eps schedule");
    for (size_t i = 0; i + 1 < schedule.size(); ++i)
        if (schedule[i + 1] >= schedule[i])
            throw Error("continuation: schedule must be strictly decreasing");
    if (schedule.front() <= 0 || schedule.back() <= 0)
        throw Error("continuation: eps must be positive");
    if (std::fabs(seed.eps - schedule.front()) > 1e-12 * schedule.front())
        throw Error("continuation: seed orbit eps does not match the schedule head");

    ContinuationResult out;
    out.trace.push_back({seed.eps, seed.period, seed.action});
    const SmoothedOrbit* prev = &seed;
    SmoothedOrbit current;

    for (size_t k = 1; k < schedule.size(); ++k) {
        double eps = schedule[k];
        SmoothedHamiltonian h(domain, eps);
        // warm start from the previous orbit's turning state, re-scaled to
        // the new wall-layer width
        const FlowState* turning = &prev->states.front();
        for (const FlowState& s : prev->states)
            if (dot(s.p, s.p) < dot(turning->p, turning->p)) turning = &s;
        Vec q_seed = turning->q;
        Vec p_seed = turning->p;
        try {
            BoundaryPoint foot = project_to_boundary(*domain, q_seed);
            Vec inward = q_seed - foot.point;
            double d = norm(inward);
            if (d > 0 && mode == OrbitMode::kSymmetricShooting) {
                q_seed = foot.point + inward * (std::sqrt(2.0 * eps) / d);
                p_seed = Vec(q_seed.size());
            }
            current = find_periodic_orbit(h, q_seed, p_seed, mode, dt);
        } catch (const Error& e) {
            throw Error("continuation lost the orbit at eps = " + format_double(eps) +
                        " (last good eps = " + format_double(out.trace.back().eps) +
                        "): " + e.what());
        }
        out.trace.push_back({eps, current.period, current.action});
        prev = &current;
    }

    // Bounce extraction at the final eps: near-boundary arcs are maximal
    // state runs with dist < 3 sqrt(2 eps); each contributes the projection
    // of its closest-approach point.
    const SmoothedOrbit& fin = *prev;
    const double threshold = 3.0 * std::sqrt(2.0 * fin.eps);
    const int m = static_cast<int>(fin.states.size()) - 1;  // last state repeats z(0)
    if (m < 4) throw Error("continuation: final orbit has too few states for extraction");
    DistanceTracker tracker(*domain);
    std::vector<double> dist(m);
    for (int i = 0; i < m; ++i) dist[i] = tracker.distance(fin.states[i].q);

    std::vector<char> near(m);
    bool any_far = false;
    for (int i = 0; i < m; ++i) {
        near[i] = dist[i] < threshold;
        any_far = any_far || !near[i];
    }
    if (!any_far)
        throw Error("continuation: orbit never leaves the wall layer; cannot split arcs");

    // cyclic grouping of near-runs
    int start = 0;
    while (near[start]) ++start;  // a far state exists
    std::vector<std::pair<int, int>> arcs;  // [begin, end) in shifted index space
    int i = 0;
    while (i < m) {
        int gi = (start + i) % m;
        if (!near[gi]) {
            ++i;
            continue;
        }
        int j = i;
        while (j < m && near[(start + j) % m]) ++j;
        arcs.emplace_back(i, j);
        i = j;
    }
    if (arcs.size() < 2)
        throw Error("continuation: extraction found " + std::to_string(arcs.size()) +
                    " bounce arc(s); need at least 2");

    std::vector<BoundaryPoint> bounce_points;
    for (auto [b, e2] : arcs) {
        int best = b;
        for (int jj = b; jj < e2; ++jj)
            if (dist[(start + jj) % m] < dist[(start + best) % m]) best = jj;
        bounce_points.push_back(project_to_boundary(*domain, fin.states[(start + best) % m].q));
    }
    PeriodicBilliardTrajectory traj = make_trajectory(domain, std::move(bounce_points));
    if (!traj.valid(extract_tol)) {
        std::string msg = "extracted trajectory fails validation; residuals:";
        for (double r : traj.residuals) msg += " " + format_double(r);
        throw Error(msg);
    }
    out.trajectory = std::move(traj);
    return out;
}

// --- Liouville field check -----------------------------------------------------

namespace {

// Cutoff: 1 on the bounding box, 0 outside its doubling, cubic blend between.
double cutoff(const Box& box, const Vec& q) {
    Vec c = box.center();
    double m = 0;
    for (int i = 0; i < q.size(); ++i) {
        double w = 0.5 * box.extent(i);
        m = std::max(m, std::fabs(q[i] - c[i]) / w);
    }
    if (m <= 1.0) return 1.0;
    if (m >= 2.0) return 0.0;
    double s = 2.0 - m;
    return s * s * (3 - 2 * s);
}

Vec z_field(const ImplicitDomain& d, const Vec& q) {
    const Vec& c = *d.star_center();
    return (q - c) * (cutoff(d.bounding_box(), q) / (2.0 * d.dim()));
}

// Central finite differences of Z (the cutoff has no closed-form gradient
// worth carrying around).
Mat z_jacobian(const ImplicitDomain& d, const Vec& q) {
    const int n = d.dim();
    double step = 1e-6;
    Mat jac(n, n);
    for (int i = 0; i < n; ++i) {
        Vec qp = q, qm = q;
        qp[i] += step;
        qm[i] -= step;
        Vec zp = z_field(d, qp), zm = z_field(d, qm);
        for (int j = 0; j < n; ++j) jac(i, j) = (zp[j] - zm[j]) / (2 * step);
    }
    return jac;
}

}  // namespace

double liouville_slack(const ImplicitDomain& d, double eps, const Vec& q, const Vec& p) {
    if (!d.star_center()) throw Error("liouville check needs a declared star_center");
    BoundaryPoint foot = project_to_boundary(d, q);
    Vec delta = q - foot.point;
    double dist = norm(delta);
    if (dist <= 0) throw Error("liouville slack undefined on the boundary");
    Vec grad_h = delta * (-2.0 / (dist * dist * dist * dist));
    Vec z = z_field(d, q);
    Mat dz = z_jacobian(d, q);
    double quad = 0;
    for (int i = 0; i < d.dim(); ++i)
        for (int j = 0; j < d.dim(); ++j) quad += p[i] * p[j] * dz(i, j);
    double dh_z = dot(grad_h, z);
    double d_h_eps = dot(p, p) - quad + eps * dh_z;
    return d_h_eps - 0.5 * dot(p, p);
}

LiouvilleReport liouville_check(const ImplicitDomain& d, double eps, int samples,
                                std::uint64_t seed) {
    if (!d.star_center()) throw Error("liouville check needs a declared star_center");
    if (eps <= 0) throw Error("liouville check needs eps > 0");
    if (samples < 1) throw Error("liouville check needs samples >= 1");
    const int n = d.dim();

    struct SampleOut {
        double slack;
        Vec q, p;
        double max_dz;
        double dh_z;
        double outward;
        bool ok = false;
    };
    std::vector<SampleOut> outs(samples);

    parallel_for(samples, [&](int i) {
        std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + 0x7f4a7c15u + i);
        SampleOut& o = outs[i];
        for (int attempt = 0; attempt < 4000; ++attempt) {
            Vec q = uniform_in_box(rng, d.bounding_box());
            if (!contains(d, q, false)) continue;
            BoundaryPoint foot;
            try {
                foot = project_to_boundary(d, q);
            } catch (const ProjectionError&) {
                continue;
            }
            Vec delta = q - foot.point;
            double dist = norm(delta);
            double p2 = 1.0 - 2.0 * eps / (dist * dist);
            if (p2 < 0) continue;  // inside the wall layer, below the level set
            Vec p = uniform_direction(rng, n) * std::sqrt(p2);

            Vec grad_h = delta * (-2.0 / (dist * dist * dist * dist));
            Vec z = z_field(d, q);
            Mat dz = z_jacobian(d, q);
            double quad = 0;
            o.max_dz = 0;
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b) {
                    quad += p[a] * p[b] * dz(a, b);
                    o.max_dz = std::max(o.max_dz, std::fabs(dz(a, b)));
                }
            o.dh_z = dot(grad_h, z);
            double d_h_eps = dot(p, p) - quad + eps * o.dh_z;
            o.slack = d_h_eps - 0.5 * dot(p, p);
            o.q = q;
            o.p = p;
            o.outward = dot(z_field(d, foot.point), foot.normal);
            o.ok = true;
            return;
        }
    });

    LiouvilleReport rep;
    rep.eps = eps;
    rep.samples = 0;
    rep.seed = seed;
    rep.min_slack = std::numeric_limits<double>::infinity();
    rep.max_dz_entry = 0;
    rep.min_dh_z = std::numeric_limits<double>::infinity();
    rep.min_outward = std::numeric_limits<double>::infinity();
    for (const SampleOut& o : outs) {
        if (!o.ok) continue;
        ++rep.samples;
        if (o.slack < rep.min_slack) {
            rep.min_slack = o.slack;
            rep.argmin_q = o.q;
            rep.argmin_p = o.p;
        }
        rep.max_dz_entry = std::max(rep.max_dz_entry, o.max_dz);
        rep.min_dh_z = std::min(rep.min_dh_z, o.dh_z);
        rep.min_outward = std::min(rep.min_outward, o.outward);
    }
    if (rep.samples == 0) throw Error("liouville check: no admissible sample found");
    rep.pass = rep.min_slack >= -1e-9 && rep.max_dz_entry <= 1.0 / (2.0 * n) + 1e-9 &&
               rep.min_dh_z >= -1e-9 && rep.min_outward > 0;
    return rep;
}

std::string orbit_to_csv(const SmoothedOrbit& orbit) {
    std::ostringstream out;
    const int n = orbit.states.empty() ? 0 : orbit.states.front().q.size();
    out << "t";
    for (int i = 0; i < n; ++i) out << ",q" << i;
    for (int i = 0; i < n; ++i) out << ",p" << i;
    out << ",H\n";
    for (const FlowState& s : orbit.states) {
        out << format_double(s.t, 17);
        for (int i = 0; i < n; ++i) out << "," << format_double(s.q[i], 17);
        for (int i = 0; i < n; ++i) out << "," << format_double(s.p[i], 17);
        out << "," << format_double(s.energy, 17) << "\n";
    }
    return out.str();
}

std::string trace_to_csv(const std::vector<ContinuationStep>& trace) {
    std::ostringstream out;
    out << "eps,tau,action\n";
    for (const ContinuationStep& s : trace)
        out << format_double(s.eps, 17) << "," << format_double(s.period, 17) << ","
            << format_double(s.action, 17) << "\n";
    return out.str();
}

}  // namespace billiards
