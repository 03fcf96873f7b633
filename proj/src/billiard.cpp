#include "billiards/billiard.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "billiards/linalg.hpp"
#include "billiards/parallel.hpp"

namespace billiards {

const Vec& BounceConfiguration::at(int i) const {
    int k = size();
    return points[((i % k) + k) % k].point;
}

void BounceConfiguration::validate() const {
    if (size() < 2) throw Error("bounce configuration needs k >= 2 points");
    for (int i = 0; i < size(); ++i) {
        if (distance(at(i), at(i + 1)) < 1e-6)
            throw Error("consecutive bounce points coincide (|dx| < 1e-6)");
        if (std::fabs(domain->value(points[i].point)) > domain->tol_boundary())
            throw Error("bounce point off the boundary: |F| = " +
                        format_double(std::fabs(domain->value(points[i].point))));
    }
}

bool PeriodicBilliardTrajectory::valid(double tol_reflect) const {
    for (double r : residuals)
        if (!(r <= tol_reflect)) return false;
    for (bool c : chord_contained)
        if (!c) return false;
    return config.size() >= 2;
}

Vec reflect(const Vec& u, const Vec& normal, double tol_graze) {
    double un = dot(u, normal);
    if (std::fabs(un) <= tol_graze)
        throw Error("grazing incidence: |u.n| = " + format_double(std::fabs(un)) +
                    " <= " + format_double(tol_graze));
    return u - normal * (2.0 * un);
}

namespace {

// Unit chord vectors into and out of bounce i.
struct ChordFrame {
    Vec u_in, u_out;
};
ChordFrame chord_frame(const BounceConfiguration& c, int i) {
    Vec in = c.at(i) - c.at(i - 1);
    Vec out = c.at(i + 1) - c.at(i);
    return {normalized(in), normalized(out)};
}

}  // namespace

double reflection_residual(const BounceConfiguration& config, int i) {
    ChordFrame f = chord_frame(config, i);
    const Vec& nu = config.points[((i % config.size()) + config.size()) % config.size()].normal;
    double normal_part = std::fabs(dot(f.u_in + f.u_out, nu));
    Vec diff = f.u_in - f.u_out;
    Vec tang = diff - nu * dot(diff, nu);
    return normal_part + norm(tang);
}

LengthGradient length_functional(const BounceConfiguration& config) {
    LengthGradient out;
    out.length = 0;
    const int k = config.size();
    out.tangential.reserve(k);
    for (int i = 0; i < k; ++i) out.length += distance(config.at(i), config.at(i + 1));
    for (int i = 0; i < k; ++i) {
        ChordFrame f = chord_frame(config, i);
        const Vec& nu = config.points[i].normal;
        Vec grad = f.u_in - f.u_out;  // d length / d x_i
        out.tangential.push_back(grad - nu * dot(grad, nu));
    }
    return out;
}

PeriodicBilliardTrajectory make_trajectory(DomainPtr domain, std::vector<BoundaryPoint> points,
                                           int chord_samples) {
    PeriodicBilliardTrajectory t;
    t.config = BounceConfiguration{std::move(domain), std::move(points)};
    t.chord_samples = chord_samples;
    const int k = t.config.size();
    t.length = 0;
    for (int i = 0; i < k; ++i) {
        t.length += distance(t.config.at(i), t.config.at(i + 1));
        t.residuals.push_back(reflection_residual(t.config, i));
        t.chord_contained.push_back(segment_in_closure(*t.config.domain, t.config.at(i),
                                                       t.config.at(i + 1), chord_samples));
    }
    return t;
}

// --- variational search -----------------------------------------------------

namespace {

// Tangential residual vector of a configuration, in fixed per-point frames.
void tangential_residual(const BounceConfiguration& c,
                         const std::vector<std::vector<Vec>>& frames, std::vector<double>& r) {
    const int k = c.size();
    const int m = c.domain->dim() - 1;
    r.resize(static_cast<size_t>(k) * m);
    for (int i = 0; i < k; ++i) {
        ChordFrame f = chord_frame(c, i);
        Vec grad = f.u_in - f.u_out;
        const Vec& nu = c.points[i].normal;
        Vec tang = grad - nu * dot(grad, nu);
        for (int a = 0; a < m; ++a) r[static_cast<size_t>(i) * m + a] = dot(tang, frames[i][a]);
    }
}

// Moves every point of c by tangent offsets s (in `frames`), reprojecting
// onto the boundary. Returns nullopt if a projection fails or points merge.
std::optional<BounceConfiguration> displace(const BounceConfiguration& c,
                                            const std::vector<std::vector<Vec>>& frames,
                                            const std::vector<double>& s) {
    const int k = c.size();
    const int m = c.domain->dim() - 1;
    BounceConfiguration out{c.domain, {}};
    out.points.reserve(k);
    for (int i = 0; i < k; ++i) {
        Vec target = c.points[i].point;
        for (int a = 0; a < m; ++a) target += frames[i][a] * s[static_cast<size_t>(i) * m + a];
        auto foot = project_newton(*c.domain, target, c.points[i].point, 25);
        if (!foot) return std::nullopt;
        out.points.push_back(*foot);
    }
    return out;
}

double norm_vec(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// One multistart instance: LM on the tangential gradient with reprojection.
std::optional<BounceConfiguration> solve_from(BounceConfiguration c, int max_iterations) {
    const int k = c.size();
    const int n = c.domain->dim();
    const int m = n - 1;
    const int dim = k * m;
    const double diag = c.domain->bounding_box().diagonal();
    const double fd = 1e-7 * std::max(1.0, diag);

    double mu = 1e-6;
    for (int iter = 0; iter < max_iterations; ++iter) {
        // separation guard: collapsing configurations are abandoned
        for (int i = 0; i < k; ++i)
            if (distance(c.at(i), c.at(i + 1)) < 1e-6) return std::nullopt;

        std::vector<std::vector<Vec>> frames;
        frames.reserve(k);
        for (int i = 0; i < k; ++i) frames.push_back(orthonormal_complement(c.points[i].normal));

        std::vector<double> r;
        tangential_residual(c, frames, r);
        double rn = norm_vec(r);
        if (rn <= 1e-12) return c;

        // finite-difference Jacobian, column per tangent coordinate
        Mat jac(dim, dim);
        bool jac_ok = true;
        for (int col = 0; col < dim && jac_ok; ++col) {
            std::vector<double> s(dim, 0.0);
            s[col] = fd;
            auto cp = displace(c, frames, s);
            if (!cp) {
                jac_ok = false;
                break;
            }
            std::vector<double> rp;
            tangential_residual(*cp, frames, rp);
            for (int row = 0; row < dim; ++row) jac(row, col) = (rp[row] - r[row]) / fd;
        }
        if (!jac_ok) return std::nullopt;

        bool accepted = false;
        for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
            Mat a(dim, dim);
            std::vector<double> rhs(dim, 0.0);
            for (int i = 0; i < dim; ++i) {
                for (int j = 0; j < dim; ++j) {
                    double sum = 0;
                    for (int kk = 0; kk < dim; ++kk) sum += jac(kk, i) * jac(kk, j);
                    a(i, j) = sum;
                }
                a(i, i) += mu;
                double sum = 0;
                for (int kk = 0; kk < dim; ++kk) sum += jac(kk, i) * r[kk];
                rhs[i] = -sum;
            }
            std::vector<double> step;
            if (!solve_dense(a, rhs, step)) {
                mu *= 10;
                continue;
            }
            // step cap keeps reprojection in the warm-start basin
            double sn = norm_vec(step);
            double cap = 0.2 * diag;
            if (sn > cap)
                for (double& v : step) v *= cap / sn;
            auto c_new = displace(c, frames, step);
            if (!c_new) {
                mu *= 10;
                continue;
            }
            std::vector<std::vector<Vec>> frames_new;
            for (int i = 0; i < k; ++i)
                frames_new.push_back(orthonormal_complement(c_new->points[i].normal));
            std::vector<double> r_new;
            tangential_residual(*c_new, frames_new, r_new);
            if (norm_vec(r_new) < rn) {
                c = *c_new;
                mu = std::max(mu * 0.3, 1e-12);
                accepted = true;
            } else {
                mu *= 10;
            }
        }
        if (!accepted) return std::nullopt;
    }
    return std::nullopt;  // out of iterations
}

// Hausdorff-style distance between matched cyclic vertex lists, minimized
// over rotation and reversal.
double config_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    const int k = static_cast<int>(a.size());
    double best = std::numeric_limits<double>::infinity();
    for (int rev = 0; rev < 2; ++rev) {
        for (int rot = 0; rot < k; ++rot) {
            double worst = 0;
            for (int i = 0; i < k; ++i) {
                int j = rev ? (rot - i % k + 2 * k) % k : (i + rot) % k;
                worst = std::max(worst, distance(a[i], b[j]));
            }
            best = std::min(best, worst);
        }
    }
    return best;
}

std::vector<double> sorted_chords(const BounceConfiguration& c) {
    std::vector<double> out;
    for (int i = 0; i < c.size(); ++i) out.push_back(distance(c.at(i), c.at(i + 1)));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

SearchResult find_critical_configs(DomainPtr domain, int k, const SearchOptions& opts) {
    if (k < 2) throw Error("find_critical_configs: k must be >= 2");
    if (opts.starts < 1) throw Error("find_critical_configs: starts must be >= 1");
    SearchResult result;

    // independent per-start RNG streams keep the multistart deterministic
    // regardless of scheduling
    std::vector<std::optional<BounceConfiguration>> solved(opts.starts);
    parallel_for(opts.starts, [&](int s) {
        std::mt19937_64 rng(opts.seed * 0x9e3779b97f4a7c15ull + s);
        for (int attempt = 0; attempt < 4; ++attempt) {
            BounceConfiguration c{domain, {}};
            try {
                for (int i = 0; i < k; ++i)
                    c.points.push_back(
                        project_to_boundary(*domain, uniform_in_box(rng, domain->bounding_box())));
            } catch (const ProjectionError&) {
                continue;
            }
            bool separated = true;
            for (int i = 0; i < k; ++i)
                separated = separated && distance(c.at(i), c.at(i + 1)) > 1e-3;
            if (!separated) continue;
            if (auto sol = solve_from(std::move(c), opts.max_iterations)) {
                solved[s] = std::move(sol);
                return;
            }
        }
    });

    std::vector<PeriodicBilliardTrajectory> kept;
    for (int s = 0; s < opts.starts; ++s) {
        if (!solved[s]) {
            ++result.failed_starts;
            continue;
        }
        ++result.converged_starts;
        std::vector<BoundaryPoint> pts = solved[s]->points;
        PeriodicBilliardTrajectory traj = make_trajectory(domain, pts, opts.chord_samples);
        if (!traj.valid(opts.tol_reflect)) continue;
        bool duplicate = false;
        for (const auto& have : kept) {
            if (have.bounces() != traj.bounces()) continue;
            std::vector<Vec> a, b;
            for (const auto& p : have.config.points) a.push_back(p.point);
            for (const auto& p : traj.config.points) b.push_back(p.point);
            if (config_distance(a, b) <= opts.dedup_hausdorff) {
                duplicate = true;
                break;
            }
            // symmetry orbits (rotationally invariant domains produce
            // continua of critical configurations): same k, same length,
            // same chord multiset => one representative
            if (std::fabs(have.length - traj.length) <= 1e-7 * std::max(1.0, have.length)) {
                auto ca = sorted_chords(have.config);
                auto cb = sorted_chords(traj.config);
                double worst = 0;
                for (size_t i = 0; i < ca.size(); ++i)
                    worst = std::max(worst, std::fabs(ca[i] - cb[i]));
                if (worst <= 1e-6) {
                    duplicate = true;
                    break;
                }
            }
        }
        if (!duplicate) kept.push_back(std::move(traj));
    }
    if (result.converged_starts == 0)
        result.warnings.push_back("no start converged; Newton never reached a critical point");
    std::sort(kept.begin(), kept.end(),
              [](const PeriodicBilliardTrajectory& a, const PeriodicBilliardTrajectory& b) {
                  return a.length < b.length;
              });
    result.trajectories = std::move(kept);
    return result;
}

// --- Morse index ------------------------------------------------------------

namespace {

// Length of the configuration displaced by tangent offsets s in fixed frames.
double displaced_length(const BounceConfiguration& c,
                        const std::vector<std::vector<Vec>>& frames,
                        const std::vector<double>& s) {
    auto moved = displace(c, frames, s);
    if (!moved) throw Error("morse_index: projection failed during finite differencing");
    double len = 0;
    for (int i = 0; i < moved->size(); ++i) len += distance(moved->at(i), moved->at(i + 1));
    return len;
}

}  // namespace

MorseIndexResult morse_index(const PeriodicBilliardTrajectory& traj) {
    const BounceConfiguration& c = traj.config;
    const int k = c.size();
    const int m = c.domain->dim() - 1;
    const int dim = k * m;
    const double h = 1e-2;

    std::vector<std::vector<Vec>> frames;
    for (int i = 0; i < k; ++i) frames.push_back(orthonormal_complement(c.points[i].normal));

    auto len = [&](const std::vector<double>& s) { return displaced_length(c, frames, s); };
    auto basis = [&](int i, double v) {
        std::vector<double> s(dim, 0.0);
        s[i] = v;
        return s;
    };
    double l0 = len(std::vector<double>(dim, 0.0));

    // 4th-order stencils: projections are machine-accurate, so the step can
    // stay large enough to keep cancellation noise out of the 1e-7 zero band
    auto second = [&](int i, double step) {
        return (-len(basis(i, 2 * step)) + 16 * len(basis(i, step)) - 30 * l0 +
                16 * len(basis(i, -step)) - len(basis(i, -2 * step))) /
               (12 * step * step);
    };
    auto mixed2 = [&](int i, int j, double step) {
        auto two = [&](double si, double sj) {
            std::vector<double> s(dim, 0.0);
            s[i] = si;
            s[j] = sj;
            return len(s);
        };
        return (two(step, step) + two(-step, -step) - two(step, -step) - two(-step, step)) /
               (4 * step * step);
    };

    Mat hess(dim, dim);
    for (int i = 0; i < dim; ++i) hess(i, i) = second(i, h);
    for (int i = 0; i < dim; ++i)
        for (int j = i + 1; j < dim; ++j) {
            double coarse = mixed2(i, j, 2 * h);
            double fine = mixed2(i, j, h);
            double rich = (4 * fine - coarse) / 3;  // O(h^4)
            hess(i, j) = rich;
            hess(j, i) = rich;
        }

    MorseIndexResult out;
    out.eigenvalues = symmetric_eigenvalues(hess);
    out.index = 0;
    out.degeneracy = 0;
    for (double ev : out.eigenvalues) {
        if (std::fabs(ev) < 1e-7)
            ++out.degeneracy;
        else if (ev < 0)
            ++out.index;
    }
    return out;
}

// --- flow simulator ----------------------------------------------------------

BilliardFlight simulate_billiard(const ImplicitDomain& d, const Vec& x0, const Vec& direction,
                                 int max_bounces) {
    if (!contains(d, x0, false)) throw Error("simulate_billiard: start point not interior");
    if (std::fabs(norm(direction) - 1.0) > 1e-9)
        throw Error("simulate_billiard: direction must be a unit vector");

    BilliardFlight flight;
    flight.polyline.push_back(x0);
    Vec x = x0;
    Vec u = direction;
    const double diag = d.bounding_box().diagonal();
    const double hit_tol = 1e-10;

    for (int bounce = 0; bounce < max_bounces; ++bounce) {
        // bracket the first boundary crossing along the ray
        const int march = 1024;
        double t_prev = 0;
        double f_prev = d.value(x);
        std::optional<std::pair<double, double>> bracket;
        for (int i = 1; i <= march; ++i) {
            double t = diag * i / march;
            double f = d.value(x + u * t);
            if (f >= 0) {
                bracket = {t_prev, t};
                break;
            }
            t_prev = t;
            f_prev = f;
        }
        (void)f_prev;
        if (!bracket) throw Error("simulate_billiard: ray never reached the boundary");

        // bisection, then Newton on F(x + t u)
        double lo = bracket->first, hi = bracket->second;
        for (int b = 0; b < 40; ++b) {
            double mid = 0.5 * (lo + hi);
            (d.value(x + u * mid) < 0 ? lo : hi) = mid;
        }
        double t = 0.5 * (lo + hi);
        for (int nu_it = 0; nu_it < 8; ++nu_it) {
            Vec q = x + u * t;
            double f = d.value(q);
            if (std::fabs(f) <= hit_tol) break;
            double df = dot(d.gradient(q), u);
            if (df == 0) break;
            double t_new = t - f / df;
            if (t_new < lo || t_new > hi) break;  // keep the bracket
            t = t_new;
        }
        Vec hit = x + u * t;
        Vec nu = boundary_normal(d, hit);
        flight.polyline.push_back(hit);
        if (std::fabs(dot(u, nu)) <= kTolGraze) {
            flight.grazing_stop = true;
            break;
        }
        u = reflect(u, nu);
        x = hit;
    }
    return flight;
}

std::string trajectory_to_csv(const PeriodicBilliardTrajectory& traj) {
    std::ostringstream out;
    const int n = traj.config.domain->dim();
    out << "bounce_index";
    for (int i = 0; i < n; ++i) out << ",x" << i;
    out << ",residual\n";
    for (int i = 0; i < traj.bounces(); ++i) {
        out << i;
        for (int j = 0; j < n; ++j) out << "," << format_double(traj.config.points[i].point[j], 17);
        out << "," << format_double(traj.residuals[i], 17) << "\n";
    }
    return out.str();
}

}  // namespace billiards
