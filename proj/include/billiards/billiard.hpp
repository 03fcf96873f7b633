#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "billiards/geometry.hpp"

namespace billiards {

inline constexpr double kTolReflect = 1e-8;
inline constexpr double kTolGraze = 1e-10;
inline constexpr int kChordSamples = 64;

/// Ordered cyclic list of k >= 2 boundary points; the unknown of the
/// variational bounce-point problem.
struct BounceConfiguration {
    DomainPtr domain;
    std::vector<BoundaryPoint> points;

    int size() const { return static_cast<int>(points.size()); }
    const Vec& at(int i) const;  // cyclic indexing
    /// Checks consecutive distinctness (>= 1e-6) and |F| <= tol_boundary.
    void validate() const;
};

/// A closed polyline trajectory with bounce points on the boundary. Valid
/// when every reflection residual is below tol_reflect and every chord stays
/// in the closed domain. Unit speed and straight segments hold by
/// construction for a polyline.
struct PeriodicBilliardTrajectory {
    BounceConfiguration config;
    double length = 0;                  // sum of chord lengths
    std::vector<double> residuals;      // per bounce
    std::vector<bool> chord_contained;  // per chord i: segment x_i -> x_{i+1}
    int chord_samples = kChordSamples;
    std::optional<int> morse_index;

    int bounces() const { return config.size(); }
    bool valid(double tol_reflect = kTolReflect) const;
};

/// Law of reflection: u - 2 (u.n) n. Throws on grazing incidence
/// (|u.n| <= tol_graze); the normal jump must be nonzero.
Vec reflect(const Vec& u, const Vec& normal, double tol_graze = kTolGraze);

/// |(u_in + u_out) . n| + |tangential part of (u_in - u_out)| at bounce i;
/// zero exactly when the law of reflection holds there.
double reflection_residual(const BounceConfiguration& config, int i);

struct LengthGradient {
    double length;
    std::vector<Vec> tangential;  // projection of (u_in - u_out) onto T boundary
};

/// Perimeter of the bounce polygon and its boundary-tangential gradient;
/// critical points are periodic billiard trajectories.
LengthGradient length_functional(const BounceConfiguration& config);

struct SearchOptions {
    int starts = 64;
    std::uint64_t seed = 1;
    double tol_reflect = kTolReflect;
    int chord_samples = kChordSamples;
    int max_iterations = 120;
    double dedup_hausdorff = 1e-5;
};

struct SearchResult {
    std::vector<PeriodicBilliardTrajectory> trajectories;  // sorted by length
    int converged_starts = 0;
    int failed_starts = 0;
    std::vector<std::string> warnings;
};

/// Multistart search for k-bounce periodic trajectories: Levenberg-Marquardt
/// on the tangential length gradient with projection back to the boundary
/// after each step, Newton-quality polishing, validation, and deduplication
/// over cyclic rotation, reversal, and symmetry orbits.
SearchResult find_critical_configs(DomainPtr domain, int k, const SearchOptions& opts = {});

struct MorseIndexResult {
    int index;       // eigenvalues below -1e-7
    int degeneracy;  // eigenvalues within 1e-7 of zero
    std::vector<double> eigenvalues;
};

/// Eigenvalue counts of the constrained Hessian of the length functional at
/// the configuration, by Richardson-extrapolated central differences in
/// boundary-tangent coordinates.
MorseIndexResult morse_index(const PeriodicBilliardTrajectory& traj);

struct BilliardFlight {
    std::vector<Vec> polyline;  // start point, then bounce points
    bool grazing_stop = false;
};

/// Event-driven billiard flow: straight advance, root-bracketed boundary hit
/// (bisection + Newton along the ray to 1e-10), reflect, repeat.
BilliardFlight simulate_billiard(const ImplicitDomain& d, const Vec& x0, const Vec& direction,
                                 int max_bounces);

/// CSV rows "bounce_index,x0,...,residual" for a trajectory.
std::string trajectory_to_csv(const PeriodicBilliardTrajectory& traj);

/// Builds a validated trajectory record from bounce points (residuals,
/// chord containment, length). Does not throw on invalid configurations;
/// inspect valid().
PeriodicBilliardTrajectory make_trajectory(DomainPtr domain, std::vector<BoundaryPoint> points,
                                           int chord_samples = kChordSamples);

}  // namespace billiards
