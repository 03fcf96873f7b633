#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "billiards/billiard.hpp"
#include "billiards/geometry.hpp"

namespace billiards {

inline constexpr double kTolEnergy = 1e-6;
inline constexpr double kTolClosure = 1e-7;
inline constexpr double kTolLevel = 1e-9;

/// H_eps(q, p) = |p|^2 / 2 + eps * h(q) with h(q) = dist(q, boundary)^-2.
/// The confining wall sharpens as eps -> 0; periodic orbits on {H = 1/2}
/// limit onto billiard trajectories. h uses the exact projection distance,
/// which is nonsmooth on the medial axis; orbits of interest concentrate
/// near the boundary where it is smooth.
class SmoothedHamiltonian {
  public:
    SmoothedHamiltonian(DomainPtr domain, double eps);

    double eps() const { return eps_; }
    const ImplicitDomain& domain() const { return *domain_; }
    DomainPtr domain_ptr() const { return domain_; }

    double h(const Vec& q) const;
    double energy(const Vec& q, const Vec& p) const;
    /// grad of eps * h via the projection-based distance gradient.
    Vec grad_potential(const Vec& q) const;

  private:
    DomainPtr domain_;
    double eps_;
};

struct FlowState {
    double t;
    Vec q, p;
    double energy;
};

struct IntegrationResult {
    std::vector<FlowState> states;  // per top-level step, including t = 0
    bool escaped = false;           // q left V; states end at the last valid step
    double max_energy_drift = 0;    // max |H - H(0)| over recorded states
};

/// Second-order kick-drift-kick splitting for the separable H, with
/// recursive step halving while |grad(eps h)| * dt > 0.01. The level value
/// is not enforced; energy is recorded per step.
IntegrationResult integrate(const SmoothedHamiltonian& h, Vec q, Vec p, double dt, int steps);

struct SmoothedOrbit {
    double eps;
    double period;
    double dt;
    std::vector<FlowState> states;  // one period at uniform dt (+ final partial)
    double action;                  // integral of |p|^2 dt over the period
    double closure_defect;          // |z(period) - z(0)|
    double max_energy_drift;
};

enum class OrbitMode { kSymmetricShooting, kReturnMapNewton };

/// Closes a periodic orbit on {H = 1/2} from a seed state.
/// Symmetric shooting integrates turning point to turning point and doubles;
/// return-map Newton solves for a fixed point of the Poincare section
/// {(q - q_seed) . e = 0, positive crossing}. Closure defect <= 1e-7 and
/// energy drift <= 1e-6 are enforced on the result.
SmoothedOrbit find_periodic_orbit(const SmoothedHamiltonian& h, const Vec& q, const Vec& p,
                                  OrbitMode mode = OrbitMode::kSymmetricShooting,
                                  double dt = 4e-5);

/// Trapezoidal quadrature of |p(t)|^2 over one period.
double action(const SmoothedOrbit& orbit);

struct ContinuationStep {
    double eps;
    double period;
    double action;
};

struct ContinuationResult {
    PeriodicBilliardTrajectory trajectory;
    std::vector<ContinuationStep> trace;
};

/// Warm-started orbit continuation along a decreasing eps schedule, ending
/// in bounce-point extraction: near-boundary arcs (dist < 3 sqrt(2 eps))
/// project to bounce points, straight chords in between. The extracted
/// trajectory is validated with tolerance `extract_tol` (limit extraction is
/// first order in sqrt(eps), hence looser than the variational tolerance).
ContinuationResult continue_to_billiard(DomainPtr domain, const SmoothedOrbit& seed,
                                        const std::vector<double>& schedule,
                                        OrbitMode mode = OrbitMode::kSymmetricShooting,
                                        double dt = 2e-5, double extract_tol = 1e-4);

struct LiouvilleReport {
    double eps;
    int samples;
    std::uint64_t seed;
    double min_slack;      // min of dH(Zbar) - |p|^2/2 over level samples
    Vec argmin_q, argmin_p;
    double max_dz_entry;   // max sampled |dZ_j/dq_i|, bound 1/(2n)
    double min_dh_z;       // min sampled dh(Z) on V
    double min_outward;    // min Z . n over sampled boundary feet
    bool pass;
};

/// Slack of the Liouville-field inequality at one phase point:
/// [ |p|^2 - sum p_i p_j dZ_j/dq_i + eps dh(Z) ] - |p|^2 / 2.
double liouville_slack(const ImplicitDomain& d, double eps, const Vec& q, const Vec& p);

/// Radial Liouville field check on `samples` random points of {H_eps = 1/2}:
/// Z(q) = chi(q) (q - star_center) / (2n) with a cutoff that is 1 on the
/// bounding box and supported inside its doubling. Requires a declared
/// star_center.
LiouvilleReport liouville_check(const ImplicitDomain& d, double eps, int samples,
                                std::uint64_t seed);

/// CSV rows "t,q0,..,p0,..,H" for orbit states.
std::string orbit_to_csv(const SmoothedOrbit& orbit);
/// CSV rows "eps,tau,action" for a continuation trace.
std::string trace_to_csv(const std::vector<ContinuationStep>& trace);

}  // namespace billiards
