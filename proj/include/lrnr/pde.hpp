#ifndef LRNR_PDE_HPP
#define LRNR_PDE_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "lrnr/linalg.hpp"
#include "lrnr/model.hpp"
#include "lrnr/pde_params.hpp"
#include "lrnr/rng.hpp"

// The parametrized convection-diffusion-reaction problem on
// (x, t) in (0, 2*pi) x (0, 1):
//   u_t + mu1 u_x - mu2 u_xx - mu3 u (1 - u) = 0,
//   u(x, 0) = sin(x),  u(0, t) = u(2*pi, t).

namespace lrnr {
namespace pde {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kTimeHorizon = 1.0;

struct Point {
    double x;
    double t;
};

struct CollocationBatch {
    std::vector<Point> interior;
    std::vector<double> initial_x;   // points (x, 0)
    std::vector<double> periodic_t;  // pairs ((0, t), (2*pi, t))
    // Per-sample physical parameters; filled only when sampled with_mu.
    std::vector<PdeParams> interior_mu, initial_mu, periodic_mu;
};

// Uniform space-time grid over [0, 2*pi] x [0, 1]; x stores n_x columns with
// u(2*pi, t) identified with u(0, t). values is (n_t + 1) x n_x, row-major in
// time.
struct GridField {
    std::size_t n_x = 0;
    std::size_t n_t = 0;
    std::vector<double> values;

    double at(std::size_t j, std::size_t i) const { return values[j * n_x + i]; }
    double x_of(std::size_t i) const {
        return kTwoPi * static_cast<double>(i) / static_cast<double>(n_x);
    }
    double t_of(std::size_t j) const {
        return n_t == 0 ? 0.0
                        : kTimeHorizon * static_cast<double>(j) / static_cast<double>(n_t);
    }
};

// Strong-form residual N[u; mu] evaluated from an output-layer jet.
double residual(const Jet& jet, const PdeParams& mu);

struct BoundaryPoint {
    enum class Kind { Initial, Periodic } kind;
    double coord;  // x for Initial, t for Periodic
};

using Evaluator = std::function<double(double x, double t)>;

// Initial: u(x,0) - sin(x). Periodic: u(0,t) - u(2*pi,t).
double boundary_residual(const Evaluator& u, const BoundaryPoint& p);

CollocationBatch sample_collocation(std::uint64_t seed, std::size_t n_interior,
                                    std::size_t n_initial, std::size_t n_periodic,
                                    const ParamDomain& mu_domain, bool with_mu);

// Exact solution of the pure convection problem with sin initial data.
double analytic_convection(double x, double t, double mu1);

// Exact solution with diffusion (mu3 = 0 assumed by the caller).
double analytic_convection_diffusion(double x, double t, double mu1, double mu2);

// Second-order finite-difference reference solution. Strang splitting around
// the convection/reaction half: Crank-Nicolson diffusion half-steps, Heun for
// the explicit terms, second-order upwind-biased convection stencil. n_t = 0
// picks the smallest stable step count automatically; an explicit n_t that
// violates the CFL bound mu1*dt/dx <= 0.5 is an error naming the required
// value.
GridField reference_solve(const PdeParams& mu, std::size_t n_x, std::size_t n_t = 0);

// Sum_ij |u(x_i, t_j) - ref_ij| / Sum_ij |ref_ij| over the reference grid.
double l1_relative_error(const Evaluator& u, const GridField& ref);

}  // namespace pde
}  // namespace lrnr

#endif
