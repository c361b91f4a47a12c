#include "lrnr/pde.hpp"

#include <cmath>
#include <string>

namespace lrnr {
namespace pde {

double residual(const Jet& jet, const PdeParams& mu) {
    require(jet.value.len() == 1, "residual: expected scalar-output jet");
    const double u = jet.value[0];
    return jet.dt[0] + mu.mu1 * jet.dx[0] - mu.mu2 * jet.dxx[0] - mu.mu3 * u * (1.0 - u);
}

double boundary_residual(const Evaluator& u, const BoundaryPoint& p) {
    if (p.kind == BoundaryPoint::Kind::Initial) return u(p.coord, 0.0) - std::sin(p.coord);
    return u(0.0, p.coord) - u(kTwoPi, p.coord);
}

CollocationBatch sample_collocation(std::uint64_t seed, std::size_t n_interior,
                                    std::size_t n_initial, std::size_t n_periodic,
                                    const ParamDomain& mu_domain, bool with_mu) {
    Rng rng(seed);
    CollocationBatch batch;
    auto draw_mu = [&]() {
        PdeParams mu;
        mu.mu1 = rng.uniform_in(mu_domain.lo[0], mu_domain.hi[0]);
        mu.mu2 = rng.uniform_in(mu_domain.lo[1], mu_domain.hi[1]);
        mu.mu3 = rng.uniform_in(mu_domain.lo[2], mu_domain.hi[2]);
        return mu;
    };
    batch.interior.reserve(n_interior);
    for (std::size_t i = 0; i < n_interior; ++i) {
        Point p;
        p.x = rng.uniform_in(0.0, kTwoPi);
        p.t = rng.uniform_in(0.0, kTimeHorizon);
        batch.interior.push_back(p);
        if (with_mu) batch.interior_mu.push_back(draw_mu());
    }
    for (std::size_t i = 0; i < n_initial; ++i) {
        batch.initial_x.push_back(rng.uniform_in(0.0, kTwoPi));
        if (with_mu) batch.initial_mu.push_back(draw_mu());
    }
    for (std::size_t i = 0; i < n_periodic; ++i) {
        batch.periodic_t.push_back(rng.uniform_in(0.0, kTimeHorizon));
        if (with_mu) batch.periodic_mu.push_back(draw_mu());
    }
    return batch;
}

double analytic_convection(double x, double t, double mu1) { return std::sin(x - mu1 * t); }

double analytic_convection_diffusion(double x, double t, double mu1, double mu2) {
    return std::exp(-mu2 * t) * std::sin(x - mu1 * t);
}

namespace {

// E(u) = -mu1 D_up(u) + mu3 u (1 - u), with the second-order upwind-biased
// convection stencil (mu1 >= 0, so the bias is leftward).
void explicit_rhs(const std::vector<double>& u, double mu1, double mu3, double dx,
                  std::vector<double>& out) {
    const std::size_t n = u.size();
    const double c = mu1 / (2.0 * dx);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t im1 = (i + n - 1) % n;
        const std::size_t im2 = (i + n - 2) % n;
        const double ux = c * (3.0 * u[i] - 4.0 * u[im1] + u[im2]);
        out[i] = -ux + mu3 * u[i] * (1.0 - u[i]);
    }
}

// (I + kappa D2) u, periodic.
void apply_cn_rhs(const std::vector<double>& u, double kappa_over_dx2, std::vector<double>& out) {
    const std::size_t n = u.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t im1 = (i + n - 1) % n;
        const std::size_t ip1 = (i + 1) % n;
        out[i] = u[i] + kappa_over_dx2 * (u[ip1] - 2.0 * u[i] + u[im1]);
    }
}

}  // namespace

GridField reference_solve(const PdeParams& mu, std::size_t n_x, std::size_t n_t) {
    require(n_x >= 8, "reference_solve: n_x too small");
    const double dx = kTwoPi / static_cast<double>(n_x);
    // CFL bound mu1 dt / dx <= 0.5 for the explicit convection step.
    const double cfl_limit = 0.5;
    std::size_t n_t_min = n_x;  // keeps dt ~ dx for second-order accuracy
    if (mu.mu1 > 0.0) {
        const std::size_t n_cfl = static_cast<std::size_t>(
            std::ceil(mu.mu1 * kTimeHorizon / (cfl_limit * dx)));
        n_t_min = std::max(n_t_min, n_cfl);
    }
    if (n_t == 0) {
        n_t = n_t_min;
    } else if (mu.mu1 > 0.0 && mu.mu1 * (kTimeHorizon / static_cast<double>(n_t)) / dx >
                                   cfl_limit * (1.0 + 1e-12)) {
        throw std::runtime_error("reference_solve: CFL violation, need n_t >= " +
                                 std::to_string(n_t_min));
    }
    const double dt = kTimeHorizon / static_cast<double>(n_t);

    GridField field;
    field.n_x = n_x;
    field.n_t = n_t;
    field.values.resize((n_t + 1) * n_x);

    std::vector<double> u(n_x);
    for (std::size_t i = 0; i < n_x; ++i) u[i] = std::sin(field.x_of(i));
    for (std::size_t i = 0; i < n_x; ++i) field.values[i] = u[i];

    // Prefactor the Crank-Nicolson half-step matrix I - kappa D2.
    const bool diffusive = mu.mu2 > 0.0;
    const double kappa = mu.mu2 * dt / 4.0;  // half-step CN coefficient
    const double kod2 = kappa / (dx * dx);
    LuFactorization cn_lu;
    if (diffusive) {
        DenseMatrix a(n_x, n_x);
        for (std::size_t i = 0; i < n_x; ++i) {
            const std::size_t im1 = (i + n_x - 1) % n_x;
            const std::size_t ip1 = (i + 1) % n_x;
            a.at(i, i) = 1.0 + 2.0 * kod2;
            a.at(i, im1) -= kod2;
            a.at(i, ip1) -= kod2;
        }
        cn_lu = lu_factor(a);
    }

    std::vector<double> k1(n_x), k2(n_x), ustar(n_x), rhs(n_x);
    auto diffuse_half = [&](std::vector<double>& w) {
        if (!diffusive) return;
        apply_cn_rhs(w, kod2, rhs);
        DenseVector r;
        r.data = rhs;
        DenseVector sol = lu_solve(cn_lu, r);
        w = std::move(sol.data);
    };

    for (std::size_t step = 1; step <= n_t; ++step) {
        diffuse_half(u);
        explicit_rhs(u, mu.mu1, mu.mu3, dx, k1);
        for (std::size_t i = 0; i < n_x; ++i) ustar[i] = u[i] + dt * k1[i];
        explicit_rhs(ustar, mu.mu1, mu.mu3, dx, k2);
        for (std::size_t i = 0; i < n_x; ++i) u[i] += 0.5 * dt * (k1[i] + k2[i]);
        diffuse_half(u);
        double* row = field.values.data() + step * n_x;
        double umax = 0.0;
        for (std::size_t i = 0; i < n_x; ++i) {
            row[i] = u[i];
            umax = std::max(umax, std::fabs(u[i]));
        }
        // The reaction term drives sin initial data to finite-time blowup for
        // strong mu3 and weak mu2; fail fast instead of returning garbage.
        if (!(umax < 1e6)) {
            throw std::runtime_error(
                "reference_solve: |u| exceeded 1e6 at t = " +
                std::to_string(field.t_of(step)) +
                " (finite-time blowup of the reaction term for this mu)");
        }
    }
    return field;
}

double l1_relative_error(const Evaluator& u, const GridField& ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j <= ref.n_t; ++j) {
        const double t = ref.t_of(j);
        for (std::size_t i = 0; i < ref.n_x; ++i) {
            const double r = ref.at(j, i);
            num += std::fabs(u(ref.x_of(i), t) - r);
            den += std::fabs(r);
        }
    }
    if (den == 0.0) throw std::runtime_error("l1_relative_error: reference is identically zero");
    return num / den;
}

}  // namespace pde
}  // namespace lrnr
