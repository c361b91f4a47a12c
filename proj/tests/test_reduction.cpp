#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lrnr/reduction.hpp"

using namespace lrnr;
using namespace lrnr::reduction;

namespace {

// Least-squares projection onto span(Xi) via normal equations; the 2-norm
// residual of this projection lower-bounds any interpolation residual.
double least_squares_residual(const DenseMatrix& xi, const DenseVector& v) {
    const DenseMatrix gram = mat_t_mul(xi, xi);
    const DenseVector rhs = matvec_transposed(xi, v);
    const DenseVector c = lu_solve(lu_factor(gram), rhs);
    const DenseVector recon = matvec(xi, c);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.len(); ++i) {
        const double d = v[i] - recon[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double eim_residual_2norm(const EimBasis& basis, const DenseVector& v) {
    DenseVector sampled(basis.dim());
    for (std::size_t k = 0; k < basis.dim(); ++k) sampled[k] = v[basis.indices[k]];
    const DenseVector recon = eim_apply(basis, sampled);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.len(); ++i) {
        const double d = v[i] - recon[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double eim_residual_max(const EimBasis& basis, const DenseVector& v) {
    DenseVector sampled(basis.dim());
    for (std::size_t k = 0; k < basis.dim(); ++k) sampled[k] = v[basis.indices[k]];
    const DenseVector recon = eim_apply(basis, sampled);
    double worst = 0.0;
    for (std::size_t i = 0; i < v.len(); ++i)
        worst = std::max(worst, std::fabs(v[i] - recon[i]));
    return worst;
}

DenseVector column(const DenseMatrix& m, std::size_t c) {
    DenseVector v(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) v[i] = m.at(i, c);
    return v;
}

}  // namespace

TEST_CASE("sampling set: the 4-by-3 grid has 12 classified points") {
    SamplingSetX x = SamplingSetX::uniform_grid(4, 3);
    REQUIRE(x.points.size() == 12);
    std::size_t n_initial = 0, n_periodic = 0, n_interior = 0;
    for (const auto& p : x.points) {
        switch (classify_point(p)) {
            case PointKind::Initial: ++n_initial; break;
            case PointKind::Periodic: ++n_periodic; break;
            case PointKind::Interior: ++n_interior; break;
        }
    }
    CHECK(n_initial == 4);
    CHECK(n_periodic == 4);
    CHECK(n_interior == 4);
}

TEST_CASE("uniform_mu_grid respects active axes") {
    const auto d1 = uniform_mu_grid(ParamDomain::d1(), 5);
    REQUIRE(d1.size() == 5);
    for (const auto& mu : d1) {
        CHECK(mu.mu2 == 0.0);
        CHECK(mu.mu3 == 0.0);
        CHECK(mu.mu1 >= 5.0);
        CHECK(mu.mu1 <= 8.0);
    }
    CHECK(d1.front().mu1 == 5.0);
    CHECK(d1.back().mu1 == 8.0);
    const auto d2 = uniform_mu_grid(ParamDomain::d2(), 3);
    CHECK(d2.size() == 27);
}

TEST_CASE("truncate_zero_modes: no mode below threshold is an identity transform") {
    const std::vector<std::size_t> widths{2, 8, 1};
    const std::vector<std::size_t> ranks{2, 1};
    Rng rng(15);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    HyperParams theta = make_hyper_params(ranks, 1, 6, ParamDomain::d1(), rng, 0.05, 0.8);
    const auto probes = uniform_mu_grid(ParamDomain::d1(), 5);
    TruncationResult r = truncate_zero_modes(p, theta, probes, 1e-6);
    CHECK(r.params.ranks == p.ranks);
    for (std::size_t l = 0; l < p.depth(); ++l) {
        for (std::size_t i = 0; i < p.u[l].data.size(); ++i)
            CHECK(r.params.u[l].data[i] == p.u[l].data[i]);
    }
}

TEST_CASE("truncate_zero_modes: a planted zero mode is dropped exactly") {
    const std::vector<std::size_t> widths{2, 8, 8, 1};
    const std::vector<std::size_t> ranks{1, 3, 1};
    Rng rng(16);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    HyperParams theta = make_hyper_params(ranks, 1, 6, ParamDomain::d1(), rng, 0.05, 0.8);
    // Zero out the hypernetwork output row of mode (layer 2, index 1): split
    // offset 1 (layer 1) + 1.
    const std::size_t row = 1 + 1;
    for (std::size_t c = 0; c < theta.w.back().cols; ++c) theta.w.back().at(row, c) = 0.0;
    theta.b.back()[row] = 0.0;

    const auto probes = uniform_mu_grid(ParamDomain::d1(), 5);
    TruncationResult r = truncate_zero_modes(p, theta, probes, 1e-6);
    CHECK(r.params.ranks == std::vector<std::size_t>{1, 2, 1});
    // Kept columns of layer 2 are the original columns 0 and 2.
    for (std::size_t i = 0; i < p.u[1].rows; ++i) {
        CHECK(r.params.u[1].at(i, 0) == p.u[1].at(i, 0));
        CHECK(r.params.u[1].at(i, 1) == p.u[1].at(i, 2));
    }

    // Outputs at the probes are unchanged (the dropped mode contributed 0).
    for (const auto& mu : probes) {
        const double before = meta_forward(1.3, 0.4, mu, p, theta)[0];
        const double after = meta_forward(1.3, 0.4, mu, r.params, r.hyper)[0];
        CHECK(std::fabs(before - after) < 1e-5);  // 10 x eps_trunc scale
    }
}

TEST_CASE("truncate_zero_modes: rank zero is an error") {
    const std::vector<std::size_t> widths{2, 4, 1};
    const std::vector<std::size_t> ranks{1, 1};
    Rng rng(17);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    HyperParams theta = make_hyper_params(ranks, 1, 4, ParamDomain::d1(), rng, 0.05, 0.5);
    // Drive layer 1's only mode to zero while keeping layer 2 alive.
    for (std::size_t c = 0; c < theta.w.back().cols; ++c) theta.w.back().at(0, c) = 0.0;
    theta.b.back()[0] = 0.0;
    const auto probes = uniform_mu_grid(ParamDomain::d1(), 3);
    CHECK_THROWS_AS(truncate_zero_modes(p, theta, probes, 1e-6), std::runtime_error);
}

TEST_CASE("harvest_snapshots: counting, determinism, recomputation") {
    const std::vector<std::size_t> widths{2, 9, 7, 1};
    const std::vector<std::size_t> ranks{1, 3, 1};
    Rng rng(18);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    HyperParams theta = make_hyper_params(ranks, 1, 6, ParamDomain::d1(), rng, 0.05, 0.6);
    SamplingSetX x = SamplingSetX::uniform_grid(4, 3);
    const auto mu_grid = uniform_mu_grid(ParamDomain::d1(), 5);

    SnapshotSet plain = harvest_snapshots(p, theta, x, 0, 0.05, mu_grid, 99);
    REQUIRE(plain.layers.size() == 2);
    CHECK(plain.layers[0].cols == 60);  // 12 points x 5 mu, no perturbations
    CHECK(plain.layers[0].rows == 9);
    CHECK(plain.layers[1].rows == 7);

    SnapshotSet a = harvest_snapshots(p, theta, x, 3, 0.05, mu_grid, 123);
    SnapshotSet b = harvest_snapshots(p, theta, x, 3, 0.05, mu_grid, 123);
    CHECK(a.layers[0].cols == 12 * 5 * 4);
    for (std::size_t i = 0; i < a.layers[0].data.size(); ++i)
        CHECK(a.layers[0].data[i] == b.layers[0].data[i]);  // bitwise

    // Every column equals the hidden state recomputed from its tag.
    for (std::size_t c = 0; c < a.tags.size(); ++c) {
        const auto& tag = a.tags[c];
        const Coefficients s = hyper_forward(tag.mu, theta);
        const auto states = hidden_states(tag.point.x, tag.point.t, p, s);
        for (std::size_t l = 0; l < a.layers.size(); ++l)
            for (std::size_t i = 0; i < states[l].len(); ++i)
                CHECK(a.layers[l].at(i, c) == states[l][i]);
    }

    // Perturbations stay inside the closed domain.
    for (const auto& tag : a.tags) {
        CHECK(tag.point.x >= 0.0);
        CHECK(tag.point.x <= pde::kTwoPi);
        CHECK(tag.point.t >= 0.0);
        CHECK(tag.point.t <= 1.0);
    }
}

TEST_CASE("eim_greedy: single snapshot") {
    DenseMatrix snaps(4, 1);
    snaps.at(0, 0) = 0.5;
    snaps.at(1, 0) = -2.0;  // max magnitude at index 1
    snaps.at(2, 0) = 1.0;
    snaps.at(3, 0) = 0.25;
    EimBasis b = eim_greedy(snaps, 1);
    REQUIRE(b.dim() == 1);
    CHECK(b.indices[0] == 1);
    CHECK(b.xi.at(1, 0) == 1.0);  // normalized at its own max
    // Interpolation is exact for all multiples of the snapshot.
    DenseVector scaled = column(snaps, 0);
    for (double& v : scaled.data) v *= -3.7;
    CHECK(eim_residual_max(b, scaled) < 1e-12);
}

TEST_CASE("eim_greedy: canonical vectors reconstruct their span exactly") {
    const std::size_t m = 6, k = 3;
    DenseMatrix snaps(m, k);
    snaps.at(0, 0) = 1.0;
    snaps.at(2, 1) = 1.0;
    snaps.at(5, 2) = 1.0;
    EimBasis b = eim_greedy(snaps, k);
    REQUIRE(b.dim() == k);
    Rng rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        DenseVector v(m);
        v[0] = rng.normal();
        v[2] = rng.normal();
        v[5] = rng.normal();
        CHECK(eim_residual_max(b, v) < 1e-12);
    }
}

TEST_CASE("eim_greedy: planted rank-3 snapshots, least-squares cross-check") {
    const std::size_t m = 24;
    Rng rng(31);
    DenseMatrix gen(m, 3);
    for (double& v : gen.data) v = rng.normal();
    DenseMatrix snaps(m, 20);
    for (std::size_t c = 0; c < 20; ++c) {
        double w[3] = {rng.normal(), rng.normal(), rng.normal()};
        for (std::size_t i = 0; i < m; ++i)
            snaps.at(i, c) =
                w[0] * gen.at(i, 0) + w[1] * gen.at(i, 1) + w[2] * gen.at(i, 2);
    }
    EimBasis b = eim_greedy(snaps, 3);
    REQUIRE(b.dim() == 3);
    for (std::size_t c = 0; c < snaps.cols; ++c) {
        const DenseVector v = column(snaps, c);
        CHECK(eim_residual_max(b, v) < 1e-10);
        // The 2-norm least-squares projection can only be at least as good.
        CHECK(least_squares_residual(b.xi, v) <= eim_residual_2norm(b, v) + 1e-12);
    }
    // Exhaustion: the snapshots have numerical rank 3, so a larger budget
    // stops early with the flag set.
    EimBasis b5 = eim_greedy(snaps, 5);
    CHECK(b5.exhausted);
    CHECK(b5.dim() == 3);
}

TEST_CASE("eim_greedy: prefix property and monotone residuals") {
    const std::size_t m = 40;
    Rng rng(8);
    DenseMatrix snaps(m, 30);
    // Smooth snapshot family (tanh profiles) so residuals decay gradually.
    for (std::size_t c = 0; c < 30; ++c) {
        const double shift = rng.uniform_in(-2, 2);
        const double scale = rng.uniform_in(0.5, 2.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double xi = -3.0 + 6.0 * static_cast<double>(i) / (m - 1);
            snaps.at(i, c) = std::tanh(scale * (xi - shift));
        }
    }
    EimBasis b4 = eim_greedy(snaps, 4);
    EimBasis b8 = eim_greedy(snaps, 8);
    REQUIRE(b4.dim() == 4);
    REQUIRE(b8.dim() == 8);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(b4.indices[k] == b8.indices[k]);
        for (std::size_t i = 0; i < m; ++i)
            CHECK(b4.xi.at(i, k) == doctest::Approx(b8.xi.at(i, k)).epsilon(1e-14));
    }

    // Worst training-snapshot residual is non-increasing in the budget.
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t budget = 1; budget <= 8; ++budget) {
        EimBasis b = eim_greedy(snaps, budget);
        double worst = 0.0;
        for (std::size_t c = 0; c < snaps.cols; ++c)
            worst = std::max(worst, eim_residual_max(b, column(snaps, c)));
        CHECK(worst <= prev * (1.0 + 1e-12));
        prev = worst;
    }
}

TEST_CASE("eim_apply: interpolation property and zero samples") {
    const std::size_t m = 10;
    Rng rng(44);
    DenseMatrix snaps(m, 6);
    for (double& v : snaps.data) v = rng.normal();
    EimBasis b = eim_greedy(snaps, 4);

    // Sampling a basis column reproduces it exactly.
    const DenseVector xi0 = column(b.xi, 0);
    DenseVector sampled(b.dim());
    for (std::size_t k = 0; k < b.dim(); ++k) sampled[k] = xi0[b.indices[k]];
    const DenseVector recon = eim_apply(b, sampled);
    for (std::size_t i = 0; i < m; ++i) CHECK(std::fabs(recon[i] - xi0[i]) < 1e-11);

    DenseVector zeros(b.dim());
    const DenseVector zrecon = eim_apply(b, zeros);
    for (std::size_t i = 0; i < m; ++i) CHECK(zrecon[i] == 0.0);

    // Random span member: reconstruction from its samples matches it.
    DenseVector v(m);
    Rng rng2(45);
    for (std::size_t c = 0; c < b.dim(); ++c) {
        const double w = rng2.normal();
        for (std::size_t i = 0; i < m; ++i) v[i] += w * b.xi.at(i, c);
    }
    DenseVector vs(b.dim());
    for (std::size_t k = 0; k < b.dim(); ++k) vs[k] = v[b.indices[k]];
    const DenseVector vrecon = eim_apply(b, vs);
    for (std::size_t i = 0; i < m; ++i)
        CHECK(std::fabs(vrecon[i] - v[i]) <= 1e-10 * std::max(1.0, std::fabs(v[i])));

    // Interpolation at selected indices is exact for span members.
    for (std::size_t k = 0; k < b.dim(); ++k)
        CHECK(std::fabs(vrecon[b.indices[k]] - v[b.indices[k]]) < 1e-12);
}

TEST_CASE("build_fastparams: row subsampling is bitwise") {
    const std::vector<std::size_t> widths{2, 12, 10, 1};
    const std::vector<std::size_t> ranks{1, 4, 1};
    Rng rng(20);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients s = make_coefficients(ranks, rng, 0.2, 1.0);
    std::vector<EimBasis> bases;
    for (std::size_t l = 0; l + 1 < p.depth(); ++l) {
        DenseMatrix snaps(widths[l + 1], 8);
        for (std::size_t c = 0; c < 8; ++c) {
            const auto states =
                hidden_states(rng.uniform_in(0, 6.28), rng.uniform_in(0, 1), p, s);
            for (std::size_t i = 0; i < states[l].len(); ++i) snaps.at(i, c) = states[l][i];
        }
        bases.push_back(eim_greedy(snaps, 3));
    }
    FastParams fast = build_fastparams(p, bases);
    for (std::size_t l = 0; l < bases.size(); ++l) {
        for (std::size_t k = 0; k < bases[l].dim(); ++k) {
            const std::size_t row = bases[l].indices[k];
            for (std::size_t j = 0; j < p.ranks[l]; ++j)
                CHECK(fast.u_hat[l].at(k, j) == p.u[l].at(row, j));
            CHECK(fast.b_hat[l][k] == p.b[l][row]);
        }
    }
}

TEST_CASE("build_fastparams: identity reduction reproduces the parent factors") {
    const std::vector<std::size_t> widths{2, 6, 5, 1};
    const std::vector<std::size_t> ranks{1, 2, 1};
    Rng rng(21);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    FastParams fast = build_fastparams(p, identity_bases(p));
    for (std::size_t l = 0; l + 1 < p.depth(); ++l) {
        for (std::size_t i = 0; i < p.u[l].rows; ++i)
            for (std::size_t j = 0; j < p.u[l].cols; ++j)
                CHECK(fast.u_hat[l].at(i, j) == p.u[l].at(i, j));
        for (std::size_t i = 0; i < p.b[l].len(); ++i) CHECK(fast.b_hat[l][i] == p.b[l][i]);
        // Vhat = V^{l+1} under Xi = P = I.
        for (std::size_t i = 0; i < p.v[l + 1].rows; ++i)
            for (std::size_t j = 0; j < p.v[l + 1].cols; ++j)
                CHECK(fast.v_hat[l].at(i, j) ==
                      doctest::Approx(p.v[l + 1].at(i, j)).epsilon(1e-13));
    }
}
