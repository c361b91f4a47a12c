#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lrnr/model.hpp"
#include "lrnr/reduction.hpp"

using namespace lrnr;

namespace {

// Independent oracle: explicitly materialize W^l = U^l diag(s^l) V^l^T and
// run the plain feedforward recursion.
DenseMatrix materialize(const DenseMatrix& u, const DenseVector& s, const DenseMatrix& v) {
    DenseMatrix w(u.rows, v.rows);
    for (std::size_t i = 0; i < u.rows; ++i)
        for (std::size_t j = 0; j < v.rows; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < u.cols; ++k) acc += u.at(i, k) * s[k] * v.at(j, k);
            w.at(i, j) = acc;
        }
    return w;
}

DenseVector explicit_w_forward(double x, double t, const LrnrParams& p, const Coefficients& s) {
    DenseVector z{x, t};
    for (std::size_t l = 0; l < p.depth(); ++l) {
        const DenseMatrix w = materialize(p.u[l], s.s[l], p.v[l]);
        DenseVector a = matvec(w, z);
        for (std::size_t i = 0; i < a.len(); ++i) a[i] += p.b[l][i];
        if (l + 1 < p.depth()) {
            for (std::size_t i = 0; i < a.len(); ++i) a[i] = std::tanh(a[i]);
        }
        z = std::move(a);
    }
    return z;
}

LrnrParams zero_params(const std::vector<std::size_t>& widths,
                       const std::vector<std::size_t>& ranks) {
    LrnrParams p;
    p.widths = widths;
    p.ranks = ranks;
    for (std::size_t l = 0; l < ranks.size(); ++l) {
        p.u.emplace_back(widths[l + 1], ranks[l]);
        p.v.emplace_back(widths[l], ranks[l]);
        p.b.emplace_back(widths[l + 1]);
    }
    return p;
}

Coefficients const_coeffs(const std::vector<std::size_t>& ranks, double value) {
    Coefficients c;
    for (std::size_t r : ranks) {
        DenseVector s(r);
        for (double& v : s.data) v = value;
        c.s.push_back(std::move(s));
    }
    return c;
}

}  // namespace

TEST_CASE("activation identities hold against finite differences") {
    Activation act;
    for (double a : {-2.0, -0.3, 0.0, 0.7, 1.9}) {
        const double s = act.value(a);
        CHECK(std::fabs(act.d1(a) - (1.0 - s * s)) <= 1e-14);
        CHECK(std::fabs(act.d2(a) - (-2.0 * s * act.d1(a))) <= 1e-14);
        const double h = 1e-6;
        const double fd1 = (act.value(a + h) - act.value(a - h)) / (2.0 * h);
        const double fd2 = (act.value(a + h) - 2.0 * s + act.value(a - h)) / (h * h);
        CHECK(std::fabs(act.d1(a) - fd1) <= 1e-9);
        CHECK(std::fabs(act.d2(a) - fd2) <= 1e-3);
        CHECK(std::fabs(Activation::d1_from_value(s) - act.d1(a)) <= 1e-15);
        CHECK(std::fabs(Activation::d2_from_value(s) - act.d2(a)) <= 1e-15);
        const double d3_fd = (act.d2(a + h) - act.d2(a - h)) / (2.0 * h);
        CHECK(std::fabs(Activation::d3_from_value(s) - d3_fd) <= 1e-8);
    }
}

TEST_CASE("inr_forward trivial cases") {
    const std::vector<std::size_t> widths{2, 3, 1};
    const std::vector<std::size_t> ranks{2, 1};
    LrnrParams p = zero_params(widths, ranks);
    Coefficients s = const_coeffs(ranks, 0.37);
    DenseVector out = inr_forward(1.2, 0.5, p, s);
    CHECK(out[0] == 0.0);  // all-zero parameters

    Rng rng(1);
    LrnrParams q = make_lrnr_params(widths, ranks, rng);
    Coefficients zero_s = const_coeffs(ranks, 0.0);
    DenseVector out2 = inr_forward(0.3, 0.9, q, zero_s);
    CHECK(out2[0] == q.b.back()[0]);  // weight products vanish, output is b^L
}

TEST_CASE("inr_forward matches the explicit-W oracle") {
    const std::vector<std::size_t> widths{2, 3, 1};
    const std::vector<std::size_t> ranks{2, 1};
    Rng rng(17);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients s = make_coefficients(ranks, rng, 0.0, 1.5);
    for (int k = 0; k < 25; ++k) {
        const double x = rng.uniform_in(0.0, 6.28);
        const double t = rng.uniform_in(0.0, 1.0);
        const double got = inr_forward(x, t, p, s)[0];
        const double want = explicit_w_forward(x, t, p, s)[0];
        CHECK(std::fabs(got - want) < 1e-13);
    }
}

TEST_CASE("inr_forward on a deeper seeded net vs oracle") {
    const std::vector<std::size_t> widths{2, 12, 12, 12, 1};
    const std::vector<std::size_t> ranks{1, 4, 4, 1};
    Rng rng(23);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients s = make_coefficients(ranks, rng, 0.0, 1.0);
    for (int k = 0; k < 10; ++k) {
        const double x = rng.uniform_in(0.0, 6.28);
        const double t = rng.uniform_in(0.0, 1.0);
        CHECK(std::fabs(inr_forward(x, t, p, s)[0] - explicit_w_forward(x, t, p, s)[0]) <
              1e-13);
    }
}

TEST_CASE("lrnr_forward is bitwise identical to inr_forward") {
    const std::vector<std::size_t> widths{2, 5, 1};
    const std::vector<std::size_t> ranks{1, 1};
    Rng rng(9);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients s = make_coefficients(ranks, rng, 0.0, 1.0);
    const double a = inr_forward(2.5, 0.25, p, s)[0];
    const double b = lrnr_forward(2.5, 0.25, p, s)[0];
    CHECK(a == b);
}

TEST_CASE("diagonal parametrization: folding s into U is invariant") {
    const std::vector<std::size_t> widths{2, 6, 6, 1};
    const std::vector<std::size_t> ranks{2, 3, 1};
    Rng rng(31);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients s = make_coefficients(ranks, rng, 0.2, 1.2);
    LrnrParams folded = p;
    for (std::size_t l = 0; l < p.depth(); ++l) {
        for (std::size_t i = 0; i < folded.u[l].rows; ++i)
            for (std::size_t j = 0; j < folded.u[l].cols; ++j)
                folded.u[l].at(i, j) *= s.s[l][j];
    }
    Coefficients ones = const_coeffs(ranks, 1.0);
    for (int k = 0; k < 20; ++k) {
        const double x = rng.uniform_in(0.0, 6.28), t = rng.uniform_in(0.0, 1.0);
        CHECK(std::fabs(lrnr_forward(x, t, p, s)[0] - lrnr_forward(x, t, folded, ones)[0]) <=
              1e-12);
    }
}

TEST_CASE("hyper_forward trivial and range properties") {
    const std::vector<std::size_t> split{1, 3, 1};
    HyperParams zero;
    zero.split = split;
    zero.box = ParamDomain::d2();
    zero.w.emplace_back(4, 3);
    zero.b.emplace_back(4);
    zero.w.emplace_back(5, 4);
    zero.b.emplace_back(5);
    Coefficients c = hyper_forward({2.0, 1.0, 0.5}, zero);
    for (const auto& layer : c.s)
        for (double v : layer.data) CHECK(v == 0.0);

    Rng rng(77);
    HyperParams theta = make_hyper_params(split, 2, 8, ParamDomain::d2(), rng, 1.0, 0.0);
    for (int k = 0; k < 100; ++k) {
        PdeParams mu{rng.uniform_in(1, 3), rng.uniform_in(0, 2), rng.uniform_in(0, 2)};
        Coefficients out = hyper_forward(mu, theta);
        CHECK(out.s.size() == split.size());
        for (const auto& layer : out.s)
            for (double v : layer.data) CHECK(v >= 0.0);
    }
}

TEST_CASE("hyper_forward with one hidden unit matches the closed form") {
    const std::vector<std::size_t> split{2};
    HyperParams theta;
    theta.split = split;
    theta.box = ParamDomain{{0, 0, 0}, {1, 1, 1}};
    DenseMatrix w1(1, 3);
    w1.at(0, 0) = 0.5;
    w1.at(0, 1) = -0.25;
    w1.at(0, 2) = 1.5;
    DenseVector b1{0.1};
    DenseMatrix w2(2, 1);
    w2.at(0, 0) = 2.0;
    w2.at(1, 0) = -3.0;
    DenseVector b2{0.05, 0.2};
    theta.w = {w1, w2};
    theta.b = {b1, b2};
    const PdeParams mu{0.3, 0.8, 0.4};
    const double h = std::tanh(0.5 * 0.3 - 0.25 * 0.8 + 1.5 * 0.4 + 0.1);
    const double o0 = std::max(0.0, 2.0 * h + 0.05);
    const double o1 = std::max(0.0, -3.0 * h + 0.2);
    Coefficients out = hyper_forward(mu, theta);
    CHECK(out.s[0][0] == doctest::Approx(o0).epsilon(1e-14));
    CHECK(out.s[0][1] == doctest::Approx(o1).epsilon(1e-14));
}

TEST_CASE("meta_forward equals the two-step composition bitwise") {
    const std::vector<std::size_t> widths{2, 6, 1};
    const std::vector<std::size_t> ranks{2, 1};
    Rng rng(5);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    HyperParams theta = make_hyper_params(ranks, 2, 8, ParamDomain::d1(), rng, 0.1, 0.3);
    const PdeParams mu{6.5, 0.0, 0.0};
    const double direct = meta_forward(1.1, 0.4, mu, p, theta)[0];
    const double composed = lrnr_forward(1.1, 0.4, p, hyper_forward(mu, theta))[0];
    CHECK(direct == composed);

    // Zero hypernetwork weights make s = 0, so the output is b^L.
    HyperParams zero = theta;
    for (auto& w : zero.w)
        for (double& v : w.data) v = 0.0;
    for (auto& b : zero.b)
        for (double& v : b.data) v = 0.0;
    CHECK(meta_forward(1.1, 0.4, mu, p, zero)[0] == p.b.back()[0]);
}

TEST_CASE("jet_forward on a single affine layer") {
    const std::vector<std::size_t> widths{2, 1};
    const std::vector<std::size_t> ranks{1};
    LrnrParams p = zero_params(widths, ranks);
    p.u[0].at(0, 0) = 1.0;
    p.v[0].at(0, 0) = 0.75;   // w1
    p.v[0].at(1, 0) = -0.25;  // w2
    p.b[0][0] = 0.6;
    Coefficients s = const_coeffs(ranks, 1.0);
    const double x = 1.3, t = 0.4;
    Jet jet = jet_forward(x, t, p, s);
    CHECK(jet.value[0] == doctest::Approx(0.75 * x - 0.25 * t + 0.6).epsilon(1e-15));
    CHECK(jet.dx[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(jet.dt[0] == doctest::Approx(-0.25).epsilon(1e-15));
    CHECK(jet.dxx[0] == 0.0);
}

TEST_CASE("jet_forward of a constant network has zero derivative slots") {
    const std::vector<std::size_t> widths{2, 4, 1};
    const std::vector<std::size_t> ranks{1, 1};
    LrnrParams p = zero_params(widths, ranks);
    p.b[1][0] = 2.5;
    Coefficients s = const_coeffs(ranks, 1.0);
    Jet jet = jet_forward(0.2, 0.9, p, s);
    CHECK(jet.value[0] == 2.5);
    CHECK(jet.dx[0] == 0.0);
    CHECK(jet.dt[0] == 0.0);
    CHECK(jet.dxx[0] == 0.0);
}

TEST_CASE("jet_forward matches central finite differences on a seeded LRNR") {
    const std::vector<std::size_t> widths{2, 16, 16, 1};
    const std::vector<std::size_t> ranks{1, 5, 1};
    Rng rng(101);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients s = make_coefficients(ranks, rng, 0.3, 1.4);
    const double h = 1e-4;
    auto u = [&](double x, double t) { return lrnr_forward(x, t, p, s)[0]; };
    for (int k = 0; k < 40; ++k) {
        const double x = rng.uniform_in(0.5, 5.5), t = rng.uniform_in(0.1, 0.9);
        Jet jet = jet_forward(x, t, p, s);
        const double fdx = (u(x + h, t) - u(x - h, t)) / (2 * h);
        const double fdt = (u(x, t + h) - u(x, t - h)) / (2 * h);
        const double fdxx = (u(x + h, t) - 2 * u(x, t) + u(x - h, t)) / (h * h);
        CHECK(std::fabs(jet.dx[0] - fdx) <= 1e-6 * std::max(std::fabs(fdx), 1e-2));
        CHECK(std::fabs(jet.dt[0] - fdt) <= 1e-6 * std::max(std::fabs(fdt), 1e-2));
        CHECK(std::fabs(jet.dxx[0] - fdxx) <= 1e-5 * std::max(std::fabs(fdxx), 1e-1));
    }
}

TEST_CASE("jet linearity under output-layer scaling") {
    const std::vector<std::size_t> widths{2, 8, 1};
    const std::vector<std::size_t> ranks{2, 1};
    Rng rng(55);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients s = make_coefficients(ranks, rng, 0.2, 1.0);
    LrnrParams scaled = p;
    const double alpha = -2.25;
    for (double& v : scaled.u.back().data) v *= alpha;
    for (double& v : scaled.b.back().data) v *= alpha;
    Jet a = jet_forward(1.7, 0.3, p, s);
    Jet b = jet_forward(1.7, 0.3, scaled, s);
    auto close = [](double got, double want) {
        return std::fabs(got - want) <= 1e-14 * std::max(1.0, std::fabs(want));
    };
    CHECK(close(b.value[0], alpha * a.value[0]));
    CHECK(close(b.dx[0], alpha * a.dx[0]));
    CHECK(close(b.dt[0], alpha * a.dt[0]));
    CHECK(close(b.dxx[0], alpha * a.dxx[0]));
}

TEST_CASE("fast_forward equals lrnr_forward under the identity reduction") {
    const std::vector<std::size_t> widths{2, 10, 10, 1};
    const std::vector<std::size_t> ranks{1, 3, 1};
    Rng rng(13);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients s = make_coefficients(ranks, rng, 0.2, 1.2);
    const FastParams fast = reduction::build_fastparams(p, reduction::identity_bases(p));
    for (int k = 0; k < 100; ++k) {
        const double x = rng.uniform_in(0.0, 6.28), t = rng.uniform_in(0.0, 1.0);
        CHECK(std::fabs(fast_forward(x, t, fast, s)[0] - lrnr_forward(x, t, p, s)[0]) <=
              1e-12);
        Jet jf = jet_forward(x, t, fast, s);
        Jet jl = jet_forward(x, t, p, s);
        CHECK(std::fabs(jf.dx[0] - jl.dx[0]) <= 1e-11);
        CHECK(std::fabs(jf.dt[0] - jl.dt[0]) <= 1e-11);
        CHECK(std::fabs(jf.dxx[0] - jl.dxx[0]) <= 1e-10);
    }
}

TEST_CASE("FastParams shapes do not depend on the parent width") {
    const std::vector<std::size_t> ranks{1, 4, 4, 1};
    Rng rng1(2), rng2(2);
    LrnrParams small = make_lrnr_params({2, 32, 32, 32, 1}, ranks, rng1);
    LrnrParams big = make_lrnr_params({2, 256, 256, 256, 1}, ranks, rng2);
    Coefficients s = const_coeffs(ranks, 0.8);

    auto reduce = [&](const LrnrParams& p) {
        std::vector<reduction::EimBasis> bases;
        for (std::size_t l = 0; l + 1 < p.depth(); ++l) {
            DenseMatrix snaps(p.widths[l + 1], 6);
            Rng srng(7);
            for (std::size_t c = 0; c < 6; ++c) {
                const auto states =
                    hidden_states(srng.uniform_in(0, 6.28), srng.uniform_in(0, 1), p, s);
                for (std::size_t i = 0; i < states[l].len(); ++i)
                    snaps.at(i, c) = states[l][i];
            }
            bases.push_back(reduction::eim_greedy(snaps, 3));
        }
        return reduction::build_fastparams(p, bases);
    };
    const FastParams fs = reduce(small);
    const FastParams fb = reduce(big);
    REQUIRE(fs.red_ranks.size() == fb.red_ranks.size());
    for (std::size_t l = 0; l < fs.red_ranks.size(); ++l) {
        CHECK(fs.red_ranks[l] == fb.red_ranks[l]);
        CHECK(fs.u_hat[l].rows == fb.u_hat[l].rows);
        CHECK(fs.u_hat[l].cols == fb.u_hat[l].cols);
        CHECK(fs.v_hat[l].rows == fb.v_hat[l].rows);
        CHECK(fs.v_hat[l].cols == fb.v_hat[l].cols);
    }
    CHECK(fs.u_out.rows == fb.u_out.rows);
    CHECK(fs.u_out.cols == fb.u_out.cols);
}

TEST_CASE("hidden_states match an independent recomputation") {
    const std::vector<std::size_t> widths{2, 7, 5, 1};
    const std::vector<std::size_t> ranks{1, 3, 1};
    Rng rng(19);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients s = make_coefficients(ranks, rng, 0.1, 1.0);
    const double x = 2.2, t = 0.6;
    const auto states = hidden_states(x, t, p, s);
    REQUIRE(states.size() == 2);

    DenseVector z{x, t};
    for (std::size_t l = 0; l + 1 < p.depth(); ++l) {
        const DenseMatrix w = materialize(p.u[l], s.s[l], p.v[l]);
        DenseVector a = matvec(w, z);
        for (std::size_t i = 0; i < a.len(); ++i) a[i] = std::tanh(a[i] + p.b[l][i]);
        for (std::size_t i = 0; i < a.len(); ++i)
            CHECK(states[l][i] == doctest::Approx(a[i]).epsilon(1e-13));
        z = a;
    }
}

TEST_CASE("dimension mismatches are rejected") {
    const std::vector<std::size_t> widths{2, 4, 1};
    const std::vector<std::size_t> ranks{1, 1};
    Rng rng(3);
    LrnrParams p = make_lrnr_params(widths, ranks, rng);
    Coefficients bad = const_coeffs({1, 3}, 0.5);
    CHECK_THROWS_AS(inr_forward(0.1, 0.1, p, bad), std::invalid_argument);
    Coefficients too_few = const_coeffs({1}, 0.5);
    CHECK_THROWS_AS(inr_forward(0.1, 0.1, p, too_few), std::invalid_argument);
}
