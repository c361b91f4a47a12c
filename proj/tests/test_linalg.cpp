#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lrnr/linalg.hpp"
#include "lrnr/rng.hpp"

using namespace lrnr;

namespace {

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data) v = rng.normal();
    return m;
}

// Applies the recorded pivots then multiplies L*U; reconstruction oracle for
// the factorization.
DenseMatrix lu_reconstruct(const LuFactorization& f) {
    const std::size_t n = f.lu.rows;
    DenseMatrix lu_prod(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const std::size_t kmax = std::min(i, j);
            for (std::size_t k = 0; k <= kmax; ++k) {
                const double lik = (k == i) ? 1.0 : f.lu.at(i, k);
                if (k <= j) acc += lik * f.lu.at(k, j);
            }
            lu_prod.at(i, j) = acc;
        }
    }
    // Undo the row swaps in reverse order to recover the original matrix.
    for (std::size_t k = n; k-- > 0;) {
        if (f.piv[k] != k) {
            for (std::size_t j = 0; j < n; ++j)
                std::swap(lu_prod.at(k, j), lu_prod.at(f.piv[k], j));
        }
    }
    return lu_prod;
}

}  // namespace

TEST_CASE("matvec identity, zero, and hand-computed cases") {
    DenseMatrix eye = DenseMatrix::identity(3);
    DenseVector x{1.0, 2.0, 3.0};
    DenseVector y = matvec(eye, x);
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 2.0);
    CHECK(y[2] == 3.0);

    DenseMatrix zero(2, 3);
    DenseVector z = matvec(zero, x);
    CHECK(z[0] == 0.0);
    CHECK(z[1] == 0.0);

    DenseMatrix a(2, 2);
    a.at(0, 0) = 1.0;
    a.at(0, 1) = 2.0;
    a.at(1, 0) = 3.0;
    a.at(1, 1) = 4.0;
    DenseVector ones{1.0, 1.0};
    DenseVector r = matvec(a, ones);
    CHECK(r[0] == 3.0);
    CHECK(r[1] == 7.0);

    CHECK_THROWS_AS(matvec(a, x), std::invalid_argument);
}

TEST_CASE("matvec is linear") {
    Rng rng(11);
    DenseMatrix a = random_matrix(5, 4, rng);
    DenseVector x(4), y(4);
    for (std::size_t i = 0; i < 4; ++i) {
        x[i] = rng.uniform_in(-1, 1);
        y[i] = rng.uniform_in(-1, 1);
    }
    const double alpha = 0.7, beta = -1.3;
    DenseVector combo(4);
    for (std::size_t i = 0; i < 4; ++i) combo[i] = alpha * x[i] + beta * y[i];
    DenseVector lhs = matvec(a, combo);
    DenseVector ax = matvec(a, x), ay = matvec(a, y);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(std::fabs(lhs[i] - (alpha * ax[i] + beta * ay[i])) <= 1e-12);
}

TEST_CASE("hadamard identity, annihilation, hand case, commutativity") {
    DenseVector ones{1.0, 1.0};
    DenseVector v{0.25, -3.5};
    DenseVector h = hadamard(ones, v);
    CHECK(h[0] == v[0]);
    CHECK(h[1] == v[1]);

    DenseVector zeros{0.0, 0.0};
    DenseVector hz = hadamard(zeros, v);
    CHECK(hz[0] == 0.0);
    CHECK(hz[1] == 0.0);

    DenseVector a{2.0, 3.0}, b{4.0, 5.0};
    DenseVector ab = hadamard(a, b);
    CHECK(ab[0] == 8.0);
    CHECK(ab[1] == 15.0);

    Rng rng(3);
    DenseVector p(7), q(7), r(7);
    for (std::size_t i = 0; i < 7; ++i) {
        p[i] = rng.normal();
        q[i] = rng.normal();
        r[i] = rng.normal();
    }
    DenseVector pq = hadamard(p, q), qp = hadamard(q, p);
    for (std::size_t i = 0; i < 7; ++i) CHECK(pq[i] == qp[i]);  // bitwise
    DenseVector left = hadamard(hadamard(p, q), r);
    DenseVector right = hadamard(p, hadamard(q, r));
    for (std::size_t i = 0; i < 7; ++i)
        CHECK(left[i] == doctest::Approx(right[i]).epsilon(1e-15));

    CHECK_THROWS_AS(hadamard(p, a), std::invalid_argument);
}

TEST_CASE("lu_factor identity and permutation") {
    DenseMatrix eye = DenseMatrix::identity(4);
    LuFactorization f = lu_factor(eye);
    DenseVector rhs{1.0, 2.0, 3.0, 4.0};
    DenseVector x = lu_solve(f, rhs);
    for (std::size_t i = 0; i < 4; ++i) CHECK(x[i] == rhs[i]);

    DenseMatrix perm(2, 2);
    perm.at(0, 1) = 1.0;
    perm.at(1, 0) = 1.0;
    LuFactorization fp = lu_factor(perm);
    DenseVector b{5.0, 9.0};
    DenseVector xp = lu_solve(fp, b);
    CHECK(xp[0] == doctest::Approx(9.0));
    CHECK(xp[1] == doctest::Approx(5.0));
}

TEST_CASE("lu_factor singular matrix is rejected") {
    DenseMatrix sing(2, 2);
    sing.at(0, 0) = 1.0;
    sing.at(0, 1) = 2.0;
    sing.at(1, 0) = 2.0;
    sing.at(1, 1) = 4.0;
    CHECK_THROWS_AS(lu_factor(sing), std::runtime_error);
}

TEST_CASE("lu reconstruction oracle on seeded 5x5") {
    Rng rng(42);
    DenseMatrix a = random_matrix(5, 5, rng);
    LuFactorization f = lu_factor(a);
    DenseMatrix recon = lu_reconstruct(f);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = recon.data[i] - a.data[i];
        num += d * d;
        den += a.data[i] * a.data[i];
    }
    CHECK(std::sqrt(num / den) < 1e-12);
}

TEST_CASE("lu_solve diagonal and residual oracle") {
    DenseMatrix d(2, 2);
    d.at(0, 0) = 2.0;
    d.at(1, 1) = 4.0;
    DenseVector rhs{2.0, 4.0};
    DenseVector x = lu_solve(lu_factor(d), rhs);
    CHECK(x[0] == doctest::Approx(1.0));
    CHECK(x[1] == doctest::Approx(1.0));

    Rng rng(7);
    DenseMatrix a = random_matrix(5, 5, rng);
    for (std::size_t i = 0; i < 5; ++i) a.at(i, i) += 3.0;  // keep it well conditioned
    LuFactorization f = lu_factor(a);
    for (int rep = 0; rep < 10; ++rep) {
        DenseVector b(5);
        for (std::size_t i = 0; i < 5; ++i) b[i] = rng.uniform_in(-2, 2);
        DenseVector sol = lu_solve(f, b);
        DenseVector ax = matvec(a, sol);
        double rmax = 0.0, bmax = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
            rmax = std::max(rmax, std::fabs(ax[i] - b[i]));
            bmax = std::max(bmax, std::fabs(b[i]));
        }
        CHECK(rmax <= 1e-10 * std::max(bmax, 1.0));
    }
}

TEST_CASE("frobenius_sq") {
    DenseMatrix zero(3, 2);
    CHECK(frobenius_sq(zero) == 0.0);
    CHECK(frobenius_sq(DenseMatrix::identity(4)) == 4.0);
    DenseMatrix swap2(2, 2);
    swap2.at(0, 1) = 1.0;
    swap2.at(1, 0) = 1.0;
    CHECK(frobenius_sq(swap2) == 2.0);
}

TEST_CASE("matvec_transposed and mat_t_mul agree with explicit transpose") {
    Rng rng(5);
    DenseMatrix a = random_matrix(6, 3, rng);
    DenseMatrix b = random_matrix(6, 4, rng);
    DenseVector x(6);
    for (std::size_t i = 0; i < 6; ++i) x[i] = rng.normal();
    DenseMatrix at = transpose(a);
    DenseVector lhs = matvec_transposed(a, x);
    DenseVector rhs = matvec(at, x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-15));

    DenseMatrix prod = mat_t_mul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 6; ++k) acc += a.at(k, i) * b.at(k, j);
            CHECK(prod.at(i, j) == doctest::Approx(acc).epsilon(1e-14));
        }
    }
}
