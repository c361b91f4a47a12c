#ifndef LRNR_LINALG_HPP
#define LRNR_LINALG_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

// Minimal dense linear algebra used by the rest of the project. Matrices are
// small (a few hundred rows at most), so plain triple loops are adequate and
// keep timing benchmarks self-contained. No BLAS.

namespace lrnr {

struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, data.size() == rows * cols

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row_ptr(std::size_t i) { return data.data() + i * cols; }
    const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

struct DenseVector {
    std::vector<double> data;

    DenseVector() = default;
    explicit DenseVector(std::size_t n) : data(n, 0.0) {}
    DenseVector(std::initializer_list<double> init) : data(init) {}

    std::size_t len() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
};

// Combined L/U storage with partial-pivot row permutation.
struct LuFactorization {
    DenseMatrix lu;              // unit lower triangle below diagonal, U on/above
    std::vector<std::size_t> piv;  // row swapped with k at elimination step k
};

DenseVector matvec(const DenseMatrix& a, const DenseVector& x);

// y = A^T x without forming the transpose.
DenseVector matvec_transposed(const DenseMatrix& a, const DenseVector& x);

DenseVector hadamard(const DenseVector& a, const DenseVector& b);

// C = A^T B, where A is m-by-p and B is m-by-q.
DenseMatrix mat_t_mul(const DenseMatrix& a, const DenseMatrix& b);

DenseMatrix transpose(const DenseMatrix& a);

// Partial-pivoting LU. Throws std::runtime_error when a pivot falls below
// 1e-14 in magnitude (numerically singular input).
LuFactorization lu_factor(const DenseMatrix& a);

DenseVector lu_solve(const LuFactorization& f, const DenseVector& rhs);

double frobenius_sq(const DenseMatrix& a);

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace lrnr

#endif
