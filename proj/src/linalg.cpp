#include "lrnr/linalg.hpp"

#include <cmath>

namespace lrnr {

DenseVector matvec(const DenseMatrix& a, const DenseVector& x) {
    require(a.cols == x.len(), "matvec: A.cols != x.len");
    DenseVector y(a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.row_ptr(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

DenseVector matvec_transposed(const DenseMatrix& a, const DenseVector& x) {
    require(a.rows == x.len(), "matvec_transposed: A.rows != x.len");
    DenseVector y(a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.row_ptr(i);
        const double xi = x[i];
        for (std::size_t j = 0; j < a.cols; ++j) y[j] += row[j] * xi;
    }
    return y;
}

DenseVector hadamard(const DenseVector& a, const DenseVector& b) {
    require(a.len() == b.len(), "hadamard: length mismatch");
    DenseVector y(a.len());
    for (std::size_t i = 0; i < a.len(); ++i) y[i] = a[i] * b[i];
    return y;
}

DenseMatrix mat_t_mul(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.rows == b.rows, "mat_t_mul: row count mismatch");
    DenseMatrix c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.row_ptr(k);
        const double* brow = b.row_ptr(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            double* crow = c.row_ptr(i);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

LuFactorization lu_factor(const DenseMatrix& a) {
    require(a.rows == a.cols, "lu_factor: matrix not square");
    const std::size_t n = a.rows;
    LuFactorization f;
    f.lu = a;
    f.piv.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t imax = k;
        double vmax = std::fabs(f.lu.at(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            const double v = std::fabs(f.lu.at(i, k));
            if (v > vmax) {
                vmax = v;
                imax = i;
            }
        }
        if (vmax < 1e-14) throw std::runtime_error("lu_factor: singular matrix (pivot < 1e-14)");
        f.piv[k] = imax;
        if (imax != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(f.lu.at(k, j), f.lu.at(imax, j));
        }
        const double pivot = f.lu.at(k, k);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double m = f.lu.at(i, k) / pivot;
            f.lu.at(i, k) = m;
            for (std::size_t j = k + 1; j < n; ++j) f.lu.at(i, j) -= m * f.lu.at(k, j);
        }
    }
    return f;
}

DenseVector lu_solve(const LuFactorization& f, const DenseVector& rhs) {
    const std::size_t n = f.lu.rows;
    require(rhs.len() == n, "lu_solve: rhs length mismatch");
    DenseVector x = rhs;
    // Row interchanges first (the stored multipliers are in permuted order),
    // then unit-lower forward substitution.
    for (std::size_t k = 0; k < n; ++k) {
        if (f.piv[k] != k) std::swap(x[k], x[f.piv[k]]);
    }
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = k + 1; i < n; ++i) x[i] -= f.lu.at(i, k) * x[k];
    }
    for (std::size_t k = n; k-- > 0;) {
        double acc = x[k];
        for (std::size_t j = k + 1; j < n; ++j) acc -= f.lu.at(k, j) * x[j];
        x[k] = acc / f.lu.at(k, k);
    }
    return x;
}

double frobenius_sq(const DenseMatrix& a) {
    double acc = 0.0;
    for (double v : a.data) acc += v * v;
    return acc;
}

}  // namespace lrnr
