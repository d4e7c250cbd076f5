#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace icegraph {

/// Dense row-major matrix of doubles. The workhorse container for node
/// features (N x F), edge batches (E x F) and layer weights.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

    double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

    std::size_t size() const { return a.size(); }
    void fill(double v) { std::fill(a.begin(), a.end(), v); }
    void zero() { fill(0.0); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

/// C = op(A) * op(B). Shapes are checked; throws ValidationError on mismatch.
Matrix matmul(const Matrix& A, const Matrix& B, bool trans_a = false, bool trans_b = false);

/// C += op(A) * op(B) (accumulating form used by gradient accumulation).
void matmul_acc(Matrix& C, const Matrix& A, const Matrix& B, bool trans_a = false,
                bool trans_b = false);

/// C = beta*C + op(A)*op(B) on raw row-major buffers. op(A) is m x k,
/// op(B) is k x n; lda/ldb are the *stored* column counts of A and B.
void gemm_raw(int m, int n, int k, const double* A, int lda, bool trans_a, const double* B,
              int ldb, bool trans_b, double* C, int ldc, double beta);

/// Dense channel-major grid tensor (C x H x W) for the convolutional model.
struct GridTensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> a;

    GridTensor() = default;
    GridTensor(int c, int h, int w)
        : channels(c), height(h), width(w),
          a(static_cast<std::size_t>(c) * h * w, 0.0) {}

    double& at(int c, int y, int x) {
        return a[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return a[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    double* channel(int c) { return a.data() + static_cast<std::size_t>(c) * height * width; }
    const double* channel(int c) const {
        return a.data() + static_cast<std::size_t>(c) * height * width;
    }

    std::size_t size() const { return a.size(); }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

/// Set the number of threads the BLAS backend may use (1 keeps results
/// bitwise reproducible regardless of machine load).
void set_blas_threads(int n);

} // namespace icegraph
