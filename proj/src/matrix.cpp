#include "icegraph/matrix.hpp"

#include <cblas.h>
#include <string>

#include "icegraph/errors.hpp"

extern "C" void openblas_set_num_threads(int);

namespace icegraph {

namespace {

void gemm(Matrix& C, const Matrix& A, const Matrix& B, bool ta, bool tb, double beta) {
    const int m = ta ? A.cols : A.rows;
    const int k = ta ? A.rows : A.cols;
    const int kb = tb ? B.cols : B.rows;
    const int n = tb ? B.rows : B.cols;
    if (k != kb) {
        throw ValidationError("matmul: inner dimensions differ: op(A) is " + std::to_string(m) +
                              "x" + std::to_string(k) + ", op(B) is " + std::to_string(kb) + "x" +
                              std::to_string(n));
    }
    if (C.rows != m || C.cols != n) {
        throw ValidationError("matmul: output is " + std::to_string(C.rows) + "x" +
                              std::to_string(C.cols) + ", expected " + std::to_string(m) + "x" +
                              std::to_string(n));
    }
    if (m == 0 || n == 0) return;
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, 1.0, A.a.data(), A.cols, B.a.data(), B.cols, beta, C.a.data(), C.cols);
}

} // namespace

Matrix matmul(const Matrix& A, const Matrix& B, bool trans_a, bool trans_b) {
    Matrix C(trans_a ? A.cols : A.rows, trans_b ? B.rows : B.cols);
    gemm(C, A, B, trans_a, trans_b, 0.0);
    return C;
}

void matmul_acc(Matrix& C, const Matrix& A, const Matrix& B, bool trans_a, bool trans_b) {
    gemm(C, A, B, trans_a, trans_b, 1.0);
}

void gemm_raw(int m, int n, int k, const double* A, int lda, bool trans_a, const double* B,
              int ldb, bool trans_b, double* C, int ldc, double beta) {
    if (m == 0 || n == 0) return;
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, A, lda, B, ldb, beta, C, ldc);
}

void set_blas_threads(int n) {
    if (n < 1) n = 1;
    openblas_set_num_threads(n);
}

} // namespace icegraph
