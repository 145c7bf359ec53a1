#pragma once

#include <Eigen/Core>

namespace foley::detail {

// Row-major GEMM kernels on raw buffers. Eigen does the heavy lifting; the
// autodiff layer above owns shapes, gradients, and validation.

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C = A[m,k] * B[k,n], overwriting C.
template <typename T>
inline void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c) {
    MatMap<T>(c, m, n).noalias() = CMatMap<T>(a, m, k) * CMatMap<T>(b, k, n);
}

// C += A[m,k] * B[k,n]
template <typename T>
inline void gemm_nn_acc(int m, int n, int k, const T* a, const T* b, T* c) {
    MatMap<T>(c, m, n).noalias() += CMatMap<T>(a, m, k) * CMatMap<T>(b, k, n);
}

// C = A[m,k] * B[n,k]^T
template <typename T>
inline void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c) {
    MatMap<T>(c, m, n).noalias() = CMatMap<T>(a, m, k) * CMatMap<T>(b, n, k).transpose();
}

template <typename T>
inline void gemm_nt_acc(int m, int n, int k, const T* a, const T* b, T* c) {
    MatMap<T>(c, m, n).noalias() += CMatMap<T>(a, m, k) * CMatMap<T>(b, n, k).transpose();
}

// C = A[k,m]^T * B[k,n]
template <typename T>
inline void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c) {
    MatMap<T>(c, m, n).noalias() = CMatMap<T>(a, k, m).transpose() * CMatMap<T>(b, k, n);
}

template <typename T>
inline void gemm_tn_acc(int m, int n, int k, const T* a, const T* b, T* c) {
    MatMap<T>(c, m, n).noalias() += CMatMap<T>(a, k, m).transpose() * CMatMap<T>(b, k, n);
}

}  // namespace foley::detail
