#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace pcgkit::ag {

/// C = alpha * op(A) * op(B) + beta * C for row-major buffers.
/// op(A) is M x K, op(B) is K x N, C is M x N.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
             K = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> cm(c, M, N);
  if (beta == T(0)) {
    cm.setZero();
  } else if (beta != T(1)) {
    cm *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    cm.noalias() += alpha * (CMap(a, M, K) * CMap(b, K, N));
  } else if (!trans_a && trans_b) {
    cm.noalias() += alpha * (CMap(a, M, K) * CMap(b, N, K).transpose());
  } else if (trans_a && !trans_b) {
    cm.noalias() += alpha * (CMap(a, K, M).transpose() * CMap(b, K, N));
  } else {
    cm.noalias() += alpha * (CMap(a, K, M).transpose() * CMap(b, N, K).transpose());
  }
}

}  // namespace pcgkit::ag
