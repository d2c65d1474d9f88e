// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Core>

namespace dnvoc::ad {

// C (m x n) = alpha * op(A) * op(B) + beta * C, all row-major and contiguous.
// op(A) is m x k, op(B) is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* A,
          const T* B, T beta, T* C) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Eigen::Map<Mat> c(C, m, n);
  if (beta == T(0))
    c.setZero();
  else if (beta != T(1))
    c *= beta;
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b)
    c.noalias() += alpha * (CMap(A, m, k) * CMap(B, k, n));
  else if (trans_a && !trans_b)
    c.noalias() += alpha * (CMap(A, k, m).transpose() * CMap(B, k, n));
  else if (!trans_a && trans_b)
    c.noalias() += alpha * (CMap(A, m, k) * CMap(B, n, k).transpose());
  else
    c.noalias() += alpha * (CMap(A, k, m).transpose() * CMap(B, n, k).transpose());
}

}  // namespace dnvoc::ad
