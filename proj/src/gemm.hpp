#pragma once

#include <Eigen/Core>

namespace srlab::detail {

// Row-major C = op(A) * op(B) (+ C when accumulate). A is m x k after op, B is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate = false) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Eigen::Map<Mat> out(c, m, n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      out.noalias() += lhs * rhs;
    } else {
      out.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) run(CMap(a, m, k), CMap(b, k, n));
  if (!trans_a && trans_b) run(CMap(a, m, k), CMap(b, n, k).transpose());
  if (trans_a && !trans_b) run(CMap(a, k, m).transpose(), CMap(b, k, n));
  if (trans_a && trans_b) run(CMap(a, k, m).transpose(), CMap(b, n, k).transpose());
}

}  // namespace srlab::detail
