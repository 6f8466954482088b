#pragma once
//
// Dense linear algebra used by the low-rank integrator: checked products,
// reduced Householder QR with a deterministic sign convention, and a
// one-sided Jacobi SVD for the small core matrices.
//

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlrt {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

template <typename Scalar>
struct QrResult {
  MatrixX<Scalar> q;
  MatrixX<Scalar> r;
};

template <typename Scalar>
struct SvdResult {
  MatrixX<Scalar> p;
  VectorX<Scalar> sigma;
  MatrixX<Scalar> q;
};

template <typename DerivedA, typename DerivedB>
auto matmul(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " times " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
  MatrixX<Scalar> out = a * b;
  return out;
}

template <typename Derived>
typename Derived::RealScalar frobenius_norm(const Eigen::MatrixBase<Derived>& a) {
  return a.norm();
}

/// Reduced Householder QR of a tall matrix (rows >= cols).
///
/// The diagonal of r is made nonnegative. When the trailing part of a
/// column has norm below 1e-14 * |a|_F no reflector is applied, so the
/// corresponding column of q is the image of a canonical basis vector
/// under the previous reflectors; q keeps orthonormal columns for
/// rank-deficient input.
template <typename Derived>
QrResult<typename Derived::Scalar> qr_reduced(const Eigen::MatrixBase<Derived>& a_in) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = a_in.rows();
  const Eigen::Index n = a_in.cols();
  if (m < n) {
    throw std::invalid_argument("qr_reduced: need rows >= cols, got " + std::to_string(m) + "x" +
                                std::to_string(n));
  }
  MatrixX<Scalar> a = a_in;
  const Scalar tol = Scalar(1e-14) * a.norm();

  // Householder vectors are stored below the diagonal, betas separately.
  VectorX<Scalar> beta = VectorX<Scalar>::Zero(n);
  VectorX<Scalar> work(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index len = m - j;
    auto x = a.col(j).tail(len);
    const Scalar xnorm = x.norm();
    if (xnorm <= tol || xnorm == Scalar(0)) {
      x.tail(len - 1).setZero();
      continue;
    }
    const Scalar alpha = x(0) >= Scalar(0) ? -xnorm : xnorm;
    // v = x - alpha e1, normalised so that v(0) = 1.
    const Scalar v0 = x(0) - alpha;
    x.tail(len - 1) /= v0;
    beta(j) = -v0 / alpha;
    x(0) = alpha;
    if (j + 1 < n) {
      auto trailing = a.block(j, j + 1, len, n - j - 1);
      auto w = work.head(n - j - 1);
      w = trailing.row(0).transpose();
      w.noalias() += trailing.bottomRows(len - 1).transpose() * a.col(j).tail(len - 1);
      w *= beta(j);
      trailing.row(0) -= w.transpose();
      trailing.bottomRows(len - 1).noalias() -= a.col(j).tail(len - 1) * w.transpose();
    }
  }

  QrResult<Scalar> out;
  out.r = a.topRows(n).template triangularView<Eigen::Upper>();
  out.q = MatrixX<Scalar>::Identity(m, n);
  for (Eigen::Index j = n - 1; j >= 0; --j) {
    if (beta(j) == Scalar(0)) {
      continue;
    }
    const Eigen::Index len = m - j;
    auto block = out.q.block(j, j, len, n - j);
    auto w = work.head(n - j);
    w = block.row(0).transpose();
    w.noalias() += block.bottomRows(len - 1).transpose() * a.col(j).tail(len - 1);
    w *= beta(j);
    block.row(0) -= w.transpose();
    block.bottomRows(len - 1).noalias() -= a.col(j).tail(len - 1) * w.transpose();
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (out.r(j, j) < Scalar(0)) {
      out.r.row(j) *= Scalar(-1);
      out.q.col(j) *= Scalar(-1);
    }
  }
  return out;
}

/// Orthonormal basis for the range of `a`, with at most min(rows, cols)
/// columns. Wide input keeps its leading `rows` columns, which yields an
/// orthogonal matrix of the full space.
template <typename Derived>
MatrixX<typename Derived::Scalar> orthonormal_basis(const Eigen::MatrixBase<Derived>& a) {
  if (a.cols() <= a.rows()) {
    return qr_reduced(a).q;
  }
  return qr_reduced(a.leftCols(a.rows())).q;
}

/// SVD of a small square matrix via one-sided (Hestenes) Jacobi.
///
/// sigma is sorted descending; each column of p has its first nonzero
/// entry nonnegative. Columns of p belonging to (numerically) zero
/// singular values are completed to an orthonormal basis.
template <typename Derived>
SvdResult<typename Derived::Scalar> svd_small(const Eigen::MatrixBase<Derived>& s, int max_sweeps = 60,
                                              typename Derived::Scalar tol = typename Derived::Scalar(1e-14)) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  using std::sqrt;
  if (s.rows() != s.cols()) {
    throw std::invalid_argument("svd_small: matrix must be square, got " + std::to_string(s.rows()) + "x" +
                                std::to_string(s.cols()));
  }
  const Eigen::Index n = s.rows();
  MatrixX<Scalar> work = s;
  MatrixX<Scalar> q = MatrixX<Scalar>::Identity(n, n);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const Scalar alpha = work.col(i).squaredNorm();
        const Scalar beta = work.col(j).squaredNorm();
        const Scalar gamma = work.col(i).dot(work.col(j));
        if (gamma == Scalar(0) || abs(gamma) <= tol * sqrt(alpha * beta)) {
          continue;
        }
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) / (abs(zeta) + sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / sqrt(Scalar(1) + t * t);
        const Scalar sn = c * t;
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar wi = work(k, i);
          const Scalar wj = work(k, j);
          work(k, i) = c * wi - sn * wj;
          work(k, j) = sn * wi + c * wj;
          const Scalar qi = q(k, i);
          const Scalar qj = q(k, j);
          q(k, i) = c * qi - sn * qj;
          q(k, j) = sn * qi + c * qj;
        }
      }
    }
    if (!rotated) {
      break;
    }
  }

  VectorX<Scalar> norms(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    norms(k) = work.col(k).norm();
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return norms(x) > norms(y); });

  SvdResult<Scalar> out;
  out.sigma.resize(n);
  out.p = MatrixX<Scalar>::Zero(n, n);
  out.q.resize(n, n);
  const Scalar sigma_max = n > 0 ? norms(order.front()) : Scalar(0);
  const Scalar zero_cut = Scalar(n) * std::numeric_limits<Scalar>::epsilon() * sigma_max;
  Eigen::Index nonzero = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.sigma(k) = norms(src);
    out.q.col(k) = q.col(src);
    if (norms(src) > zero_cut && norms(src) > Scalar(0)) {
      out.p.col(k) = work.col(src) / norms(src);
      ++nonzero;
    }
  }
  if (nonzero < n) {
    // Leading columns are orthonormal, so QR leaves them in place and
    // the zero trailing columns receive an orthonormal completion.
    MatrixX<Scalar> completed = qr_reduced(out.p).q;
    out.p.rightCols(n - nonzero) = completed.rightCols(n - nonzero);
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index row = 0; row < n; ++row) {
      if (out.p(row, k) != Scalar(0)) {
        if (out.p(row, k) < Scalar(0)) {
          out.p.col(k) *= Scalar(-1);
          out.q.col(k) *= Scalar(-1);
        }
        break;
      }
    }
  }
  return out;
}

}  // namespace dlrt
