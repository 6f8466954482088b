#include "dlrt/factors.hpp"

#include "dlrt/random.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dlrt {

void check_factors(const LowRankFactors& f, double tol) {
  const auto r = f.s.rows();
  if (f.s.cols() != r || f.u.cols() != r || f.v.cols() != r) {
    throw std::invalid_argument("low-rank factors: inconsistent rank (u has " + std::to_string(f.u.cols()) +
                                " columns, s is " + std::to_string(f.s.rows()) + "x" + std::to_string(f.s.cols()) +
                                ", v has " + std::to_string(f.v.cols()) + " columns)");
  }
  if (f.bias.size() != f.u.rows()) {
    throw std::invalid_argument("low-rank factors: bias length does not match n_out");
  }
  if (f.rank() < f.r_min || f.rank() > f.r_max) {
    throw std::invalid_argument("low-rank factors: rank " + std::to_string(f.rank()) + " outside [" +
                                std::to_string(f.r_min) + ", " + std::to_string(f.r_max) + "]");
  }
  const Matrix eye = Matrix::Identity(r, r);
  if ((f.u.transpose() * f.u - eye).norm() > tol || (f.v.transpose() * f.v - eye).norm() > tol) {
    throw std::invalid_argument("low-rank factors: bases are not orthonormal");
  }
}

Matrix effective_weight(const LowRankFactors& f) { return f.u * (f.s * f.v.transpose()); }

LowRankFactors random_factors(int n_out, int n_in, int rank, std::uint64_t seed, Activation activation) {
  if (n_out < 1 || n_in < 1) {
    throw std::invalid_argument("random_factors: widths must be positive");
  }
  const int r_max = std::min(n_out, n_in);
  if (rank < 1 || rank > r_max) {
    throw std::invalid_argument("random_factors: rank " + std::to_string(rank) + " outside [1, " +
                                std::to_string(r_max) + "]");
  }
  SplitMix64 rng(seed);
  LowRankFactors f;
  f.u = qr_reduced(gaussian_matrix(n_out, rank, rng)).q;
  f.v = qr_reduced(gaussian_matrix(n_in, rank, rng)).q;
  f.s = gaussian_matrix(rank, rank, rng) * std::sqrt(2.0 / n_in);
  f.bias = Vector::Zero(n_out);
  f.r_max = r_max;
  f.r_min = std::min(2, r_max);
  f.activation = activation;
  return f;
}

LowRankFactors factors_from_dense(const Matrix& w, const Vector& bias, int rank, Activation activation) {
  const int n_out = static_cast<int>(w.rows());
  const int n_in = static_cast<int>(w.cols());
  const int r_max = std::min(n_out, n_in);
  if (rank < 1 || rank > r_max) {
    throw std::invalid_argument("factors_from_dense: rank " + std::to_string(rank) + " exceeds min(n_out, n_in) = " +
                                std::to_string(r_max));
  }
  // Thin SVD of the dense weight; this happens once per layer, so the
  // bidiagonalising solver from Eigen is fine here.
  Eigen::BDCSVD<Matrix> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  LowRankFactors f;
  f.u = svd.matrixU().leftCols(rank);
  f.v = svd.matrixV().leftCols(rank);
  f.s = svd.singularValues().head(rank).asDiagonal();
  f.bias = bias;
  f.r_max = r_max;
  f.r_min = std::min({2, r_max, rank});
  f.activation = activation;
  return f;
}

BasisUpdate basis_update(const LowRankFactors& layer, const Matrix& k_new, const Matrix& l_new, bool augment) {
  const auto r = layer.rank();
  if (k_new.rows() != layer.u.rows() || k_new.cols() != r || l_new.rows() != layer.v.rows() || l_new.cols() != r) {
    throw std::invalid_argument("basis_update: k_new must be n_out x r and l_new n_in x r");
  }
  BasisUpdate out;
  if (!augment) {
    out.u = qr_reduced(k_new).q;
    out.v = qr_reduced(l_new).q;
  } else {
    const Eigen::Index width = std::min<Eigen::Index>({2 * Eigen::Index{r}, layer.u.rows(), layer.v.rows()});
    auto augmented = [&](const Matrix& fresh, const Matrix& old) {
      Matrix a(fresh.rows(), width);
      if (width == 2 * r) {
        a << fresh, old;
      } else {
        a << old, fresh.leftCols(width - r);
      }
      return qr_reduced(a).q;
    };
    out.u = augmented(k_new, layer.u);
    out.v = augmented(l_new, layer.v);
  }
  out.m = out.u.transpose() * layer.u;
  out.n = out.v.transpose() * layer.v;
  return out;
}

Matrix s_init(const Matrix& s, const Matrix& m, const Matrix& n) {
  if (m.cols() != s.rows() || n.cols() != s.cols()) {
    throw std::invalid_argument("s_init: projections do not conform with the core");
  }
  return m * s * n.transpose();
}

int truncation_rank(const Vector& sigma, double threshold) {
  const auto n = static_cast<int>(sigma.size());
  double tail_sq = 0.0;
  const double limit = threshold * threshold;
  int r = n;
  // Walk from the smallest singular value while the discarded tail fits.
  while (r > 0) {
    const double next = tail_sq + sigma(r - 1) * sigma(r - 1);
    if (next > limit) {
      break;
    }
    tail_sq = next;
    --r;
  }
  return r;
}

Truncated truncate(const Matrix& s_new, const Matrix& u, const Matrix& v, const TruncationPolicy& policy, int r_min,
                   int r_max) {
  if (s_new.rows() != s_new.cols() || u.cols() != s_new.rows() || v.cols() != s_new.cols()) {
    throw std::invalid_argument("truncate: core must be square and conform with the bases");
  }
  const auto svd = svd_small(s_new);
  const int size = static_cast<int>(s_new.rows());
  Truncated out;
  int r = size;
  if (const auto* adaptive = std::get_if<AdaptiveTruncation>(&policy)) {
    out.threshold = adaptive->tau * svd.sigma.norm();
    r = truncation_rank(svd.sigma, out.threshold);
    r = std::clamp(r, r_min, r_max);
  } else {
    r = std::get<FixedTruncation>(policy).rank;
  }
  r = std::min(r, size);
  if (r < 1) {
    r = 1;
  }
  out.rank = r;
  out.s = svd.sigma.head(r).asDiagonal();
  out.u = u * svd.p.leftCols(r);
  out.v = v * svd.q.leftCols(r);
  if (!is_adaptive(policy)) {
    out.threshold = svd.sigma.tail(size - r).norm();
  }
  return out;
}

}  // namespace dlrt
