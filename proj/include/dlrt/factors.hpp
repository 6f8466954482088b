#pragma once
//
// Low-rank layer factors W = U S V^T and the factor-level operations of
// one integrator step: basis update (optionally augmented), Galerkin
// initial value for the core, and rank truncation.
//

#include "dlrt/linalg.hpp"

#include <cstdint>
#include <variant>

namespace dlrt {

enum class Activation { kRelu, kSoftmax, kIdentity };

/// One low-rank weight: u (n_out x r), s (r x r), v (n_in x r), plus bias.
/// u and v have orthonormal columns; s is generally not diagonal.
struct LowRankFactors {
  Matrix u;
  Matrix s;
  Matrix v;
  Vector bias;
  int r_min = 2;
  int r_max = 0;
  Activation activation = Activation::kRelu;

  [[nodiscard]] int rank() const { return static_cast<int>(s.rows()); }
  [[nodiscard]] int n_out() const { return static_cast<int>(u.rows()); }
  [[nodiscard]] int n_in() const { return static_cast<int>(v.rows()); }
};

struct AdaptiveTruncation {
  double tau = 0.1;
};

struct FixedTruncation {
  int rank = 2;
};

using TruncationPolicy = std::variant<AdaptiveTruncation, FixedTruncation>;

[[nodiscard]] inline bool is_adaptive(const TruncationPolicy& policy) {
  return std::holds_alternative<AdaptiveTruncation>(policy);
}

/// Throws std::invalid_argument unless shapes, rank bounds and
/// orthonormality (within `tol`) hold.
void check_factors(const LowRankFactors& f, double tol = 1e-10);

[[nodiscard]] Matrix effective_weight(const LowRankFactors& f);

/// Seeded random factors: u, v from QR of Gaussian matrices, s Gaussian
/// scaled by sqrt(2 / n_in), zero bias.
[[nodiscard]] LowRankFactors random_factors(int n_out, int n_in, int rank, std::uint64_t seed,
                                            Activation activation = Activation::kRelu);

/// Best rank-`rank` factors of a dense matrix via its SVD.
[[nodiscard]] LowRankFactors factors_from_dense(const Matrix& w, const Vector& bias, int rank,
                                                Activation activation);

struct BasisUpdate {
  Matrix u;  // new left basis
  Matrix v;  // new right basis
  Matrix m;  // u_new^T u_old
  Matrix n;  // v_new^T v_old
};

/// New orthonormal bases from the integrated K and L factors. With
/// `augment`, the bases span [k_new | u_old] and [l_new | v_old]; their
/// width is capped at min(2r, n_out, n_in) so that the core stays square,
/// and when the cap bites the old basis is kept whole.
[[nodiscard]] BasisUpdate basis_update(const LowRankFactors& layer, const Matrix& k_new, const Matrix& l_new,
                                       bool augment);

/// Core in the new bases: m * s * n^T.
[[nodiscard]] Matrix s_init(const Matrix& s, const Matrix& m, const Matrix& n);

struct Truncated {
  Matrix u;
  Matrix s;  // diagonal
  Matrix v;
  int rank = 0;
  double threshold = 0.0;  // tau * |Sigma|_F (adaptive) or the discarded tail (fixed)
};

/// Smallest r with (sum_{i>r} sigma_i^2)^{1/2} <= threshold.
[[nodiscard]] int truncation_rank(const Vector& sigma, double threshold);

/// Compress the core s_new (expressed in bases u, v) by SVD truncation.
/// The chosen rank is clamped into [r_min, r_max].
[[nodiscard]] Truncated truncate(const Matrix& s_new, const Matrix& u, const Matrix& v,
                                 const TruncationPolicy& policy, int r_min, int r_max);

}  // namespace dlrt
