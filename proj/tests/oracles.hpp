#pragma once
// Independent reference implementations used as test oracles. They share
// no code with the library beyond the plain data types: products are
// triple loops, convolution is the direct quadruple sum, and the forward
// pass is evaluated one sample at a time.

#include "dlrt/dlrt.hpp"
#include "dlrt/random.hpp"

#include <cmath>
#include <random>
#include <variant>
#include <vector>

namespace oracle {

using dlrt::Matrix;
using dlrt::Vector;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) {
        acc += a(i, k) * b(k, j);
      }
      c(i, j) = acc;
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      t(j, i) = a(i, j);
    }
  }
  return t;
}

inline double frob(const Matrix& a) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    s += a.data()[i] * a.data()[i];
  }
  return std::sqrt(s);
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
inline Vector symmetric_eigenvalues(Matrix a) {
  const Eigen::Index n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        off += a(p, q) * a(p, q);
      }
    }
    if (off < 1e-30) {
      break;
    }
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) {
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    ev[static_cast<std::size_t>(i)] = a(i, i);
  }
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return Eigen::Map<Vector>(ev.data(), n);
}

/// Singular values via the eigenvalues of a^T a.
inline Vector singular_values(const Matrix& a) {
  Vector ev = symmetric_eigenvalues(matmul(transpose(a), a));
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return ev;
}

/// Direct cross-correlation; images are one sample per column with
/// feature index c*H*W + y*W + x, output f*OH*OW + u*OW + v.
inline Matrix direct_conv(const Matrix& images, const Matrix& kernel, const Vector& bias, const dlrt::ConvShape& s) {
  const int oh = s.out_h();
  const int ow = s.out_w();
  Matrix out(static_cast<Eigen::Index>(s.filters) * oh * ow, images.cols());
  for (Eigen::Index n = 0; n < images.cols(); ++n) {
    for (int f = 0; f < s.filters; ++f) {
      for (int u = 0; u < oh; ++u) {
        for (int v = 0; v < ow; ++v) {
          double acc = bias(f);
          for (int c = 0; c < s.channels; ++c) {
            for (int j = 0; j < s.kernel_h; ++j) {
              for (int k = 0; k < s.kernel_w; ++k) {
                const int y = u * s.stride + j - s.padding;
                const int x = v * s.stride + k - s.padding;
                if (y < 0 || y >= s.in_h || x < 0 || x >= s.in_w) {
                  continue;
                }
                acc += kernel(f, (c * s.kernel_h + j) * s.kernel_w + k) * images((c * s.in_h + y) * s.in_w + x, n);
              }
            }
          }
          out((f * oh + u) * ow + v, n) = acc;
        }
      }
    }
  }
  return out;
}

inline Matrix direct_pool(const Matrix& images, const dlrt::MaxPool& p) {
  const int oh = p.out_h();
  const int ow = p.out_w();
  Matrix out(static_cast<Eigen::Index>(p.channels) * oh * ow, images.cols());
  for (Eigen::Index n = 0; n < images.cols(); ++n) {
    for (int c = 0; c < p.channels; ++c) {
      for (int u = 0; u < oh; ++u) {
        for (int v = 0; v < ow; ++v) {
          double best = -INFINITY;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              best = std::max(best, images((c * p.in_h + 2 * u + dy) * p.in_w + 2 * v + dx, n));
            }
          }
          out((c * oh + u) * ow + v, n) = best;
        }
      }
    }
  }
  return out;
}

/// A layer reduced to what the oracle needs: the effective weight.
struct Layer {
  enum Kind { kFc, kConv, kPool } kind = kFc;
  Matrix w;
  Vector b;
  dlrt::Activation act = dlrt::Activation::kRelu;
  dlrt::ConvShape shape;
  dlrt::MaxPool pool;
};

inline std::vector<Layer> layers_of(const dlrt::Network& net) {
  std::vector<Layer> out;
  for (const auto& layer : net.layers) {
    Layer o;
    if (const auto* d = std::get_if<dlrt::DenseLayer>(&layer)) {
      o = {Layer::kFc, d->weight, d->bias, d->activation, {}, {}};
    } else if (const auto* f = std::get_if<dlrt::LowRankFactors>(&layer)) {
      o = {Layer::kFc, matmul(matmul(f->u, f->s), transpose(f->v)), f->bias, f->activation, {}, {}};
    } else if (const auto* c = std::get_if<dlrt::ConvLayer>(&layer)) {
      o = {Layer::kConv, c->weight, c->bias, c->activation, c->shape, {}};
    } else if (const auto* lc = std::get_if<dlrt::LowRankConv>(&layer)) {
      const auto& f = lc->factors;
      o = {Layer::kConv, matmul(matmul(f.u, f.s), transpose(f.v)), f.bias, f.activation, lc->shape, {}};
    } else {
      o.kind = Layer::kPool;
      o.pool = std::get<dlrt::MaxPool>(layer);
      o.act = dlrt::Activation::kIdentity;
    }
    out.push_back(o);
  }
  return out;
}

/// Logits one sample at a time.
inline Matrix logits(const std::vector<Layer>& layers, const Matrix& x) {
  Matrix out;
  for (Eigen::Index n = 0; n < x.cols(); ++n) {
    Matrix z = x.col(n);
    for (const Layer& l : layers) {
      if (l.kind == Layer::kFc) {
        Matrix a = matmul(l.w, z);
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          a(i, 0) += l.b(i);
        }
        z = a;
      } else if (l.kind == Layer::kConv) {
        z = direct_conv(z, l.w, l.b, l.shape);
      } else {
        z = direct_pool(z, l.pool);
      }
      if (l.act == dlrt::Activation::kRelu) {
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
          z(i, 0) = z(i, 0) > 0.0 ? z(i, 0) : 0.0;
        }
      }
    }
    if (n == 0) {
      out.resize(z.rows(), x.cols());
    }
    out.col(n) = z.col(0);
  }
  return out;
}

/// Mean cross-entropy of softmax(logits), computed naively.
inline double loss(const Matrix& lg, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index n = 0; n < lg.cols(); ++n) {
    double mx = lg(0, n);
    for (Eigen::Index i = 1; i < lg.rows(); ++i) {
      mx = std::max(mx, lg(i, n));
    }
    double z = 0.0;
    for (Eigen::Index i = 0; i < lg.rows(); ++i) {
      z += std::exp(lg(i, n) - mx);
    }
    total += -(lg(labels[static_cast<std::size_t>(n)], n) - mx - std::log(z));
  }
  return total / static_cast<double>(lg.cols());
}

inline double loss(const std::vector<Layer>& layers, const dlrt::Batch& b) { return loss(logits(layers, b.inputs), b.labels); }

/// Central finite difference of f at every entry of p (p is restored).
/// The step is small so that ReLU kinks are rarely straddled; rounding
/// error stays near 1e-10 for O(1) losses.
template <class F>
Matrix finite_difference(Matrix& p, F&& f, double h = 1e-6) {
  Matrix g(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double saved = p.data()[i];
    p.data()[i] = saved + h;
    const double up = f();
    p.data()[i] = saved - h;
    const double down = f();
    p.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Finite-difference gradient of the batch loss with respect to the weight
/// parameter of layer i: W itself for full layers, otherwise K, L or S of
/// the factorisation with the remaining factors frozen.
inline Matrix fd_weight_gradient(const dlrt::Network& net, const dlrt::Batch& batch, std::size_t i,
                                 dlrt::GradientTarget target) {
  auto layers = layers_of(net);
  const dlrt::LowRankFactors* f = dlrt::factors_of(net.layers[i]);
  if (f == nullptr || target == dlrt::GradientTarget::kWeight) {
    Matrix w = layers[i].w;
    return finite_difference(w, [&] {
      layers[i].w = w;
      return loss(layers, batch);
    });
  }
  if (target == dlrt::GradientTarget::kK) {
    Matrix k = matmul(f->u, f->s);
    return finite_difference(k, [&] {
      layers[i].w = matmul(k, transpose(f->v));
      return loss(layers, batch);
    });
  }
  if (target == dlrt::GradientTarget::kL) {
    Matrix l = matmul(f->v, transpose(f->s));
    return finite_difference(l, [&] {
      layers[i].w = matmul(f->u, transpose(l));
      return loss(layers, batch);
    });
  }
  Matrix s = f->s;
  return finite_difference(s, [&] {
    layers[i].w = matmul(matmul(f->u, s), transpose(f->v));
    return loss(layers, batch);
  });
}

inline Matrix fd_bias_gradient(const dlrt::Network& net, const dlrt::Batch& batch, std::size_t i) {
  auto layers = layers_of(net);
  Matrix b = layers[i].b;
  return finite_difference(b, [&] {
    layers[i].b = b.col(0);
    return loss(layers, batch);
  });
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, dlrt::SplitMix64& rng) {
  return dlrt::gaussian_matrix(rows, cols, rng);
}

inline int uniform_int(dlrt::SplitMix64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

/// Random small MLP: `layers` weight layers, hidden widths in [lo, hi],
/// hidden layers low-rank with rank <= max_rank, dense softmax head.
inline dlrt::Network random_mlp(dlrt::SplitMix64& rng, int layers, int lo, int hi, int max_rank, bool low_rank_head) {
  dlrt::Network net;
  int n_in = uniform_int(rng, lo, hi);
  for (int k = 0; k < layers; ++k) {
    const bool head = k + 1 == layers;
    const int n_out = head ? uniform_int(rng, 2, hi) : uniform_int(rng, lo, hi);
    const auto act = head ? dlrt::Activation::kSoftmax : dlrt::Activation::kRelu;
    if (!head || low_rank_head) {
      const int r = uniform_int(rng, 1, std::min({max_rank, n_in, n_out}));
      auto f = dlrt::random_factors(n_out, n_in, r, rng(), act);
      f.s = random_matrix(r, r, rng);  // full core, not just the initial scaling
      f.bias = random_matrix(n_out, 1, rng).col(0) * 0.1;
      f.r_min = 1;
      net.layers.emplace_back(std::move(f));
    } else {
      net.layers.emplace_back(dlrt::DenseLayer{random_matrix(n_out, n_in, rng) * (1.0 / std::sqrt(n_in)),
                                               random_matrix(n_out, 1, rng).col(0) * 0.1, act});
    }
    n_in = n_out;
  }
  return net;
}

inline dlrt::Batch random_batch(dlrt::SplitMix64& rng, int n_in, int classes, int size) {
  dlrt::Batch b;
  b.inputs = random_matrix(n_in, size, rng);
  for (int i = 0; i < size; ++i) {
    b.labels.push_back(uniform_int(rng, 0, classes - 1));
  }
  return b;
}

}  // namespace oracle
