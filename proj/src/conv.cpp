#include "dlrt/conv.hpp"

#include <stdexcept>
#include <string>

namespace dlrt {

void ConvShape::validate() const {
  if (filters < 1 || channels < 1 || kernel_h < 1 || kernel_w < 1 || stride < 1 || padding < 0 || in_h < 1 ||
      in_w < 1) {
    throw std::invalid_argument("conv shape: sizes must be positive");
  }
  const int span_h = in_h + 2 * padding - kernel_h;
  const int span_w = in_w + 2 * padding - kernel_w;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw std::invalid_argument("conv shape: kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                                " with stride " + std::to_string(stride) + " and padding " + std::to_string(padding) +
                                " does not tile a " + std::to_string(in_h) + "x" + std::to_string(in_w) + " input");
  }
}

void MaxPool::validate() const {
  if (channels < 1 || in_h < 2 || in_w < 2 || in_h % 2 != 0 || in_w % 2 != 0) {
    throw std::invalid_argument("max pool: 2x2 window must divide the " + std::to_string(in_h) + "x" +
                                std::to_string(in_w) + " input");
  }
}

Matrix unfold(const Matrix& images, const ConvShape& shape) {
  shape.validate();
  if (images.rows() != shape.in_features()) {
    throw std::invalid_argument("unfold: input has " + std::to_string(images.rows()) + " features, expected " +
                                std::to_string(shape.in_features()));
  }
  const int oh = shape.out_h();
  const int ow = shape.out_w();
  const Eigen::Index locations = shape.locations();
  const Eigen::Index batch = images.cols();
  Matrix patches = Matrix::Zero(shape.patch_size(), locations * batch);
  for (Eigen::Index n = 0; n < batch; ++n) {
    const double* img = images.col(n).data();
    for (int c = 0; c < shape.channels; ++c) {
      for (int j = 0; j < shape.kernel_h; ++j) {
        for (int k = 0; k < shape.kernel_w; ++k) {
          const Eigen::Index row = (Eigen::Index{c} * shape.kernel_h + j) * shape.kernel_w + k;
          for (int u = 0; u < oh; ++u) {
            const int y = u * shape.stride + j - shape.padding;
            if (y < 0 || y >= shape.in_h) {
              continue;
            }
            for (int v = 0; v < ow; ++v) {
              const int x = v * shape.stride + k - shape.padding;
              if (x < 0 || x >= shape.in_w) {
                continue;
              }
              patches(row, n * locations + u * ow + v) = img[(c * shape.in_h + y) * shape.in_w + x];
            }
          }
        }
      }
    }
  }
  return patches;
}

Matrix fold(const Matrix& patches, const ConvShape& shape, Eigen::Index batch) {
  shape.validate();
  const int oh = shape.out_h();
  const int ow = shape.out_w();
  const Eigen::Index locations = shape.locations();
  if (patches.rows() != shape.patch_size() || patches.cols() != locations * batch) {
    throw std::invalid_argument("fold: patch matrix does not match the convolution shape");
  }
  Matrix images = Matrix::Zero(shape.in_features(), batch);
  for (Eigen::Index n = 0; n < batch; ++n) {
    double* img = images.col(n).data();
    for (int c = 0; c < shape.channels; ++c) {
      for (int j = 0; j < shape.kernel_h; ++j) {
        for (int k = 0; k < shape.kernel_w; ++k) {
          const Eigen::Index row = (Eigen::Index{c} * shape.kernel_h + j) * shape.kernel_w + k;
          for (int u = 0; u < oh; ++u) {
            const int y = u * shape.stride + j - shape.padding;
            if (y < 0 || y >= shape.in_h) {
              continue;
            }
            for (int v = 0; v < ow; ++v) {
              const int x = v * shape.stride + k - shape.padding;
              if (x < 0 || x >= shape.in_w) {
                continue;
              }
              img[(c * shape.in_h + y) * shape.in_w + x] += patches(row, n * locations + u * ow + v);
            }
          }
        }
      }
    }
  }
  return images;
}

Matrix locations_to_features(const Matrix& per_location, int locations) {
  const Eigen::Index filters = per_location.rows();
  if (locations < 1 || per_location.cols() % locations != 0) {
    throw std::invalid_argument("locations_to_features: column count is not a multiple of the location count");
  }
  const Eigen::Index batch = per_location.cols() / locations;
  Matrix out(filters * locations, batch);
  for (Eigen::Index n = 0; n < batch; ++n) {
    Eigen::Map<Matrix>(out.col(n).data(), locations, filters) =
        per_location.middleCols(n * locations, locations).transpose();
  }
  return out;
}

Matrix features_to_locations(const Matrix& features, int filters, int locations) {
  if (features.rows() != Eigen::Index{filters} * locations) {
    throw std::invalid_argument("features_to_locations: feature count does not match filters x locations");
  }
  const Eigen::Index batch = features.cols();
  Matrix out(filters, locations * batch);
  for (Eigen::Index n = 0; n < batch; ++n) {
    out.middleCols(n * locations, locations) =
        Eigen::Map<const Matrix>(features.col(n).data(), locations, filters).transpose();
  }
  return out;
}

Matrix conv_forward(const Matrix& images, const LowRankConv& layer) {
  const auto& f = layer.factors;
  if (f.n_out() != layer.shape.filters || f.n_in() != layer.shape.patch_size()) {
    throw std::invalid_argument("conv_forward: factors do not match the kernel shape");
  }
  const Matrix patches = unfold(images, layer.shape);
  Matrix projected = f.v.transpose() * patches;
  projected = f.s * projected;
  Matrix per_location = f.u * projected;
  per_location.colwise() += f.bias;
  return locations_to_features(per_location, layer.shape.locations());
}

PoolResult max_pool_forward(const Matrix& images, const MaxPool& pool) {
  pool.validate();
  if (images.rows() != pool.in_features()) {
    throw std::invalid_argument("max_pool_forward: input has " + std::to_string(images.rows()) +
                                " features, expected " + std::to_string(pool.in_features()));
  }
  const int oh = pool.out_h();
  const int ow = pool.out_w();
  PoolResult out;
  out.out.resize(pool.out_features(), images.cols());
  out.argmax.resize(static_cast<std::size_t>(out.out.size()));
  for (Eigen::Index n = 0; n < images.cols(); ++n) {
    const double* img = images.col(n).data();
    for (int c = 0; c < pool.channels; ++c) {
      for (int u = 0; u < oh; ++u) {
        for (int v = 0; v < ow; ++v) {
          Eigen::Index best = (Eigen::Index{c} * pool.in_h + 2 * u) * pool.in_w + 2 * v;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const Eigen::Index idx = (Eigen::Index{c} * pool.in_h + 2 * u + dy) * pool.in_w + 2 * v + dx;
              if (img[idx] > img[best]) {
                best = idx;
              }
            }
          }
          const Eigen::Index o = (Eigen::Index{c} * oh + u) * ow + v;
          out.out(o, n) = img[best];
          out.argmax[static_cast<std::size_t>(n * out.out.rows() + o)] = best;
        }
      }
    }
  }
  return out;
}

Matrix max_pool_backward(const Matrix& upstream, const std::vector<Eigen::Index>& argmax, const MaxPool& pool) {
  if (upstream.rows() != pool.out_features() || static_cast<std::size_t>(upstream.size()) != argmax.size()) {
    throw std::invalid_argument("max_pool_backward: stale pooling record");
  }
  Matrix grad = Matrix::Zero(pool.in_features(), upstream.cols());
  for (Eigen::Index n = 0; n < upstream.cols(); ++n) {
    for (Eigen::Index o = 0; o < upstream.rows(); ++o) {
      grad(argmax[static_cast<std::size_t>(n * upstream.rows() + o)], n) += upstream(o, n);
    }
  }
  return grad;
}

}  // namespace dlrt
