#include "dlrt/data.hpp"

#include "dlrt/random.hpp"

#include <array>
#include <fstream>
#include <numeric>
#include <string>

namespace dlrt {
namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(path.string() + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(const std::vector<unsigned char>& bytes, std::uint32_t magic, const std::filesystem::path& path) {
  const std::uint32_t found = read_be32(bytes, 0, path);
  if (found != magic) {
    throw FormatError(path.string() + ": bad magic number at offset 0 (expected " + std::to_string(magic) +
                      ", found " + std::to_string(found) + ")");
  }
}

}  // namespace

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  Batch batch;
  batch.inputs.resize(images.rows(), static_cast<Eigen::Index>(indices.size()));
  batch.labels.resize(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    batch.inputs.col(static_cast<Eigen::Index>(j)) = images.col(static_cast<Eigen::Index>(indices[j])).cast<double>();
    batch.labels[j] = labels[indices[j]];
  }
  return batch;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.height = height;
  out.width = width;
  out.images.resize(images.rows(), static_cast<Eigen::Index>(indices.size()));
  out.labels.resize(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    out.images.col(static_cast<Eigen::Index>(j)) = images.col(static_cast<Eigen::Index>(indices[j]));
    out.labels[j] = labels[indices[j]];
  }
  return out;
}

Batch Dataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return gather(idx);
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);
  expect_magic(image_bytes, 0x00000803, images_path);
  expect_magic(label_bytes, 0x00000801, labels_path);

  const std::uint32_t count = read_be32(image_bytes, 4, images_path);
  const std::uint32_t rows = read_be32(image_bytes, 8, images_path);
  const std::uint32_t cols = read_be32(image_bytes, 12, images_path);
  const std::uint32_t label_count = read_be32(label_bytes, 4, labels_path);
  if (count != label_count) {
    throw FormatError(labels_path.string() + ": label count at offset 4 is " + std::to_string(label_count) +
                      " but " + images_path.string() + " holds " + std::to_string(count) + " images");
  }
  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t image_end = 16 + std::size_t{count} * pixels;
  if (image_bytes.size() < image_end) {
    throw FormatError(images_path.string() + ": truncated pixel data, file ends at offset " +
                      std::to_string(image_bytes.size()) + " but " + std::to_string(image_end) + " bytes are needed");
  }
  if (label_bytes.size() < 8 + std::size_t{count}) {
    throw FormatError(labels_path.string() + ": truncated label data, file ends at offset " +
                      std::to_string(label_bytes.size()));
  }

  Dataset ds;
  ds.height = static_cast<int>(rows);
  ds.width = static_cast<int>(cols);
  ds.images.resize(static_cast<Eigen::Index>(pixels), count);
  ds.labels.resize(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    const unsigned char* src = image_bytes.data() + 16 + std::size_t{n} * pixels;
    for (std::size_t p = 0; p < pixels; ++p) {
      ds.images(static_cast<Eigen::Index>(p), n) = static_cast<float>(src[p]) / 255.0f;
    }
    const int label = label_bytes[8 + n];
    if (label > 9) {
      throw FormatError(labels_path.string() + ": label " + std::to_string(label) + " at offset " +
                        std::to_string(8 + n) + " is outside [0, 10)");
    }
    ds.labels[n] = label;
  }
  return ds;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.images.rows() != b.images.rows()) {
    throw std::invalid_argument("concat: image sizes differ");
  }
  Dataset out;
  out.height = a.height;
  out.width = a.width;
  out.images.resize(a.images.rows(), a.images.cols() + b.images.cols());
  out.images << a.images, b.images;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

Dataset load_mnist_pool(const std::filesystem::path& dir) {
  return concat(load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
                load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"));
}

Splits split(const Dataset& pool, const SplitSpec& spec) {
  const std::size_t needed = spec.train + spec.val + spec.test;
  if (pool.size() < needed) {
    throw std::invalid_argument("split: pool has " + std::to_string(pool.size()) + " samples, " +
                                std::to_string(needed) + " requested");
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(spec.seed);
  shuffle(order, rng);
  const auto first = order.begin();
  Splits out;
  out.train = pool.subset(std::span(first, spec.train));
  out.val = pool.subset(std::span(first + static_cast<std::ptrdiff_t>(spec.train), spec.val));
  out.test = pool.subset(std::span(first + static_cast<std::ptrdiff_t>(spec.train + spec.val), spec.test));
  return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (batch_size < 1) {
    throw std::invalid_argument("batches: batch size must be at least 1");
  }
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(derive_seed(seed, epoch + 1));
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < dataset_size; start += batch_size) {
    const std::size_t end = std::min(dataset_size, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace dlrt
