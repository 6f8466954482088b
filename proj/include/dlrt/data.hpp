#pragma once
//
// MNIST ingestion (IDX containers), seeded splitting and batching.
//

#include "dlrt/network.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace dlrt {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Images are stored one sample per column (784 x N for MNIST), pixel
/// bytes scaled by 1/255. Single precision keeps the pooled 70k set small.
struct Dataset {
  Eigen::MatrixXf images;
  std::vector<int> labels;
  int height = 0;
  int width = 0;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] Batch gather(std::span<const std::size_t> indices) const;
  [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const;
  [[nodiscard]] Batch all() const;
};

/// Read an IDX3 image file (magic 0x00000803) and IDX1 label file
/// (magic 0x00000801). Throws FormatError naming the failing offset.
[[nodiscard]] Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Canonical MNIST train and test files from `dir`, pooled (70,000 samples).
[[nodiscard]] Dataset load_mnist_pool(const std::filesystem::path& dir);

/// Concatenate two datasets with equal image geometry.
[[nodiscard]] Dataset concat(const Dataset& a, const Dataset& b);

struct SplitSpec {
  std::size_t train = 50'000;
  std::size_t val = 10'000;
  std::size_t test = 10'000;
  std::uint64_t seed = 0;
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Disjoint partition drawn from a SplitMix64 Fisher-Yates shuffle of the pool.
[[nodiscard]] Splits split(const Dataset& pool, const SplitSpec& spec);

/// Per-epoch batch order: a shuffle keyed on (seed, epoch), cut into
/// batches of `batch_size` with a final short batch.
[[nodiscard]] std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size,
                                                            std::uint64_t seed, std::uint64_t epoch);

}  // namespace dlrt
