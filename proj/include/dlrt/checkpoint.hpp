#pragma once
//
// Checkpoints: a human-readable manifest.json next to one binary blob per
// tensor (little-endian float64, row-major, crc32 in the manifest).
//

#include "dlrt/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace dlrt {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inference-only layers: low-rank layers keep the product U*S next to V,
/// so a forward pass is two thin products.
struct DeployLowRank {
  Matrix us;  // n_out x r
  Matrix v;   // n_in x r
  Vector bias;
  Activation activation = Activation::kRelu;
};

struct DeployConv {
  ConvShape shape;
  DeployLowRank factors;
};

using DeployLayer = std::variant<DenseLayer, DeployLowRank, ConvLayer, DeployConv, MaxPool>;

struct DeployModel {
  std::vector<DeployLayer> layers;
};

[[nodiscard]] DeployModel to_deploy(const Network& net);
[[nodiscard]] Matrix deploy_forward(const DeployModel& model, const Matrix& inputs);
[[nodiscard]] std::vector<int> layer_ranks(const DeployModel& model);

struct CheckpointInfo {
  std::string architecture;
  std::uint64_t seed = 0;
  int epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();
};

void save_checkpoint(const Network& net, const CheckpointInfo& info, const std::filesystem::path& dir);
void save_deploy(const DeployModel& model, const CheckpointInfo& info, const std::filesystem::path& dir);

struct LoadedCheckpoint {
  std::string variant;  // "train" or "deploy"
  CheckpointInfo info;
  std::variant<Network, DeployModel> model;
};

/// Verifies shapes and checksums of every blob.
[[nodiscard]] LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);
[[nodiscard]] Network load_network(const std::filesystem::path& dir);

/// Raw blob helpers, exposed for tests.
void write_blob(const Matrix& m, const std::filesystem::path& path);
[[nodiscard]] Matrix read_blob(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);
[[nodiscard]] std::uint32_t blob_checksum(const Matrix& m);

}  // namespace dlrt
