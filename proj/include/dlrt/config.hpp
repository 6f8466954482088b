#pragma once
//
// Run configuration. Serialized as JSON; see README for the schema.
//

#include "dlrt/data.hpp"
#include "dlrt/model.hpp"
#include "dlrt/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dlrt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  NetworkSpec architecture = preset("mlp500");
  TrainMode mode = TrainMode::kAdaptive;
  std::optional<double> tau;     // required when adaptive
  std::vector<int> fixed_ranks;  // required when fixed
  IntegratorKind integrator = Adam{};
  double lr_decay = 1.0;  // multiplies the learning rate after every epoch
  int epochs = 250;
  int batch_size = 256;
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;
  std::size_t train_size = 50'000;
  std::size_t val_size = 10'000;
  std::size_t test_size = 10'000;
  std::filesystem::path out_dir = "run";
  int log_every = 0;            // progress line every N steps, 0 disables
  int freeze_after = 0;         // adaptive only: switch to fixed ranks after this epoch, 0 disables
  int max_steps_per_epoch = 0;  // 0 runs every batch

  [[nodiscard]] SplitSpec split_spec() const { return {train_size, val_size, test_size, seed}; }
};

/// Throws ConfigError describing the first violated constraint.
void validate(const RunConfig& config);

/// The checks of validate() that do not involve the architecture.
void validate_training(const RunConfig& config);

[[nodiscard]] nlohmann::json to_json(const RunConfig& config);
[[nodiscard]] RunConfig config_from_json(const nlohmann::json& j);
[[nodiscard]] RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

[[nodiscard]] nlohmann::json to_json(const NetworkSpec& spec);
[[nodiscard]] NetworkSpec spec_from_json(const nlohmann::json& j);

[[nodiscard]] std::string to_string(Activation act);
[[nodiscard]] Activation activation_from_string(const std::string& name);
[[nodiscard]] std::string to_string(TrainMode mode);

}  // namespace dlrt
