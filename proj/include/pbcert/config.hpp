#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbcert/certificates.hpp"
#include "pbcert/dataio.hpp"
#include "pbcert/model.hpp"
#include "pbcert/training.hpp"

namespace pbcert {

/// Schema violation; `field` is the dotted path of the offending key.
class ConfigError : public std::runtime_error {
public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field))
  {
  }
  const std::string& field() const { return field_; }

private:
  std::string field_;
};

struct DataSection {
  std::string source = "synthetic";  // synthetic | mnist
  Eigen::Index n_pairs = 10000;
  // synthetic
  int num_classes = 3;
  int dim = 10;
  double radius = 3.0;
  double class_std = 0.5;
  double augmentation_std = 0.1;
  std::uint64_t model_seed = 1;
  // mnist
  std::filesystem::path mnist_dir = "data/mnist";
  AugmentationConfig augmentation;
};

struct DownstreamSection {
  Eigen::Index n_train = 2000;  // synthetic labelled samples
  Eigen::Index n_test = 2000;
  int adam_epochs = 20;
  double adam_learning_rate = 0.01;
  Eigen::Index adam_batch = 256;
  int test_p_mc = 10;
};

struct VerifySection {
  int bounded_difference_trials = 100;
  int hoeffding_trials = 2000;
  int validity_runs = 2;
  long population_batches = 500;
};

struct GridSection {
  std::vector<double> learning_rates{0.1, 0.5, 1.0, 1.5};
  std::vector<double> momenta{0.8, 0.85, 0.9, 0.95};
  int p_mc = 10;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  DataSection data;
  NetworkArchitecture arch;
  TrainConfig train;
  int prior_epochs = 0;  // 0: train.epochs
  PriorMode prior_mode = PriorMode::informed;
  CertifyConfig certify;
  DownstreamSection downstream;
  VerifySection verify;
  GridSection grid;
  bool use_grid = false;
  std::vector<std::filesystem::path> report_inputs;
};

/// Parses and validates a TOML document; throws ConfigError.
PipelineConfig parse_config(const std::string& toml_text, const std::string& source_name = "config");
PipelineConfig load_config(const std::filesystem::path& path);

/// Keeps the loss, certify and train views of tau / m / variant / seed in sync.
void apply_overrides(PipelineConfig& cfg, std::optional<std::uint64_t> seed,
                     std::optional<double> tau, std::optional<Eigen::Index> m,
                     std::optional<std::string> variant, std::optional<std::filesystem::path> out,
                     bool grid);

}  // namespace pbcert
