#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pbcert/config.hpp"
#include "pbcert/oracle.hpp"

namespace pbcert {

/// Tracks files written by one pipeline run so a failure can remove them.
class ArtifactWriter {
public:
  explicit ArtifactWriter(std::filesystem::path dir);
  const std::filesystem::path& dir() const { return dir_; }
  /// Writes via a temporary file and rename.
  void write(const std::string& name, const std::string& content);
  void rollback();
  const std::vector<std::filesystem::path>& written() const { return written_; }

private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> written_;
};

SyntheticModel synthetic_model(const PipelineConfig& cfg);

struct MnistData {
  IdxData train;
  IdxData test;
};

/// Reads {train,t10k}-{images-idx3,labels-idx1}-ubyte from the directory and
/// normalises both splits with the training statistics.
MnistData load_mnist(const std::filesystem::path& dir);

/// The training pairs of a configuration (deterministic in cfg.seed).
PairDataset build_pairs(const PipelineConfig& cfg);

/// Held-out pairs (MNIST test images or fresh synthetic pairs).
PairDataset build_test_pairs(const PipelineConfig& cfg, Eigen::Index n);

/// FNV-1a of the bytes, as 16 hex digits.
std::string fingerprint(const std::string& bytes);
std::string fingerprint(const PairDataset& pairs);

void run_gen_synthetic(const PipelineConfig& cfg, ArtifactWriter& out);
void run_train_prior(const PipelineConfig& cfg, ArtifactWriter& out);
void run_train_posterior(const PipelineConfig& cfg, ArtifactWriter& out);
CertificateReport run_certify(const PipelineConfig& cfg, ArtifactWriter& out);
void run_downstream(const PipelineConfig& cfg, ArtifactWriter& out);
void run_verify(const PipelineConfig& cfg, ArtifactWriter& out);
void run_report(const std::vector<std::filesystem::path>& inputs, ArtifactWriter& out);

/// Mean simclr loss on held-out pairs over p_mc weight samples.
double heldout_loss(const PipelineConfig& cfg, const GaussianPosterior& posterior,
                    const PairDataset& test_pairs, int p_mc, double* zero_one = nullptr);

std::string manifest_json(const std::string& subcommand, const std::string& config_hash,
                          const PipelineConfig& cfg, const std::vector<std::string>& argv);

const char* version();

}  // namespace pbcert
