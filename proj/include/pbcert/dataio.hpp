#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace pbcert {

/// Raised for malformed input files (IDX, CSV).
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct UnlabeledSample {
  Eigen::VectorXd features;
  std::optional<int> label;
};

/// A dataset of latent samples stored column-wise. Labels are either present
/// for every sample or for none.
struct SampleSet {
  Eigen::MatrixXd features;  // dim x N
  std::vector<int> labels;   // empty when unlabeled

  Eigen::Index size() const { return features.cols(); }
  Eigen::Index dim() const { return features.rows(); }
  bool labeled() const { return !labels.empty(); }
  UnlabeledSample at(Eigen::Index i) const;
  int num_classes() const;
};

struct NormalizationStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct IdxData {
  SampleSet samples;
  int rows = 0;
  int cols = 0;
  NormalizationStats stats;  // over all pixels of this split
};

/// Reads an IDX image file (magic 0x00000803) and optional label file
/// (magic 0x00000801). Pixels are scaled to [0, 1].
IdxData load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path = std::nullopt);

void write_idx_images(const std::filesystem::path& path,
                      const std::vector<std::uint8_t>& pixels, int count, int rows, int cols);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// In-place (x - mean) / stddev.
void normalize(Eigen::MatrixXd& features, const NormalizationStats& stats);

/// Embeddings CSV: header `id,label,e0,...,e{d-1}`; empty label for unlabeled rows.
SampleSet read_embeddings_csv(const std::filesystem::path& path);
void write_embeddings_csv(const std::filesystem::path& path, const SampleSet& samples);

struct PositivePair {
  Eigen::VectorXd view_a;
  Eigen::VectorXd view_b;
  std::size_t source_index = 0;
  std::optional<int> label;
};

/// n positive pairs stored column-wise, with provenance to the latent sample
/// that generated each pair.
struct PairDataset {
  Eigen::MatrixXd views_a;                // dim x n
  Eigen::MatrixXd views_b;                // dim x n
  std::vector<std::size_t> source_index;  // index of the generating latent sample
  std::vector<int> labels;                // empty when unlabeled

  Eigen::Index size() const { return views_a.cols(); }
  Eigen::Index dim() const { return views_a.rows(); }
  bool labeled() const { return !labels.empty(); }
  PositivePair pair(Eigen::Index i) const;
  PairDataset subset(const std::vector<std::size_t>& indices) const;
};

/// Pixel-level augmentation: circular shift, random mask, additive noise.
struct AugmentationConfig {
  int shift_max = 2;
  double mask_prob = 0.1;
  double noise_std = 0.1;
  int image_width = 0;  // 0: infer a square image, else 1-D shift

  bool is_identity() const { return shift_max == 0 && mask_prob == 0.0 && noise_std == 0.0; }
  void validate() const;
};

/// Isotropic Gaussian mixture with Gaussian augmentation noise; a fully known
/// data distribution for oracle checks.
struct SyntheticModel {
  int num_classes = 2;
  Eigen::MatrixXd class_means;  // dim x num_classes
  double class_std = 0.5;
  double augmentation_std = 0.1;
  std::uint64_t seed = 0;

  Eigen::Index dim() const { return class_means.rows(); }
};

SyntheticModel make_synthetic_model(int num_classes, int dim, double radius, double class_std,
                                    double augmentation_std, std::uint64_t seed);

/// Draws latent samples (class uniform, then Gaussian around its mean).
SampleSet draw_latent(const SyntheticModel& model, Eigen::Index n, std::uint64_t seed);

/// One augmented view per latent column.
Eigen::MatrixXd augment(const SyntheticModel& model, const Eigen::MatrixXd& latent,
                        std::uint64_t seed);

/// Pairs from the synthetic model. Latent samples are fresh, so source_index
/// equals the pair index; `latent` (if non-null) receives them.
PairDataset sample_pairs(const SyntheticModel& model, Eigen::Index n, std::uint64_t seed,
                         SampleSet* latent = nullptr);

/// Pairs from a finite dataset: sources drawn uniformly with replacement, both
/// views drawn independently from the augmentation distribution.
PairDataset sample_pairs(const SampleSet& dataset, Eigen::Index n,
                         const AugmentationConfig& config, std::uint64_t seed);

/// A uniformly random partition of pair indices into equal batches of size m.
struct BatchPlan {
  Eigen::Index batch_size = 0;
  std::vector<std::vector<std::size_t>> batches;

  Eigen::Index num_batches() const { return static_cast<Eigen::Index>(batches.size()); }
  Eigen::Index retained() const { return batch_size * num_batches(); }
};

/// The trailing n mod m pairs (after shuffling) are dropped.
BatchPlan make_batches(Eigen::Index num_pairs, Eigen::Index m, std::uint64_t seed);

inline BatchPlan make_batches(const PairDataset& pairs, Eigen::Index m, std::uint64_t seed)
{
  return make_batches(pairs.size(), m, seed);
}

/// Counter-based seed derivation (splitmix64).
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t counter);

// Shortest decimal form that parses back to the same double.
std::string csv_number(double v);

}  // namespace pbcert
