#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "pbcert/numerics.hpp"

namespace pbcert {

/// Fully connected ReLU network. layer_widths runs input -> hidden... -> d;
/// the last layer is linear and its output is projected onto the unit sphere.
/// projection_dim k > 0 enables the (I_k, 0) head.
struct NetworkArchitecture {
  std::vector<int> layer_widths;
  int projection_dim = 0;

  int input_dim() const { return layer_widths.front(); }
  int backbone_dim() const { return layer_widths.back(); }
  int num_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
  int output_dim(bool use_projection) const
  {
    return use_projection && projection_dim > 0 ? projection_dim : backbone_dim();
  }
  void validate() const;
  bool operator==(const NetworkArchitecture& other) const = default;
};

Eigen::Index count_parameters(const NetworkArchitecture& arch);

/// Mean-field Gaussian over the flat parameter vector; std = softplus(rho).
/// Flat layout per layer: W (fan_out x fan_in, column-major) followed by b.
struct GaussianPosterior {
  NetworkArchitecture arch;
  Eigen::VectorXd mu;
  Eigen::VectorXd rho;

  Eigen::VectorXd stddev() const { return softplus(rho); }
  DiagonalGaussian as_gaussian() const;
  void validate() const;
};

struct WeightSample {
  Eigen::VectorXd weights;
  std::uint64_t source_seed = 0;
};

/// w = mu + softplus(rho) * eps with eps ~ N(0, I).
WeightSample sample_weights(const GaussianPosterior& posterior, std::uint64_t seed);

/// Standard normal noise of the given length, as used by sample_weights.
Eigen::VectorXd standard_normal(Eigen::Index n, std::uint64_t seed);

/// The posterior mean as a weight vector (zero-noise sample).
WeightSample mean_weights(const GaussianPosterior& posterior);

/// Intermediate values of a batched forward pass, kept for backward().
struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // h_0 = input ... h_L = raw output
  Eigen::VectorXd norms;                     // norm of the (sliced) raw output per column
  Eigen::MatrixXd output;                    // unit columns
  int out_dim = 0;
};

Eigen::VectorXd forward(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                        const Eigen::VectorXd& input, bool use_projection);

inline Eigen::VectorXd forward(const NetworkArchitecture& arch, const WeightSample& w,
                               const Eigen::VectorXd& input, bool use_projection)
{
  return forward(arch, w.weights, input, use_projection);
}

/// Columns of `inputs` mapped to unit columns.
Eigen::MatrixXd forward_batch(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                              const Eigen::MatrixXd& inputs, bool use_projection,
                              ForwardCache* cache = nullptr);

/// Gradient of a scalar objective with respect to the flat weights, given its
/// gradient with respect to the unit-norm outputs.
Eigen::VectorXd backward(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                         const ForwardCache& cache, const Eigen::MatrixXd& grad_output);

/// Same, accumulating into `grad`.
void backward_accumulate(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                         const ForwardCache& cache, const Eigen::MatrixXd& grad_output,
                         Eigen::Ref<Eigen::VectorXd> grad);

/// Data-free prior: means from a centered Gaussian with std 1/sqrt(fan_in)
/// truncated at two standard deviations, zero biases, std sigma0 everywhere.
GaussianPosterior init_prior(const NetworkArchitecture& arch, double sigma0, std::uint64_t seed);

void save_checkpoint(const std::filesystem::path& path, const GaussianPosterior& posterior);
GaussianPosterior load_checkpoint(const std::filesystem::path& path);

}  // namespace pbcert
