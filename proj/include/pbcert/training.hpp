#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "pbcert/dataio.hpp"
#include "pbcert/losses.hpp"
#include "pbcert/model.hpp"

namespace pbcert {

class TrainingDiverged : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 0.5;
  double momentum = 0.9;
  int epochs = 30;
  double kl_penalty_eta = 1.0;  // posterior: unpenalised objective; learn_prior uses 1e-6
  double delta = 0.04;
  double prior_fraction = 0.8;
  double sigma0 = 0.05;
  Eigen::Index batch_size = 250;
  std::uint64_t seed = 0;
  LossConfig loss;

  void validate() const;
};

struct TrainReport {
  std::vector<double> objective_trace;  // mean step objective per epoch
  double final_kl = 0.0;
  double final_empirical_loss = 0.0;    // mean sampled batch loss over the last epoch
};

/// f = L/B_l + sqrt((eta KL + log(sqrt(n)/delta)) / (2n)).
double pbb_value(double empirical_loss, double kl, Eigen::Index n, Eigen::Index m,
                 const TrainConfig& config);

/// The objective over every batch of `plan` with one weight sample drawn from
/// `seed`; n is the retained pair count.
double pbb_objective(const GaussianPosterior& posterior, const GaussianPosterior& prior,
                     const PairDataset& pairs, const BatchPlan& plan, const TrainConfig& config,
                     std::uint64_t seed);

struct ObjectiveGradient {
  double value = 0.0;
  double loss = 0.0;
  double kl = 0.0;
  Eigen::VectorXd grad_mu;
  Eigen::VectorXd grad_rho;
};

/// Exact gradient of the single-batch objective at the noise pinned by `seed`.
/// n is the pair count entering the complexity term (0: the batch size).
ObjectiveGradient gradient(const GaussianPosterior& posterior, const GaussianPosterior& prior,
                           const PairDataset& batch, const TrainConfig& config,
                           std::uint64_t seed, Eigen::Index n = 0);

/// dKL(Q||P)/dmu and dKL(Q||P)/drho in closed form.
void kl_gradient(const GaussianPosterior& q, const GaussianPosterior& p, Eigen::VectorXd& d_mu,
                 Eigen::VectorXd& d_rho);

struct TrainResult {
  GaussianPosterior posterior;
  TrainReport report;
};

/// SGD with momentum on (mu, rho); batches are re-partitioned every epoch.
TrainResult train(const GaussianPosterior& init, const GaussianPosterior& prior,
                  const PairDataset& pairs, const TrainConfig& config);

enum class PriorMode { informed, random };

/// Random mode returns the data-free initialisation; informed mode trains it on
/// `pairs_subset` with KL penalty 1e-6 against that initialisation.
GaussianPosterior learn_prior(const NetworkArchitecture& arch, const PairDataset& pairs_subset,
                              const TrainConfig& config, PriorMode mode,
                              TrainReport* report = nullptr);

/// Contiguous split of n pairs: [0, n_prior) trains the prior, the rest certifies.
struct PairSplit {
  Eigen::Index n_prior = 0;
  Eigen::Index n_total = 0;

  std::vector<std::size_t> prior_indices() const;
  std::vector<std::size_t> certificate_indices() const;
};

PairSplit split_pairs(Eigen::Index n_total, double prior_fraction);

struct HeadFit {
  Eigen::MatrixXd head;  // C x d
  double loss = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
};

/// Full-batch gradient descent on the mean cross-entropy.
HeadFit fit_head_gd(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                    int num_classes, int steps = 2000, double learning_rate = 2.0);

/// Mini-batch Adam, used for linear evaluation.
HeadFit fit_head_adam(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                      int num_classes, int epochs, double learning_rate, Eigen::Index batch_size,
                      std::uint64_t seed);

}  // namespace pbcert
