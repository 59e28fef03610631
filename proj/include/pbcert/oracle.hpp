#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pbcert/certificates.hpp"
#include "pbcert/dataio.hpp"
#include "pbcert/losses.hpp"
#include "pbcert/model.hpp"
#include "pbcert/training.hpp"

namespace pbcert {

/// One line of the oracle results file.
struct OracleRecord {
  std::string check;
  long trials = 0;
  double max_observed = 0.0;
  double budget = 0.0;
  bool pass = false;
};

std::string records_to_json(const std::vector<OracleRecord>& records);

struct BoundedDifferenceResult {
  double max_observed = 0.0;
  double budget = 0.0;
  int violations = 0;
  int trials = 0;
  bool pass() const { return violations == 0; }
};

/// Replaces one latent sample (both of its views) at a time and measures the
/// change of the full empirical loss on a frozen partition. The budget is C/n
/// for the contrastive loss and 2/n for the zero-one risk.
BoundedDifferenceResult check_bounded_difference(const NetworkArchitecture& arch,
                                                 const Eigen::VectorXd& weights,
                                                 const SyntheticModel& synthetic, Eigen::Index n,
                                                 const LossConfig& loss, Eigen::Index m,
                                                 bool zero_one, int trials, std::uint64_t seed);

struct HoeffdingResult {
  double violation_rate = 0.0;
  double epsilon = 0.0;
  double threshold = 0.0;  // delta + 3 sqrt(delta (1 - delta) / trials)
  int trials = 0;
  bool pass() const { return violation_rate <= threshold; }
};

/// Conditioned on an anchor x, checks P(S(x, X) - E[S | x] >= eps) <= delta for
/// the m - 1 same-view negatives. eps_scale multiplies the Hoeffding epsilon.
HoeffdingResult check_hoeffding_negatives(const NetworkArchitecture& arch,
                                          const Eigen::VectorXd& weights,
                                          const SyntheticModel& synthetic, double tau,
                                          Eigen::Index m, double delta, int trials,
                                          std::uint64_t seed, double eps_scale = 1.0,
                                          int anchors = 10, int mean_draws = 100000);

struct PopulationEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  long batches = 0;
};

/// Mean loss over fresh i.i.d. batches, each with a fresh weight sample.
PopulationEstimate estimate_population_loss(const GaussianPosterior& posterior,
                                            const SyntheticModel& synthetic, LossKind kind,
                                            const LossConfig& loss, Eigen::Index m,
                                            long fresh_batches, std::uint64_t seed);

struct ValidityConfig {
  SyntheticModel synthetic;
  NetworkArchitecture arch;
  TrainConfig train;        // posterior training; prior uses the same with eta 1e-6
  int prior_epochs = 0;     // 0: same as train.epochs
  CertifyConfig certify;
  Eigen::Index n_total = 10000;
  long population_batches = 2000;
  double sigma_multiplier = 3.0;
  /// Mutation switch for sensitivity checks: scales the McDiarmid constant.
  double c_scale = 1.0;
};

struct ValidityRun {
  std::uint64_t seed = 0;
  double population_loss = 0.0;
  double population_loss_se = 0.0;
  double population_zero_one = 0.0;
  double population_zero_one_se = 0.0;
  double thm1 = 0.0;
  double thm2 = 0.0;
  double thm4 = 0.0;
  double thm5 = 0.0;
  double kl = 0.0;
  bool violated = false;
};

struct ValidityResult {
  int violations = 0;
  std::vector<ValidityRun> runs;
};

/// Full pipeline per run: fresh pairs, prior on the first part, posterior on all
/// pairs, certificates on the held-out part, compared against fresh-batch
/// population estimates.
ValidityResult check_certificate_validity(const ValidityConfig& config, int runs,
                                          std::uint64_t seed);

struct DownstreamGapResult {
  double lhs = 0.0;  // cross-entropy of the trained head
  double rhs = 0.0;  // reported bound
  DownstreamBound bound;
  double sigma = 0.0;
  double contrastive_loss = 0.0;
  bool head_converged = false;
  bool pass() const { return lhs <= rhs + 1e-6; }
};

/// Features-level form: unit features with labels and a given contrastive loss.
DownstreamGapResult check_downstream_gap(const Eigen::MatrixXd& features,
                                         const std::vector<int>& labels, int num_classes,
                                         double contrastive_loss, double tau, Eigen::Index m,
                                         Variant variant = Variant::simplified);

/// Network-level form on labelled single views from the synthetic model; the
/// contrastive loss is estimated on fresh batches.
DownstreamGapResult check_downstream_gap(const NetworkArchitecture& arch,
                                         const Eigen::VectorXd& weights,
                                         const SyntheticModel& synthetic, double tau,
                                         Eigen::Index m, Eigen::Index n_labeled,
                                         long population_batches, std::uint64_t seed,
                                         bool use_projection = false);

}  // namespace pbcert
