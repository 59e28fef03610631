#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pbcert/dataio.hpp"
#include "pbcert/losses.hpp"
#include "pbcert/model.hpp"

namespace pbcert {

struct BoundInputs {
  double empirical_loss = 0.0;
  double kl_qp = 0.0;
  Eigen::Index n = 0;
  Eigen::Index m = 2;
  double tau = 1.0;
  double delta = 0.04;
  Variant variant = Variant::simplified;
  std::optional<int> num_classes;

  void validate() const;
};

/// Which B to use in the extended kl bound: the theorem's
/// 1/tau + log(m e^{1/tau}) + eps, or the corollary's 1/tau + log(m e^{1/tau} + eps).
enum class BForm { theorem, corollary };

double mcdiarmid_constant(double tau, Eigen::Index m, Variant variant);
/// Hoeffding slack on the negative-similarity sum at confidence (delta/2)^{1/alpha}.
double hoeffding_epsilon(double tau, Eigen::Index m, double delta, double alpha, Variant variant);
double thm1_b(double tau, Eigen::Index m, double epsilon, Variant variant, BForm form = BForm::theorem);
double gamma_constant(Eigen::Index m, double delta, double alpha);

struct Constants {
  double alpha = 0.0;
  double c_mcdiarmid = 0.0;
  double epsilon = 0.0;
  double b_thm1 = 0.0;
  double b_loss = 0.0;
  double gamma = 0.0;
};

Constants compute_constants(double tau, Eigen::Index m, double delta, double alpha,
                            Variant variant, BForm form = BForm::theorem);

struct GridPoint {
  double alpha = 0.0;
  double value = 0.0;
  bool clamped = false;
};

struct GridBound {
  double value = 0.0;
  double alpha_star = 0.0;
  bool vacuous = false;  // the kl^{-1} argument exceeded 1 at the minimiser
  std::vector<GridPoint> per_alpha;
};

const std::vector<double>& default_alpha_grid();

double bound_thm2_mcdiarmid(const BoundInputs& in);
double bound_thm4_zero_one(const BoundInputs& in);
/// Shared additive form L + c sqrt((KL + log(2n/delta)) / (2(n-1))).
double mcdiarmid_form(double empirical, double c, double kl, Eigen::Index n, double delta);

/// modified_losses[k] is the epsilon-modified empirical loss for alpha_grid[k].
GridBound bound_thm1_extended_kl(const BoundInputs& in, const std::vector<double>& alpha_grid,
                                 const std::vector<double>& modified_losses,
                                 BForm form = BForm::theorem);
/// Uses in.empirical_loss at every grid point.
GridBound bound_thm1_extended_kl(const BoundInputs& in, const std::vector<double>& alpha_grid,
                                 BForm form = BForm::theorem);

GridBound bound_thm5_zero_one_kl(const BoundInputs& in, const std::vector<double>& alpha_grid);

enum class Baseline { classic_iid, kl_iid, catoni_iid, f_divergence };
std::string to_string(Baseline b);

/// Baselines over n/m i.i.d. batches, in loss units. zero_one selects the [0, 1]
/// range; otherwise the variant's B_l. lambda pins Catoni's lambda.
double bound_baseline(const BoundInputs& in, Baseline kind, bool zero_one = false,
                      std::optional<double> lambda = std::nullopt);

enum class DownstreamBranch { untempered, tempered };

struct DownstreamBound {
  double bound = 0.0;
  DownstreamBranch branch = DownstreamBranch::untempered;
  double beta = 0.0;        // reference value sigma/tau + L + Delta
  double delta_term = 0.0;  // Delta
  double alpha_term = 0.0;  // alpha
};

DownstreamBound bound_downstream(const BoundInputs& in, double contrastive_loss, double sigma);

enum class LossKind { simclr, simclr_eps, zero_one };

/// Posterior-averaged empirical losses on a frozen batch plan.
struct McLosses {
  double simclr = 0.0;
  double zero_one = 0.0;
  std::vector<double> modified;   // per alpha of the grid
  std::vector<double> epsilons;   // base epsilon per alpha
  double simclr_sample_std = 0.0; // spread of the per-sample loss
  int p_mc = 0;
};

McLosses mc_losses(const GaussianPosterior& posterior, const PairDataset& pairs,
                   const BatchPlan& plan, const LossConfig& loss, double delta,
                   const std::vector<double>& alpha_grid, int p_mc, std::uint64_t seed);

/// Mean over p_mc weight samples of one loss kind (epsilon from config for simclr_eps).
double mc_empirical_loss(const GaussianPosterior& posterior, const PairDataset& pairs,
                         const BatchPlan& plan, LossKind kind, const LossConfig& config, int p_mc,
                         std::uint64_t seed);

struct CertifyConfig {
  double tau = 1.0;
  Variant variant = Variant::simplified;
  Eigen::Index m = 250;
  double delta = 0.04;
  std::vector<double> alpha_grid = default_alpha_grid();
  int p_mc = 100;
  std::uint64_t seed = 0;
  BForm b_form = BForm::theorem;
  bool mc_tail_correction = false;
  double mc_delta = 0.01;  // confidence spent on the tail correction when enabled

  void validate() const;
};

struct BoundEntry {
  std::string name;
  double value = 0.0;
  bool vacuous = false;
  bool zero_one = false;
  std::optional<double> alpha_star;
  std::map<std::string, double> constants;
};

struct CertificateReport {
  BoundInputs inputs;  // empirical_loss holds the contrastive loss
  double empirical_zero_one = 0.0;
  std::vector<double> alpha_grid;
  std::vector<double> modified_losses;
  std::vector<BoundEntry> bounds;
  int p_mc = 0;
  std::uint64_t seed = 0;
  std::string b_form;
  bool mc_tail_correction = false;

  const BoundEntry& get(const std::string& name) const;
};

/// All bounds from already-estimated losses.
CertificateReport certify_from_losses(const McLosses& losses, double kl, Eigen::Index n,
                                      const CertifyConfig& config);

/// Monte-Carlo losses on the certificate pairs (frozen partition), then every bound.
CertificateReport certify(const GaussianPosterior& posterior, const GaussianPosterior& prior,
                          const PairDataset& certificate_pairs, const CertifyConfig& config);

std::string report_to_json(const CertificateReport& report);
std::string report_to_csv(const CertificateReport& report);

}  // namespace pbcert
