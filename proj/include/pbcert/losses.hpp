#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "pbcert/dataio.hpp"
#include "pbcert/model.hpp"

namespace pbcert {

/// simplified: anchor x_i contrasts against {x_j}, anchor x_i+ against {x_j+}.
/// original: both anchors contrast against {x_j, x_j+}, j != i.
enum class Variant { simplified, original };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

struct LossConfig {
  double tau = 1.0;
  Variant variant = Variant::simplified;
  /// Base epsilon of the modified loss; the denominator gains 2*epsilon
  /// (simplified) or 4*epsilon (original).
  double epsilon = 0.0;

  void validate() const;
  double denominator_offset() const
  {
    return (variant == Variant::simplified ? 2.0 : 4.0) * epsilon;
  }
};

/// Range of the unmodified loss: 2/tau + log m, or 2/tau + log(2m - 1).
double loss_range(double tau, Eigen::Index m, Variant variant);

struct LossStats {
  double value = 0.0;
  std::vector<double> per_batch_values;
  double bound_Bl = 0.0;
};

/// Unit embeddings of both views, one column per pair.
struct PairEmbeddings {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;

  Eigen::Index size() const { return a.cols(); }
};

PairEmbeddings embed_pairs(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                           const PairDataset& pairs, bool use_projection = true);

/// Mean symmetrised contrastive loss of one batch (columns of a and b). When
/// grad_a / grad_b are non-null they receive d(loss)/d(embeddings).
double simclr_batch(const Eigen::Ref<const Eigen::MatrixXd>& a,
                    const Eigen::Ref<const Eigen::MatrixXd>& b, const LossConfig& config,
                    Eigen::MatrixXd* grad_a = nullptr, Eigen::MatrixXd* grad_b = nullptr);

/// Batch contrastive zero-one risk: anchors x_i, negatives {x_j, x_j+}, j != i,
/// strict comparison.
double zero_one_batch(const Eigen::Ref<const Eigen::MatrixXd>& a,
                      const Eigen::Ref<const Eigen::MatrixXd>& b);

/// Gathers the columns of one batch.
PairEmbeddings gather(const PairEmbeddings& emb, const std::vector<std::size_t>& batch);

LossStats simclr_loss(const PairEmbeddings& emb, const BatchPlan& plan, const LossConfig& config);
double zero_one_risk(const PairEmbeddings& emb, const BatchPlan& plan);

/// Network-level forms. Without a plan, the pair set is a single batch.
LossStats simclr_loss(const NetworkArchitecture& arch, const WeightSample& w,
                      const PairDataset& pairs, const BatchPlan& plan, const LossConfig& config);
LossStats simclr_loss(const NetworkArchitecture& arch, const WeightSample& w,
                      const PairDataset& batch, const LossConfig& config);
double zero_one_risk(const NetworkArchitecture& arch, const WeightSample& w,
                     const PairDataset& pairs, const BatchPlan& plan);
double zero_one_risk(const NetworkArchitecture& arch, const WeightSample& w,
                     const PairDataset& batch);

/// Mean negative log-softmax of the true class; features are d x N columns and
/// head is C x d.
double cross_entropy(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                     const Eigen::MatrixXd& head);
/// Fraction of samples whose true-class logit is strictly below the best other.
double top1_risk(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                 const Eigen::MatrixXd& head);

struct IntraClassDeviation {
  double sigma = 0.0;
  Eigen::MatrixXd class_means;  // d x C, not renormalised
};

IntraClassDeviation intra_class_deviation(const Eigen::MatrixXd& features,
                                          const std::vector<int>& labels, int num_classes);

/// Unit features of labelled samples.
Eigen::MatrixXd embed(const NetworkArchitecture& arch, const WeightSample& w,
                      const Eigen::MatrixXd& inputs, bool use_projection);

double cross_entropy(const NetworkArchitecture& arch, const WeightSample& w,
                     const Eigen::MatrixXd& head, const SampleSet& data, bool use_projection);
double top1_risk(const NetworkArchitecture& arch, const WeightSample& w,
                 const Eigen::MatrixXd& head, const SampleSet& data, bool use_projection);
IntraClassDeviation intra_class_deviation(const NetworkArchitecture& arch, const WeightSample& w,
                                          const SampleSet& data, bool use_projection);

}  // namespace pbcert
