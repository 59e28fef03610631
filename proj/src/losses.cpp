#include "pbcert/losses.hpp"

#include <cmath>
#include <numeric>

#include "pbcert/numerics.hpp"

namespace pbcert {

namespace {

void require_batch(Eigen::Index m)
{
  if (m < 2) {
    throw std::invalid_argument("batch size must be >= 2, got " + std::to_string(m));
  }
}

void require_labels(const std::vector<int>& labels, Eigen::Index n, int num_classes)
{
  if (labels.empty()) {
    throw std::invalid_argument("labelled data required");
  }
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw std::invalid_argument("label count does not match feature count");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

// Softmax-weighted anchor term: returns -pos + LSE(pos, negatives, log offset)
// and fills `p` with the softmax weights over [pos, negatives...].
double anchor_term(double pos, const Eigen::Ref<const Eigen::VectorXd>& neg, double log_offset,
                   Eigen::VectorXd& p, double& p_offset)
{
  double shift = std::max(pos, neg.maxCoeff());
  if (std::isfinite(log_offset)) {
    shift = std::max(shift, log_offset);
  }
  p.resize(neg.size() + 1);
  p(0) = std::exp(pos - shift);
  p.tail(neg.size()) = (neg.array() - shift).exp();
  p_offset = std::isfinite(log_offset) ? std::exp(log_offset - shift) : 0.0;
  const double z = p.sum() + p_offset;
  p /= z;
  p_offset /= z;
  return -pos + shift + std::log(z);
}

}  // namespace

Variant parse_variant(const std::string& name)
{
  if (name == "simplified") {
    return Variant::simplified;
  }
  if (name == "original") {
    return Variant::original;
  }
  throw std::invalid_argument("unknown loss variant '" + name + "' (simplified|original)");
}

std::string to_string(Variant v)
{
  return v == Variant::simplified ? "simplified" : "original";
}

void LossConfig::validate() const
{
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("tau must be positive");
  }
  if (!(epsilon >= 0.0)) {
    throw std::invalid_argument("epsilon must be non-negative");
  }
}

double loss_range(double tau, Eigen::Index m, Variant variant)
{
  require_batch(m);
  const double negatives = variant == Variant::simplified ? double(m) : double(2 * m - 1);
  return 2.0 / tau + std::log(negatives);
}

PairEmbeddings embed_pairs(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                           const PairDataset& pairs, bool use_projection)
{
  return {forward_batch(arch, weights, pairs.views_a, use_projection),
          forward_batch(arch, weights, pairs.views_b, use_projection)};
}

double simclr_batch(const Eigen::Ref<const Eigen::MatrixXd>& a,
                    const Eigen::Ref<const Eigen::MatrixXd>& b, const LossConfig& config,
                    Eigen::MatrixXd* grad_a, Eigen::MatrixXd* grad_b)
{
  config.validate();
  const Eigen::Index m = a.cols();
  require_batch(m);
  if (b.cols() != m || b.rows() != a.rows()) {
    throw std::invalid_argument("simclr_batch: view shapes differ");
  }
  const double inv_tau = 1.0 / config.tau;
  const Eigen::MatrixXd Saa = (a.transpose() * a) * inv_tau;
  const Eigen::MatrixXd Sab = (a.transpose() * b) * inv_tau;  // Sab(i, j) = a_i . b_j
  const Eigen::MatrixXd Sbb = (b.transpose() * b) * inv_tau;
  const double offset = config.denominator_offset();
  const double log_offset = offset > 0.0 ? std::log(offset)
                                         : -std::numeric_limits<double>::infinity();
  const bool original = config.variant == Variant::original;
  const bool want_grad = grad_a || grad_b;

  Eigen::MatrixXd Gaa, Gab, Gbb;
  if (want_grad) {
    Gaa = Eigen::MatrixXd::Zero(m, m);
    Gab = Eigen::MatrixXd::Zero(m, m);
    Gbb = Eigen::MatrixXd::Zero(m, m);
  }
  const Eigen::Index per_view = m - 1;
  Eigen::VectorXd neg(original ? 2 * per_view : per_view);
  Eigen::VectorXd p;
  double p_off = 0.0;
  double total = 0.0;
  const double w = 0.5 / static_cast<double>(m);

  for (Eigen::Index i = 0; i < m; ++i) {
    // anchor a_i, positive b_i
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != i) {
        neg(k++) = Saa(i, j);
      }
    }
    if (original) {
      for (Eigen::Index j = 0; j < m; ++j) {
        if (j != i) {
          neg(k++) = Sab(i, j);
        }
      }
    }
    total += anchor_term(Sab(i, i), neg, log_offset, p, p_off);
    if (want_grad) {
      Gab(i, i) += w * (p(0) - 1.0);
      k = 1;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (j != i) {
          Gaa(i, j) += w * p(k++);
        }
      }
      if (original) {
        for (Eigen::Index j = 0; j < m; ++j) {
          if (j != i) {
            Gab(i, j) += w * p(k++);
          }
        }
      }
    }

    // anchor b_i, positive a_i
    k = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != i) {
        neg(k++) = Sbb(i, j);
      }
    }
    if (original) {
      for (Eigen::Index j = 0; j < m; ++j) {
        if (j != i) {
          neg(k++) = Sab(j, i);
        }
      }
    }
    total += anchor_term(Sab(i, i), neg, log_offset, p, p_off);
    if (want_grad) {
      Gab(i, i) += w * (p(0) - 1.0);
      k = 1;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (j != i) {
          Gbb(i, j) += w * p(k++);
        }
      }
      if (original) {
        for (Eigen::Index j = 0; j < m; ++j) {
          if (j != i) {
            Gab(j, i) += w * p(k++);
          }
        }
      }
    }
  }

  if (grad_a) {
    *grad_a = (a * (Gaa + Gaa.transpose()) + b * Gab.transpose()) * inv_tau;
  }
  if (grad_b) {
    *grad_b = (a * Gab + b * (Gbb + Gbb.transpose())) * inv_tau;
  }
  return total * w;
}

double zero_one_batch(const Eigen::Ref<const Eigen::MatrixXd>& a,
                      const Eigen::Ref<const Eigen::MatrixXd>& b)
{
  const Eigen::Index m = a.cols();
  require_batch(m);
  const Eigen::MatrixXd Saa = a.transpose() * a;
  const Eigen::MatrixXd Sab = a.transpose() * b;
  double wrong = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double pos = Sab(i, i);
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) {
        continue;
      }
      wrong += (pos < Saa(i, j)) + (pos < Sab(i, j));
    }
  }
  return wrong / (2.0 * double(m - 1) * double(m));
}

PairEmbeddings gather(const PairEmbeddings& emb, const std::vector<std::size_t>& batch)
{
  const auto m = static_cast<Eigen::Index>(batch.size());
  PairEmbeddings out{Eigen::MatrixXd(emb.a.rows(), m), Eigen::MatrixXd(emb.b.rows(), m)};
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(k)]);
    out.a.col(k) = emb.a.col(i);
    out.b.col(k) = emb.b.col(i);
  }
  return out;
}

LossStats simclr_loss(const PairEmbeddings& emb, const BatchPlan& plan, const LossConfig& config)
{
  if (plan.num_batches() == 0) {
    throw std::invalid_argument("simclr_loss: empty batch plan");
  }
  LossStats stats;
  stats.bound_Bl = loss_range(config.tau, plan.batch_size, config.variant);
  stats.per_batch_values.reserve(plan.batches.size());
  for (const auto& batch : plan.batches) {
    const PairEmbeddings e = gather(emb, batch);
    stats.per_batch_values.push_back(simclr_batch(e.a, e.b, config));
  }
  stats.value = std::accumulate(stats.per_batch_values.begin(), stats.per_batch_values.end(), 0.0) /
                static_cast<double>(plan.num_batches());
  return stats;
}

double zero_one_risk(const PairEmbeddings& emb, const BatchPlan& plan)
{
  if (plan.num_batches() == 0) {
    throw std::invalid_argument("zero_one_risk: empty batch plan");
  }
  double total = 0.0;
  for (const auto& batch : plan.batches) {
    const PairEmbeddings e = gather(emb, batch);
    total += zero_one_batch(e.a, e.b);
  }
  return total / static_cast<double>(plan.num_batches());
}

LossStats simclr_loss(const NetworkArchitecture& arch, const WeightSample& w,
                      const PairDataset& pairs, const BatchPlan& plan, const LossConfig& config)
{
  return simclr_loss(embed_pairs(arch, w.weights, pairs), plan, config);
}

LossStats simclr_loss(const NetworkArchitecture& arch, const WeightSample& w,
                      const PairDataset& batch, const LossConfig& config)
{
  const PairEmbeddings e = embed_pairs(arch, w.weights, batch);
  LossStats stats;
  stats.value = simclr_batch(e.a, e.b, config);
  stats.per_batch_values = {stats.value};
  stats.bound_Bl = loss_range(config.tau, batch.size(), config.variant);
  return stats;
}

double zero_one_risk(const NetworkArchitecture& arch, const WeightSample& w,
                     const PairDataset& pairs, const BatchPlan& plan)
{
  return zero_one_risk(embed_pairs(arch, w.weights, pairs), plan);
}

double zero_one_risk(const NetworkArchitecture& arch, const WeightSample& w,
                     const PairDataset& batch)
{
  const PairEmbeddings e = embed_pairs(arch, w.weights, batch);
  return zero_one_batch(e.a, e.b);
}

double cross_entropy(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                     const Eigen::MatrixXd& head)
{
  const auto C = static_cast<int>(head.rows());
  if (C < 2) {
    throw std::invalid_argument("cross_entropy: need at least two classes");
  }
  if (head.cols() != features.rows()) {
    throw std::invalid_argument("cross_entropy: head width does not match feature dimension");
  }
  require_labels(labels, features.cols(), C);
  const Eigen::MatrixXd logits = head * features;
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    total += log_sum_exp(logits.col(i)) - logits(labels[static_cast<std::size_t>(i)], i);
  }
  return total / static_cast<double>(logits.cols());
}

double top1_risk(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                 const Eigen::MatrixXd& head)
{
  const auto C = static_cast<int>(head.rows());
  if (C < 2) {
    throw std::invalid_argument("top1_risk: need at least two classes");
  }
  if (head.cols() != features.rows()) {
    throw std::invalid_argument("top1_risk: head width does not match feature dimension");
  }
  require_labels(labels, features.cols(), C);
  const Eigen::MatrixXd logits = head * features;
  double wrong = 0.0;
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    double best_other = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c) {
      if (c != y) {
        best_other = std::max(best_other, logits(c, i));
      }
    }
    wrong += logits(y, i) < best_other;
  }
  return wrong / static_cast<double>(logits.cols());
}

IntraClassDeviation intra_class_deviation(const Eigen::MatrixXd& features,
                                          const std::vector<int>& labels, int num_classes)
{
  require_labels(labels, features.cols(), num_classes);
  IntraClassDeviation out;
  out.class_means = Eigen::MatrixXd::Zero(features.rows(), num_classes);
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index i = 0; i < features.cols(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    out.class_means.col(y) += features.col(i);
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw std::invalid_argument("intra_class_deviation: class " + std::to_string(c) +
                                  " has no samples");
    }
    out.class_means.col(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < features.cols(); ++i) {
    total += (features.col(i) - out.class_means.col(labels[static_cast<std::size_t>(i)])).norm();
  }
  out.sigma = total / static_cast<double>(features.cols());
  return out;
}

Eigen::MatrixXd embed(const NetworkArchitecture& arch, const WeightSample& w,
                      const Eigen::MatrixXd& inputs, bool use_projection)
{
  return forward_batch(arch, w.weights, inputs, use_projection);
}

double cross_entropy(const NetworkArchitecture& arch, const WeightSample& w,
                     const Eigen::MatrixXd& head, const SampleSet& data, bool use_projection)
{
  return cross_entropy(embed(arch, w, data.features, use_projection), data.labels, head);
}

double top1_risk(const NetworkArchitecture& arch, const WeightSample& w,
                 const Eigen::MatrixXd& head, const SampleSet& data, bool use_projection)
{
  return top1_risk(embed(arch, w, data.features, use_projection), data.labels, head);
}

IntraClassDeviation intra_class_deviation(const NetworkArchitecture& arch, const WeightSample& w,
                                          const SampleSet& data, bool use_projection)
{
  return intra_class_deviation(embed(arch, w, data.features, use_projection), data.labels,
                               data.num_classes());
}

}  // namespace pbcert
