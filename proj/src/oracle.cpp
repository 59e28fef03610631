#include "pbcert/oracle.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "pbcert/numerics.hpp"

namespace pbcert {

namespace {

// fresh pairs from the synthetic model, embedded
PairEmbeddings fresh_pairs(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                           const SyntheticModel& synthetic, Eigen::Index count,
                           std::uint64_t seed, bool use_projection = true)
{
  const PairDataset pairs = sample_pairs(synthetic, count, seed);
  return embed_pairs(arch, weights, pairs, use_projection);
}

struct MeanSe {
  double mean;
  double se;
};

MeanSe mean_se(const std::vector<double>& v)
{
  const double n = double(v.size());
  double s = 0.0;
  for (double x : v) {
    s += x;
  }
  const double mean = s / n;
  double ss = 0.0;
  for (double x : v) {
    ss += (x - mean) * (x - mean);
  }
  const double var = v.size() > 1 ? ss / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

}  // namespace

std::string records_to_json(const std::vector<OracleRecord>& records)
{
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    j.push_back({{"check", r.check},
                 {"trials", r.trials},
                 {"max_observed", r.max_observed},
                 {"budget", r.budget},
                 {"pass", r.pass}});
  }
  return j.dump(2) + "\n";
}

BoundedDifferenceResult check_bounded_difference(const NetworkArchitecture& arch,
                                                 const Eigen::VectorXd& weights,
                                                 const SyntheticModel& synthetic, Eigen::Index n,
                                                 const LossConfig& loss, Eigen::Index m,
                                                 bool zero_one, int trials, std::uint64_t seed)
{
  const PairDataset pairs = sample_pairs(synthetic, n, derive_seed(seed, 0));
  const BatchPlan plan = make_batches(pairs, m, derive_seed(seed, 1));
  const PairEmbeddings emb = embed_pairs(arch, weights, pairs);
  const double p = double(plan.num_batches());
  const double n_eff = double(plan.retained());

  auto batch_value = [&](const PairEmbeddings& e) {
    return zero_one ? zero_one_batch(e.a, e.b) : simclr_batch(e.a, e.b, loss);
  };

  BoundedDifferenceResult out;
  out.trials = trials;
  out.budget = (zero_one ? 2.0 : mcdiarmid_constant(loss.tau, m, loss.variant)) / n_eff;
  std::mt19937_64 rng(derive_seed(seed, 2));
  std::uniform_int_distribution<std::size_t> pick_batch(0, plan.batches.size() - 1);
  std::uniform_int_distribution<Eigen::Index> pick_slot(0, m - 1);
  for (int t = 0; t < trials; ++t) {
    const std::size_t b = pick_batch(rng);
    const Eigen::Index slot = pick_slot(rng);
    PairEmbeddings e = gather(emb, plan.batches[b]);
    const double before = batch_value(e);
    // a fresh latent sample with two fresh views replaces the old one
    const PairEmbeddings repl =
        fresh_pairs(arch, weights, synthetic, 1, derive_seed(seed, 1000 + std::uint64_t(t)));
    e.a.col(slot) = repl.a.col(0);
    e.b.col(slot) = repl.b.col(0);
    const double after = batch_value(e);
    // the full loss is the mean over p equal batches
    const double change = std::abs(after - before) / p;
    out.max_observed = std::max(out.max_observed, change);
    out.violations += change > out.budget;
  }
  return out;
}

HoeffdingResult check_hoeffding_negatives(const NetworkArchitecture& arch,
                                          const Eigen::VectorXd& weights,
                                          const SyntheticModel& synthetic, double tau,
                                          Eigen::Index m, double delta, int trials,
                                          std::uint64_t seed, double eps_scale, int anchors,
                                          int mean_draws)
{
  if (trials < 1 || anchors < 1 || m < 2) {
    throw std::invalid_argument("hoeffding check: need trials, anchors >= 1 and m >= 2");
  }
  HoeffdingResult out;
  out.trials = trials;
  out.epsilon = eps_scale * (std::exp(1.0 / tau) - std::exp(-1.0 / tau)) *
                std::sqrt(double(m - 1) * std::log(1.0 / delta) / 2.0);
  out.threshold = delta + 3.0 * std::sqrt(delta * (1.0 - delta) / trials);

  // negatives are single views of fresh latent samples
  auto negatives = [&](Eigen::Index count, std::uint64_t s) {
    const SampleSet latent = draw_latent(synthetic, count, derive_seed(s, 0));
    return forward_batch(arch, weights, augment(synthetic, latent.features, derive_seed(s, 1)), true);
  };
  const Eigen::MatrixXd anchor_emb = negatives(anchors, derive_seed(seed, 0));
  const Eigen::MatrixXd pool = negatives(mean_draws, derive_seed(seed, 1));

  const Eigen::Index k = m - 1;
  // E[S | x] per anchor from the large pool
  const Eigen::VectorXd mu =
      double(k) * ((pool.transpose() * anchor_emb).array() / tau).exp().colwise().mean().transpose();

  long violations = 0;
  for (int t = 0; t < trials; ++t) {
    const Eigen::Index a = t % anchors;
    const Eigen::MatrixXd neg = negatives(k, derive_seed(seed, 100 + std::uint64_t(t)));
    const double S = ((neg.transpose() * anchor_emb.col(a)).array() / tau).exp().sum();
    violations += (S - mu(a)) >= out.epsilon;
  }
  out.violation_rate = double(violations) / trials;
  return out;
}

PopulationEstimate estimate_population_loss(const GaussianPosterior& posterior,
                                            const SyntheticModel& synthetic, LossKind kind,
                                            const LossConfig& loss, Eigen::Index m,
                                            long fresh_batches, std::uint64_t seed)
{
  if (fresh_batches < 1) {
    throw std::invalid_argument("need at least one fresh batch");
  }
  LossConfig cfg = loss;
  if (kind == LossKind::simclr) {
    cfg.epsilon = 0.0;
  }
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(fresh_batches));
  for (long b = 0; b < fresh_batches; ++b) {
    const std::uint64_t s = derive_seed(seed, std::uint64_t(b));
    const WeightSample w = sample_weights(posterior, derive_seed(s, 0));
    const PairEmbeddings e = fresh_pairs(posterior.arch, w.weights, synthetic, m, derive_seed(s, 1));
    values.push_back(kind == LossKind::zero_one ? zero_one_batch(e.a, e.b)
                                                : simclr_batch(e.a, e.b, cfg));
  }
  const MeanSe ms = mean_se(values);
  return {ms.mean, ms.se, fresh_batches};
}

ValidityResult check_certificate_validity(const ValidityConfig& config, int runs,
                                          std::uint64_t seed)
{
  ValidityResult out;
  const CertifyConfig& cc = config.certify;
  for (int r = 0; r < runs; ++r) {
    const std::uint64_t run_seed = derive_seed(seed, std::uint64_t(r));
    ValidityRun run;
    run.seed = run_seed;

    const PairDataset pairs = sample_pairs(config.synthetic, config.n_total, derive_seed(run_seed, 0));
    const PairSplit split = split_pairs(config.n_total, config.train.prior_fraction);
    const PairDataset prior_pairs = pairs.subset(split.prior_indices());
    const PairDataset cert_pairs = pairs.subset(split.certificate_indices());

    TrainConfig tc = config.train;
    tc.seed = derive_seed(run_seed, 1);
    TrainConfig prior_tc = tc;
    if (config.prior_epochs > 0) {
      prior_tc.epochs = config.prior_epochs;
    }
    const GaussianPosterior prior = learn_prior(config.arch, prior_pairs, prior_tc, PriorMode::informed);
    const GaussianPosterior posterior = train(prior, prior, pairs, tc).posterior;

    CertifyConfig c = cc;
    c.seed = derive_seed(run_seed, 2);
    const CertificateReport rep = certify(posterior, prior, cert_pairs, c);
    run.kl = rep.inputs.kl_qp;
    run.thm1 = rep.get("thm1_extended_kl").value;
    run.thm2 = config.c_scale == 1.0
                   ? rep.get("thm2_mcdiarmid").value
                   : mcdiarmid_form(rep.inputs.empirical_loss,
                                    config.c_scale * mcdiarmid_constant(c.tau, c.m, c.variant),
                                    rep.inputs.kl_qp, rep.inputs.n, rep.inputs.delta);
    run.thm4 = rep.get("thm4_zero_one").value;
    run.thm5 = rep.get("thm5_zero_one_kl").value;

    const LossConfig loss{c.tau, c.variant, 0.0};
    const PopulationEstimate pl = estimate_population_loss(
        posterior, config.synthetic, LossKind::simclr, loss, c.m, config.population_batches,
        derive_seed(run_seed, 3));
    const PopulationEstimate pz = estimate_population_loss(
        posterior, config.synthetic, LossKind::zero_one, loss, c.m, config.population_batches,
        derive_seed(run_seed, 4));
    run.population_loss = pl.estimate;
    run.population_loss_se = pl.std_error;
    run.population_zero_one = pz.estimate;
    run.population_zero_one_se = pz.std_error;

    const double loss_floor = pl.estimate - config.sigma_multiplier * pl.std_error;
    const double zo_floor = pz.estimate - config.sigma_multiplier * pz.std_error;
    run.violated = run.thm1 < loss_floor || run.thm2 < loss_floor || run.thm4 < zo_floor ||
                   run.thm5 < zo_floor;
    out.violations += run.violated;
    out.runs.push_back(run);
  }
  return out;
}

DownstreamGapResult check_downstream_gap(const Eigen::MatrixXd& features,
                                         const std::vector<int>& labels, int num_classes,
                                         double contrastive_loss, double tau, Eigen::Index m,
                                         Variant variant)
{
  DownstreamGapResult out;
  out.contrastive_loss = contrastive_loss;
  out.sigma = intra_class_deviation(features, labels, num_classes).sigma;
  BoundInputs in;
  in.n = 1;
  in.m = m;
  in.tau = tau;
  in.variant = variant;
  in.num_classes = num_classes;
  out.bound = bound_downstream(in, contrastive_loss, std::min(out.sigma, 2.0));
  out.rhs = out.bound.bound;
  const HeadFit fit = fit_head_gd(features, labels, num_classes);
  out.lhs = fit.loss;
  out.head_converged = fit.converged;
  return out;
}

DownstreamGapResult check_downstream_gap(const NetworkArchitecture& arch,
                                         const Eigen::VectorXd& weights,
                                         const SyntheticModel& synthetic, double tau,
                                         Eigen::Index m, Eigen::Index n_labeled,
                                         long population_batches, std::uint64_t seed,
                                         bool use_projection)
{
  const SampleSet latent = draw_latent(synthetic, n_labeled, derive_seed(seed, 0));
  const Eigen::MatrixXd views = augment(synthetic, latent.features, derive_seed(seed, 1));
  const Eigen::MatrixXd features = forward_batch(arch, weights, views, use_projection);

  const LossConfig loss{tau, Variant::simplified, 0.0};
  std::vector<double> values;
  for (long b = 0; b < population_batches; ++b) {
    const PairEmbeddings e = fresh_pairs(arch, weights, synthetic, m,
                                         derive_seed(seed, 10 + std::uint64_t(b)), use_projection);
    values.push_back(simclr_batch(e.a, e.b, loss));
  }
  return check_downstream_gap(features, latent.labels, synthetic.num_classes, mean_se(values).mean,
                              tau, m);
}

}  // namespace pbcert
