#include "pbcert/training.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "pbcert/numerics.hpp"

namespace pbcert {

namespace {

double complexity_radicand(double kl, Eigen::Index n, const TrainConfig& config)
{
  return (config.kl_penalty_eta * kl + std::log(std::sqrt(double(n)) / config.delta)) /
         (2.0 * double(n));
}

// softmax cross-entropy gradient wrt the head, mean over the given columns
double head_loss_grad(const Eigen::MatrixXd& head, const Eigen::MatrixXd& features,
                      const std::vector<int>& labels, const std::vector<Eigen::Index>* cols,
                      Eigen::MatrixXd& grad)
{
  grad.setZero(head.rows(), head.cols());
  const Eigen::Index count = cols ? static_cast<Eigen::Index>(cols->size()) : features.cols();
  double total = 0.0;
  Eigen::VectorXd z(head.rows());
  for (Eigen::Index k = 0; k < count; ++k) {
    const Eigen::Index i = cols ? (*cols)[static_cast<std::size_t>(k)] : k;
    z.noalias() = head * features.col(i);
    const double lse = log_sum_exp(z);
    const int y = labels[static_cast<std::size_t>(i)];
    total += lse - z(y);
    Eigen::VectorXd p = (z.array() - lse).exp().matrix();
    p(y) -= 1.0;
    grad.noalias() += p * features.col(i).transpose();
  }
  grad /= double(count);
  return total / double(count);
}

}  // namespace

void TrainConfig::validate() const
{
  if (!(learning_rate >= 0.0)) {
    throw std::invalid_argument("learning_rate must be non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (epochs < 0) {
    throw std::invalid_argument("epochs must be non-negative");
  }
  if (!(kl_penalty_eta >= 0.0 && kl_penalty_eta <= 1.0)) {
    throw std::invalid_argument("kl_penalty_eta must lie in [0, 1]");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("delta must lie in (0, 1)");
  }
  if (!(prior_fraction > 0.0 && prior_fraction < 1.0)) {
    throw std::invalid_argument("prior_fraction must lie in (0, 1)");
  }
  if (!(sigma0 > 0.0)) {
    throw std::invalid_argument("sigma0 must be positive");
  }
  if (batch_size < 2) {
    throw std::invalid_argument("batch_size must be >= 2");
  }
  loss.validate();
}

double pbb_value(double empirical_loss, double kl, Eigen::Index n, Eigen::Index m,
                 const TrainConfig& config)
{
  if (n <= 0) {
    throw std::invalid_argument("pbb objective needs n > 0");
  }
  const double B = loss_range(config.loss.tau, m, config.loss.variant);
  return empirical_loss / B + std::sqrt(complexity_radicand(kl, n, config));
}

double pbb_objective(const GaussianPosterior& posterior, const GaussianPosterior& prior,
                     const PairDataset& pairs, const BatchPlan& plan, const TrainConfig& config,
                     std::uint64_t seed)
{
  if (plan.num_batches() == 0) {
    throw std::invalid_argument("pbb_objective: n = 0");
  }
  const WeightSample w = sample_weights(posterior, seed);
  const double loss = simclr_loss(posterior.arch, w, pairs, plan, config.loss).value;
  const double kl = gaussian_kl(posterior.as_gaussian(), prior.as_gaussian());
  return pbb_value(loss, kl, plan.retained(), plan.batch_size, config);
}

void kl_gradient(const GaussianPosterior& q, const GaussianPosterior& p, Eigen::VectorXd& d_mu,
                 Eigen::VectorXd& d_rho)
{
  const Eigen::ArrayXd s = q.stddev().array();
  const Eigen::ArrayXd var0 = p.stddev().array().square();
  d_mu = ((q.mu - p.mu).array() / var0).matrix();
  d_rho = ((-1.0 / s + s / var0) * sigmoid(q.rho).array()).matrix();
}

ObjectiveGradient gradient(const GaussianPosterior& posterior, const GaussianPosterior& prior,
                           const PairDataset& batch, const TrainConfig& config,
                           std::uint64_t seed, Eigen::Index n)
{
  if (n == 0) {
    n = batch.size();
  }
  const auto& arch = posterior.arch;
  const Eigen::VectorXd eps = standard_normal(posterior.mu.size(), seed);
  const Eigen::VectorXd sd = posterior.stddev();
  const Eigen::VectorXd w = posterior.mu + sd.cwiseProduct(eps);

  ForwardCache ca, cb;
  const Eigen::MatrixXd ua = forward_batch(arch, w, batch.views_a, true, &ca);
  const Eigen::MatrixXd ub = forward_batch(arch, w, batch.views_b, true, &cb);
  Eigen::MatrixXd ga, gb;
  const double loss = simclr_batch(ua, ub, config.loss, &ga, &gb);
  const double B = loss_range(config.loss.tau, batch.size(), config.loss.variant);

  Eigen::VectorXd gw = Eigen::VectorXd::Zero(w.size());
  backward_accumulate(arch, w, ca, ga, gw);
  backward_accumulate(arch, w, cb, gb, gw);
  gw /= B;

  ObjectiveGradient out;
  out.loss = loss;
  out.kl = gaussian_kl(posterior.as_gaussian(), prior.as_gaussian());
  const double rad = complexity_radicand(out.kl, n, config);
  out.value = loss / B + std::sqrt(rad);

  out.grad_mu = gw;
  out.grad_rho = gw.cwiseProduct(eps).cwiseProduct(sigmoid(posterior.rho));
  if (config.kl_penalty_eta > 0.0 && rad > 0.0) {
    const double coef = config.kl_penalty_eta / (4.0 * double(n) * std::sqrt(rad));
    Eigen::VectorXd dmu, drho;
    kl_gradient(posterior, prior, dmu, drho);
    out.grad_mu += coef * dmu;
    out.grad_rho += coef * drho;
  }
  return out;
}

TrainResult train(const GaussianPosterior& init, const GaussianPosterior& prior,
                  const PairDataset& pairs, const TrainConfig& config)
{
  config.validate();
  init.validate();
  if (!(init.arch == prior.arch)) {
    throw std::invalid_argument("train: posterior and prior architectures differ");
  }
  const Eigen::Index m = config.batch_size;
  const double B = loss_range(config.loss.tau, m, config.loss.variant);
  TrainResult result{init, {}};
  GaussianPosterior& q = result.posterior;
  Eigen::VectorXd v_mu = Eigen::VectorXd::Zero(q.mu.size());
  Eigen::VectorXd v_rho = Eigen::VectorXd::Zero(q.rho.size());

  double last_loss = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(config.seed, std::uint64_t(epoch));
    const BatchPlan plan = make_batches(pairs, m, derive_seed(epoch_seed, 0));
    double obj_sum = 0.0;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
      const PairDataset batch = pairs.subset(plan.batches[b]);
      const ObjectiveGradient g =
          gradient(q, prior, batch, config, derive_seed(epoch_seed, b + 1), plan.retained());
      if (!std::isfinite(g.value) || g.value > 10.0 * B) {
        throw TrainingDiverged("objective diverged at epoch " + std::to_string(epoch) +
                               ", step " + std::to_string(b) + " (value " +
                               std::to_string(g.value) + ")");
      }
      obj_sum += g.value;
      loss_sum += g.loss;
      v_mu = config.momentum * v_mu + g.grad_mu;
      v_rho = config.momentum * v_rho + g.grad_rho;
      q.mu -= config.learning_rate * v_mu;
      q.rho -= config.learning_rate * v_rho;
      // softplus(rho) underflows to a zero std below about -745
      if (!q.mu.allFinite() || !q.rho.allFinite() || q.rho.minCoeff() < -700.0) {
        throw TrainingDiverged("parameters left the representable range at epoch " +
                               std::to_string(epoch) + ", step " + std::to_string(b));
      }
    }
    const double steps = double(plan.num_batches());
    result.report.objective_trace.push_back(obj_sum / steps);
    last_loss = loss_sum / steps;
  }
  result.report.final_kl = gaussian_kl(q.as_gaussian(), prior.as_gaussian());
  result.report.final_empirical_loss = last_loss;
  return result;
}

GaussianPosterior learn_prior(const NetworkArchitecture& arch, const PairDataset& pairs_subset,
                              const TrainConfig& config, PriorMode mode, TrainReport* report)
{
  const GaussianPosterior init = init_prior(arch, config.sigma0, derive_seed(config.seed, 0x9417));
  if (mode == PriorMode::random) {
    if (report) {
      *report = TrainReport{};
      report->objective_trace.assign(static_cast<std::size_t>(config.epochs), 0.0);
    }
    return init;
  }
  TrainConfig prior_config = config;
  prior_config.kl_penalty_eta = 1e-6;
  TrainResult r = train(init, init, pairs_subset, prior_config);
  if (report) {
    *report = r.report;
  }
  return r.posterior;
}

std::vector<std::size_t> PairSplit::prior_indices() const
{
  std::vector<std::size_t> idx(static_cast<std::size_t>(n_prior));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<std::size_t> PairSplit::certificate_indices() const
{
  std::vector<std::size_t> idx(static_cast<std::size_t>(n_total - n_prior));
  std::iota(idx.begin(), idx.end(), static_cast<std::size_t>(n_prior));
  return idx;
}

PairSplit split_pairs(Eigen::Index n_total, double prior_fraction)
{
  if (!(prior_fraction > 0.0 && prior_fraction < 1.0)) {
    throw std::invalid_argument("prior_fraction must lie in (0, 1)");
  }
  PairSplit s;
  s.n_total = n_total;
  s.n_prior = static_cast<Eigen::Index>(std::llround(prior_fraction * double(n_total)));
  if (s.n_prior <= 0 || s.n_prior >= n_total) {
    throw std::invalid_argument("split leaves an empty prior or certificate subset");
  }
  return s;
}

HeadFit fit_head_gd(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                    int num_classes, int steps, double learning_rate)
{
  if (num_classes < 2) {
    throw std::invalid_argument("fit_head: need at least two classes");
  }
  cross_entropy(features, labels, Eigen::MatrixXd::Zero(num_classes, features.rows()));  // validates
  HeadFit fit;
  fit.head = Eigen::MatrixXd::Zero(num_classes, features.rows());
  Eigen::MatrixXd grad;
  double prev = std::numeric_limits<double>::infinity();
  for (int s = 0; s < steps; ++s) {
    fit.loss = head_loss_grad(fit.head, features, labels, nullptr, grad);
    fit.grad_norm = grad.norm();
    if (fit.grad_norm < 1e-5 || std::abs(prev - fit.loss) < 1e-13) {
      fit.converged = true;
      break;
    }
    prev = fit.loss;
    fit.head -= learning_rate * grad;
  }
  fit.loss = head_loss_grad(fit.head, features, labels, nullptr, grad);
  fit.grad_norm = grad.norm();
  fit.converged = fit.converged || fit.grad_norm < 1e-5;
  return fit;
}

HeadFit fit_head_adam(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                      int num_classes, int epochs, double learning_rate, Eigen::Index batch_size,
                      std::uint64_t seed)
{
  if (num_classes < 2) {
    throw std::invalid_argument("fit_head: need at least two classes");
  }
  cross_entropy(features, labels, Eigen::MatrixXd::Zero(num_classes, features.rows()));
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  HeadFit fit;
  fit.head = Eigen::MatrixXd::Zero(num_classes, features.rows());
  Eigen::MatrixXd m1 = fit.head;
  Eigen::MatrixXd m2 = fit.head;
  Eigen::MatrixXd grad;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(features.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  long t = 0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      const std::vector<Eigen::Index> cols(order.begin() + static_cast<long>(start),
                                           order.begin() + static_cast<long>(stop));
      head_loss_grad(fit.head, features, labels, &cols, grad);
      ++t;
      m1 = beta1 * m1 + (1.0 - beta1) * grad;
      m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, double(t));
      const double c2 = 1.0 - std::pow(beta2, double(t));
      fit.head.array() -=
          learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
  }
  fit.loss = head_loss_grad(fit.head, features, labels, nullptr, grad);
  fit.grad_norm = grad.norm();
  fit.converged = fit.grad_norm < 1e-5;
  return fit;
}

}  // namespace pbcert
