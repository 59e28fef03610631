#include "pbcert/certificates.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pbcert/dataio.hpp"
#include "pbcert/numerics.hpp"

namespace pbcert {

namespace {

double tail(double delta, double alpha)
{
  return std::pow(delta / 2.0, 1.0 / alpha);
}

double slack(double delta, double alpha)
{
  return std::pow(delta / 2.0, (1.0 - alpha) / alpha);
}

double pac_kl_budget(double kl, Eigen::Index n, double delta)
{
  return (kl + std::log(std::sqrt(double(n)) / delta)) / double(n);
}

void check_alpha(double alpha)
{
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("alpha must lie in (0, 1)");
  }
}

double batch_complexity(const BoundInputs& in)
{
  return double(in.m) *
         (in.kl_qp + std::log(2.0 * std::sqrt(double(in.n)) / (in.delta * std::sqrt(double(in.m))))) /
         double(in.n);
}

// upper confidence value for an average of p_mc draws in [0, range]
double mc_upper(double mean, double range, int p_mc, double mc_delta)
{
  const double q = std::clamp(mean / range, 0.0, 1.0);
  return range * kl_inverse(q, std::log(2.0 / mc_delta) / double(p_mc));
}

}  // namespace

void BoundInputs::validate() const
{
  if (!(empirical_loss >= 0.0)) {
    throw std::invalid_argument("empirical_loss must be non-negative");
  }
  if (!(kl_qp >= 0.0)) {
    throw std::invalid_argument("KL must be non-negative");
  }
  if (n < 1) {
    throw std::invalid_argument("n must be positive");
  }
  if (m < 2) {
    throw std::invalid_argument("m must be >= 2");
  }
  if (!(tau > 0.0)) {
    throw std::invalid_argument("tau must be positive");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("delta must lie in (0, 1)");
  }
}

double mcdiarmid_constant(double tau, Eigen::Index m, Variant variant)
{
  if (m < 2 || !(tau > 0.0)) {
    throw std::invalid_argument("mcdiarmid_constant: need m >= 2 and tau > 0");
  }
  const double e2 = std::exp(2.0 / tau);
  const double k = double(m - 1);
  if (variant == Variant::simplified) {
    return 4.0 / tau + k * std::log((k + e2) / double(m));
  }
  return 4.0 / tau + 2.0 * k * std::log((2.0 * k + e2) / double(2 * m - 1));
}

double hoeffding_epsilon(double tau, Eigen::Index m, double delta, double alpha, Variant variant)
{
  check_alpha(alpha);
  const double range = std::exp(1.0 / tau) - std::exp(-1.0 / tau);
  const double eps =
      range * std::sqrt(double(m - 1) / (2.0 * alpha) * std::log(2.0 / delta));
  return variant == Variant::simplified ? eps : 2.0 * eps;
}

double thm1_b(double tau, Eigen::Index m, double epsilon, Variant variant, BForm form)
{
  const double count = variant == Variant::simplified ? double(m) : double(2 * m - 1);
  if (form == BForm::theorem) {
    return 1.0 / tau + std::log(count) + 1.0 / tau + epsilon;
  }
  return 1.0 / tau + std::log(count * std::exp(1.0 / tau) + epsilon);
}

double gamma_constant(Eigen::Index m, double delta, double alpha)
{
  check_alpha(alpha);
  return std::sqrt(std::log(2.0 / delta) / (2.0 * double(m - 1) * alpha));
}

Constants compute_constants(double tau, Eigen::Index m, double delta, double alpha,
                            Variant variant, BForm form)
{
  Constants c;
  c.alpha = alpha;
  c.c_mcdiarmid = mcdiarmid_constant(tau, m, variant);
  c.epsilon = hoeffding_epsilon(tau, m, delta, alpha, variant);
  c.b_thm1 = thm1_b(tau, m, c.epsilon, variant, form);
  c.b_loss = loss_range(tau, m, variant);
  c.gamma = gamma_constant(m, delta, alpha);
  return c;
}

const std::vector<double>& default_alpha_grid()
{
  static const std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5};
  return grid;
}

double mcdiarmid_form(double empirical, double c, double kl, Eigen::Index n, double delta)
{
  if (n < 2) {
    throw std::invalid_argument("McDiarmid-type bounds need n >= 2");
  }
  return empirical + c * std::sqrt((kl + std::log(2.0 * double(n) / delta)) / (2.0 * double(n - 1)));
}

double bound_thm2_mcdiarmid(const BoundInputs& in)
{
  in.validate();
  return mcdiarmid_form(in.empirical_loss, mcdiarmid_constant(in.tau, in.m, in.variant), in.kl_qp,
                        in.n, in.delta);
}

double bound_thm4_zero_one(const BoundInputs& in)
{
  in.validate();
  return mcdiarmid_form(in.empirical_loss, 2.0, in.kl_qp, in.n, in.delta);
}

GridBound bound_thm1_extended_kl(const BoundInputs& in, const std::vector<double>& alpha_grid,
                                 const std::vector<double>& modified_losses, BForm form)
{
  in.validate();
  if (alpha_grid.empty() || alpha_grid.size() != modified_losses.size()) {
    throw std::invalid_argument("thm1: alpha grid and modified losses must be non-empty and aligned");
  }
  const double budget = pac_kl_budget(in.kl_qp, in.n, in.delta);
  GridBound out;
  out.value = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < alpha_grid.size(); ++k) {
    const double alpha = alpha_grid[k];
    const double eps = hoeffding_epsilon(in.tau, in.m, in.delta, alpha, in.variant);
    const double B = thm1_b(in.tau, in.m, eps, in.variant, form);
    const double arg = modified_losses[k] / B + slack(in.delta, alpha);
    GridPoint pt{alpha, 0.0, arg > 1.0};
    pt.value = (pt.clamped ? B : B * kl_inverse(std::clamp(arg, 0.0, 1.0), budget)) +
               tail(in.delta, alpha);
    out.per_alpha.push_back(pt);
    if (pt.value < out.value) {
      out.value = pt.value;
      out.alpha_star = alpha;
      out.vacuous = pt.clamped;
    }
  }
  return out;
}

GridBound bound_thm1_extended_kl(const BoundInputs& in, const std::vector<double>& alpha_grid,
                                 BForm form)
{
  return bound_thm1_extended_kl(in, alpha_grid,
                                std::vector<double>(alpha_grid.size(), in.empirical_loss), form);
}

GridBound bound_thm5_zero_one_kl(const BoundInputs& in, const std::vector<double>& alpha_grid)
{
  in.validate();
  if (alpha_grid.empty()) {
    throw std::invalid_argument("thm5: empty alpha grid");
  }
  const double budget = pac_kl_budget(in.kl_qp, in.n, in.delta);
  GridBound out;
  out.value = std::numeric_limits<double>::infinity();
  for (double alpha : alpha_grid) {
    const double g = gamma_constant(in.m, in.delta, alpha);
    const double arg = in.empirical_loss + g + slack(in.delta, alpha);
    GridPoint pt{alpha, 0.0, arg > 1.0};
    pt.value = (pt.clamped ? 1.0 : kl_inverse(std::clamp(arg, 0.0, 1.0), budget)) + g +
               tail(in.delta, alpha);
    out.per_alpha.push_back(pt);
    if (pt.value < out.value) {
      out.value = pt.value;
      out.alpha_star = alpha;
      out.vacuous = pt.clamped;
    }
  }
  return out;
}

std::string to_string(Baseline b)
{
  switch (b) {
    case Baseline::classic_iid: return "classic_iid";
    case Baseline::kl_iid: return "kl_iid";
    case Baseline::catoni_iid: return "catoni_iid";
    case Baseline::f_divergence: return "f_divergence";
  }
  return "unknown";
}

double bound_baseline(const BoundInputs& in, Baseline kind, bool zero_one,
                      std::optional<double> lambda)
{
  in.validate();
  if (kind != Baseline::f_divergence && in.n % in.m != 0) {
    throw std::invalid_argument("i.i.d.-batch bounds need n divisible by m (n=" +
                                std::to_string(in.n) + ", m=" + std::to_string(in.m) + ")");
  }
  const double B = zero_one ? 1.0 : loss_range(in.tau, in.m, in.variant);
  const double scaled = in.empirical_loss / B;
  switch (kind) {
    case Baseline::classic_iid:
      return B * (scaled + std::sqrt(batch_complexity(in) / 2.0));
    case Baseline::kl_iid:
      return B * kl_inverse(std::clamp(scaled, 0.0, 1.0), batch_complexity(in));
    case Baseline::catoni_iid: {
      const double c = double(in.m) * (in.kl_qp + std::log(1.0 / in.delta)) / double(in.n);
      const double a = std::clamp(scaled, 0.0, 1.0);
      if (lambda) {
        return B * catoni_objective(*lambda, a, c);
      }
      return B * catoni_infimum(a, c);
    }
    case Baseline::f_divergence:
      return B * (scaled + std::sqrt(double(in.m - 1) / (double(in.n) * in.delta) * (in.kl_qp + 1.0)));
  }
  throw std::logic_error("unknown baseline");
}

DownstreamBound bound_downstream(const BoundInputs& in, double contrastive_loss, double sigma)
{
  in.validate();
  if (!in.num_classes || *in.num_classes < 2) {
    throw std::invalid_argument("downstream bound needs num_classes >= 2");
  }
  if (!(sigma >= 0.0 && sigma <= 2.0 + 1e-12)) {
    throw std::invalid_argument("sigma must lie in [0, 2]");
  }
  const double C = double(*in.num_classes);
  const double negatives = in.variant == Variant::simplified ? double(in.m - 1)
                                                             : 2.0 * double(in.m - 1);
  const double ch = std::cosh(1.0 / in.tau);
  DownstreamBound out;
  out.delta_term = std::log(C / negatives * ch * ch);
  const double log_cosh1_sq = 2.0 * std::log(std::cosh(1.0));
  out.alpha_term = std::log(C) + std::min(0.0, log_cosh1_sq - in.tau * out.delta_term);
  out.beta = sigma / in.tau + contrastive_loss + out.delta_term;
  const double tempered = in.tau * out.beta + out.alpha_term;
  if (tempered < out.beta) {
    out.bound = tempered;
    out.branch = DownstreamBranch::tempered;
  } else {
    out.bound = out.beta;
    out.branch = DownstreamBranch::untempered;
  }
  return out;
}

McLosses mc_losses(const GaussianPosterior& posterior, const PairDataset& pairs,
                   const BatchPlan& plan, const LossConfig& loss, double delta,
                   const std::vector<double>& alpha_grid, int p_mc, std::uint64_t seed)
{
  if (p_mc < 1) {
    throw std::invalid_argument("p_mc must be >= 1");
  }
  McLosses out;
  out.p_mc = p_mc;
  out.modified.assign(alpha_grid.size(), 0.0);
  std::vector<LossConfig> modified_cfg;
  for (double alpha : alpha_grid) {
    LossConfig c = loss;
    // the variant doubling lives in denominator_offset, so keep the base epsilon here
    c.epsilon = hoeffding_epsilon(loss.tau, plan.batch_size, delta, alpha, Variant::simplified);
    out.epsilons.push_back(c.epsilon);
    modified_cfg.push_back(c);
  }
  LossConfig plain = loss;
  plain.epsilon = 0.0;

  double sum_sq = 0.0;
  for (int s = 0; s < p_mc; ++s) {
    const WeightSample w = sample_weights(posterior, derive_seed(seed, std::uint64_t(s)));
    const PairEmbeddings emb = embed_pairs(posterior.arch, w.weights, pairs);
    double l = 0.0;
    double r = 0.0;
    std::vector<double> mod(alpha_grid.size(), 0.0);
    for (const auto& batch : plan.batches) {
      const PairEmbeddings e = gather(emb, batch);
      l += simclr_batch(e.a, e.b, plain);
      r += zero_one_batch(e.a, e.b);
      for (std::size_t k = 0; k < modified_cfg.size(); ++k) {
        mod[k] += simclr_batch(e.a, e.b, modified_cfg[k]);
      }
    }
    const double nb = double(plan.num_batches());
    out.simclr += l / nb;
    sum_sq += (l / nb) * (l / nb);
    out.zero_one += r / nb;
    for (std::size_t k = 0; k < mod.size(); ++k) {
      out.modified[k] += mod[k] / nb;
    }
  }
  out.simclr /= p_mc;
  out.zero_one /= p_mc;
  for (double& v : out.modified) {
    v /= p_mc;
  }
  out.simclr_sample_std = std::sqrt(std::max(0.0, sum_sq / p_mc - out.simclr * out.simclr));
  return out;
}

double mc_empirical_loss(const GaussianPosterior& posterior, const PairDataset& pairs,
                         const BatchPlan& plan, LossKind kind, const LossConfig& config, int p_mc,
                         std::uint64_t seed)
{
  if (p_mc < 1) {
    throw std::invalid_argument("p_mc must be >= 1");
  }
  LossConfig cfg = config;
  if (kind == LossKind::simclr) {
    cfg.epsilon = 0.0;
  }
  double total = 0.0;
  for (int s = 0; s < p_mc; ++s) {
    const WeightSample w = sample_weights(posterior, derive_seed(seed, std::uint64_t(s)));
    const PairEmbeddings emb = embed_pairs(posterior.arch, w.weights, pairs);
    total += kind == LossKind::zero_one ? zero_one_risk(emb, plan) : simclr_loss(emb, plan, cfg).value;
  }
  return total / p_mc;
}

void CertifyConfig::validate() const
{
  if (!(tau > 0.0)) {
    throw std::invalid_argument("tau must be positive");
  }
  if (m < 2) {
    throw std::invalid_argument("m must be >= 2");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("delta must lie in (0, 1)");
  }
  if (alpha_grid.empty()) {
    throw std::invalid_argument("alpha grid must not be empty");
  }
  for (double a : alpha_grid) {
    check_alpha(a);
  }
  if (p_mc < 1) {
    throw std::invalid_argument("p_mc must be >= 1");
  }
  if (mc_tail_correction && !(mc_delta > 0.0 && mc_delta < delta)) {
    throw std::invalid_argument("mc_delta must lie in (0, delta)");
  }
}

const BoundEntry& CertificateReport::get(const std::string& name) const
{
  for (const auto& b : bounds) {
    if (b.name == name) {
      return b;
    }
  }
  throw std::out_of_range("no bound named " + name);
}

CertificateReport certify_from_losses(const McLosses& losses, double kl, Eigen::Index n,
                                      const CertifyConfig& config)
{
  config.validate();
  CertificateReport rep;
  rep.alpha_grid = config.alpha_grid;
  rep.p_mc = losses.p_mc;
  rep.seed = config.seed;
  rep.b_form = config.b_form == BForm::theorem ? "theorem" : "corollary";
  rep.mc_tail_correction = config.mc_tail_correction;

  const double B_l = loss_range(config.tau, config.m, config.variant);
  double delta = config.delta;
  double simclr = losses.simclr;
  double zero_one = losses.zero_one;
  std::vector<double> modified = losses.modified;
  if (config.mc_tail_correction) {
    delta = config.delta - config.mc_delta;
    simclr = mc_upper(simclr, B_l, losses.p_mc, config.mc_delta);
    zero_one = mc_upper(zero_one, 1.0, losses.p_mc, config.mc_delta);
    for (std::size_t k = 0; k < modified.size(); ++k) {
      const double B = thm1_b(config.tau, config.m,
                              hoeffding_epsilon(config.tau, config.m, config.delta,
                                                config.alpha_grid[k], config.variant),
                              config.variant, config.b_form);
      modified[k] = mc_upper(modified[k], B, losses.p_mc, config.mc_delta);
    }
  }
  rep.modified_losses = modified;
  rep.empirical_zero_one = zero_one;

  BoundInputs in;
  in.empirical_loss = simclr;
  in.kl_qp = kl;
  in.n = n;
  in.m = config.m;
  in.tau = config.tau;
  in.delta = delta;
  in.variant = config.variant;
  rep.inputs = in;

  const double C = mcdiarmid_constant(config.tau, config.m, config.variant);
  auto add = [&](std::string name, double value, bool zo, std::optional<double> alpha_star,
                 std::map<std::string, double> constants) {
    rep.bounds.push_back({std::move(name), value, value > (zo ? 1.0 : B_l), zo, alpha_star,
                          std::move(constants)});
  };

  add("thm2_mcdiarmid", bound_thm2_mcdiarmid(in), false, std::nullopt, {{"C", C}});

  auto thm1_entry = [&](const std::string& name, BForm form) {
    const GridBound g = bound_thm1_extended_kl(in, config.alpha_grid, modified, form);
    const Constants k = compute_constants(config.tau, config.m, delta, g.alpha_star, config.variant, form);
    add(name, g.value, false, g.alpha_star,
        {{"B", k.b_thm1}, {"epsilon", k.epsilon}, {"B_l", B_l}});
  };
  thm1_entry("thm1_extended_kl", config.b_form);
  thm1_entry(config.b_form == BForm::theorem ? "thm1_extended_kl_corollary_b"
                                              : "thm1_extended_kl_theorem_b",
             config.b_form == BForm::theorem ? BForm::corollary : BForm::theorem);

  for (Baseline b : {Baseline::classic_iid, Baseline::kl_iid, Baseline::catoni_iid,
                     Baseline::f_divergence}) {
    add(to_string(b), bound_baseline(in, b), false, std::nullopt, {{"B_l", B_l}});
  }

  BoundInputs zo = in;
  zo.empirical_loss = zero_one;
  add("thm4_zero_one", bound_thm4_zero_one(zo), true, std::nullopt, {{"C", 2.0}});
  const GridBound g5 = bound_thm5_zero_one_kl(zo, config.alpha_grid);
  add("thm5_zero_one_kl", g5.value, true, g5.alpha_star,
      {{"gamma", gamma_constant(config.m, delta, g5.alpha_star)}});
  for (Baseline b : {Baseline::classic_iid, Baseline::kl_iid, Baseline::catoni_iid,
                     Baseline::f_divergence}) {
    add("zero_one_" + to_string(b), bound_baseline(zo, b, true), true, std::nullopt, {});
  }
  return rep;
}

CertificateReport certify(const GaussianPosterior& posterior, const GaussianPosterior& prior,
                          const PairDataset& certificate_pairs, const CertifyConfig& config)
{
  config.validate();
  if (!(posterior.arch == prior.arch)) {
    throw std::invalid_argument("certify: posterior and prior architectures differ");
  }
  // frozen partition for certification
  const BatchPlan plan = make_batches(certificate_pairs, config.m, derive_seed(config.seed, 1));
  LossConfig loss{config.tau, config.variant, 0.0};
  const McLosses losses = mc_losses(posterior, certificate_pairs, plan, loss, config.delta,
                                    config.alpha_grid, config.p_mc, derive_seed(config.seed, 2));
  const double kl = gaussian_kl(posterior.as_gaussian(), prior.as_gaussian());
  return certify_from_losses(losses, kl, plan.retained(), config);
}

std::string report_to_json(const CertificateReport& r)
{
  nlohmann::ordered_json j;
  auto& in = j["inputs"];
  in["empirical_loss"] = r.inputs.empirical_loss;
  in["empirical_zero_one"] = r.empirical_zero_one;
  in["modified_losses"] = r.modified_losses;
  in["alpha_grid"] = r.alpha_grid;
  in["kl_qp"] = r.inputs.kl_qp;
  in["n"] = r.inputs.n;
  in["m"] = r.inputs.m;
  in["tau"] = r.inputs.tau;
  in["delta"] = r.inputs.delta;
  in["variant"] = to_string(r.inputs.variant);
  in["b_form"] = r.b_form;
  in["mc_tail_correction"] = r.mc_tail_correction;
  j["bounds"] = nlohmann::ordered_json::array();
  for (const auto& b : r.bounds) {
    nlohmann::ordered_json e;
    e["name"] = b.name;
    e["value"] = b.value;
    e["vacuous"] = b.vacuous;
    e["zero_one"] = b.zero_one;
    if (b.alpha_star) {
      e["alpha_star"] = *b.alpha_star;
    }
    e["constants"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : b.constants) {
      e["constants"][k] = v;
    }
    j["bounds"].push_back(e);
  }
  j["mc"] = {{"p_mc", r.p_mc}, {"seed", r.seed}};
  return j.dump(2) + "\n";
}

std::string report_to_csv(const CertificateReport& r)
{
  std::ostringstream out;
  out << "name,value,vacuous,zero_one,alpha_star,tau,m,n,kl\n";
  for (const auto& b : r.bounds) {
    out << b.name << ',' << csv_number(b.value) << ',' << (b.vacuous ? "true" : "false") << ','
        << (b.zero_one ? "true" : "false") << ',';
    if (b.alpha_star) {
      out << csv_number(*b.alpha_star);
    }
    out << ',' << csv_number(r.inputs.tau) << ',' << r.inputs.m << ',' << r.inputs.n << ','
        << csv_number(r.inputs.kl_qp)
        << '\n';
  }
  return out.str();
}

}  // namespace pbcert
