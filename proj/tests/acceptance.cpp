// Acceptance checks 1-9. Each prints one PASS/FAIL line; exit status is the
// number of failed criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "pbcert/pipeline.hpp"

using namespace pbcert;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what)
  {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

bool near(double x, double target, double tol)
{
  return std::abs(x - target) <= tol;
}

Outcome criterion_1()
{
  Outcome o;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0), ub(1e-8, 3.0);
  double worst = 0.0;
  int pinsker = 0;
  for (int i = 0; i < 10000; ++i) {
    // round trip p -> kl(q, p) -> kl^{-1}, measured on the probability scale
    const double q = u(rng);
    const double p = q + (1.0 - q) * u(rng);
    worst = std::max(worst, std::abs(kl_inverse(q, binary_kl(q, p)) - p));
    const double b = ub(rng);
    // kl-bound never above the classic bound
    BoundInputs in;
    in.empirical_loss = q * loss_range(1.0, 10, Variant::simplified);
    in.kl_qp = b * 100.0;
    in.n = 1000;
    in.m = 10;
    pinsker += bound_baseline(in, Baseline::kl_iid) > bound_baseline(in, Baseline::classic_iid) + 1e-12;
  }
  o.require(worst <= 1e-9, "kl_inverse residual");
  o.require(pinsker == 0, "Pinsker ordering");

  DiagonalGaussian a{Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Ones(1)};
  DiagonalGaussian b{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
  DiagonalGaussian c{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, std::exp(2.0))};
  const double k0 = gaussian_kl(a, a), k1 = gaussian_kl(a, b), k2 = gaussian_kl(b, c);
  o.require(near(k0, 0.0, 1e-9) && near(k1, 0.5, 1e-9) && near(k2, 0.5676676416183064, 1e-9),
            "Gaussian KL hand values");
  o.detail << "max residual " << worst << ", Pinsker violations " << pinsker << ", KL " << k0 << " "
           << k1 << " " << k2;
  return o;
}

Outcome criterion_2()
{
  Outcome o;
  const double c1 = mcdiarmid_constant(1.0, 2, Variant::simplified);
  const double c2 = mcdiarmid_constant(0.5, 250, Variant::simplified);
  const double e = hoeffding_epsilon(1.0, 2, 0.04, 0.5, Variant::simplified);
  const double g = gamma_constant(250, 0.04, 0.4);
  // references: tests/oracle/bounds_oracle.py
  o.require(near(c1, 5.4338, 1e-3), "C(1,2)");
  o.require(near(c2, 56.37, 0.05), "C(0.5,250)");
  o.require(near(e, 4.6489, 1e-3), "eps");
  o.require(near(g, 0.14013, 1e-4), "gamma");
  o.detail << "C(1,2)=" << c1 << " C(0.5,250)=" << c2 << " eps=" << e << " gamma=" << g;
  return o;
}

Outcome criterion_3()
{
  Outcome o;
  const SyntheticModel model = make_synthetic_model(3, 10, 2.0, 0.5, 0.1, 31);
  const NetworkArchitecture arch{{10, 32, 16}, 0};
  const Eigen::Index n = 500;
  int checks = 0, violations = 0;
  double worst_ratio = 0.0;
  for (int net = 0; net < 10; ++net) {
    // larger means than the prior so that embeddings spread over the sphere
    const Eigen::VectorXd w = 3.0 * init_prior(arch, 0.05, derive_seed(3, std::uint64_t(net))).mu;
    for (double tau : {0.2, 1.0}) {
      for (Eigen::Index m : {10, 50}) {
        for (Variant v : {Variant::simplified, Variant::original}) {
          const auto r = check_bounded_difference(arch, w, model, n, {tau, v, 0.0}, m, false, 100,
                                                  derive_seed(net, std::uint64_t(m)));
          violations += r.violations;
          worst_ratio = std::max(worst_ratio, r.max_observed / r.budget);
          ++checks;
        }
        const auto z = check_bounded_difference(arch, w, model, n, {tau, Variant::simplified, 0.0},
                                                m, true, 100, derive_seed(net, 1000 + std::uint64_t(m)));
        violations += z.violations;
        worst_ratio = std::max(worst_ratio, z.max_observed / z.budget);
        ++checks;
      }
    }
  }
  o.require(violations == 0, "violations");
  o.detail << checks << " harnesses x 100 perturbations, violations " << violations
           << ", max |dphi|/budget " << worst_ratio;
  return o;
}

Outcome criterion_4()
{
  Outcome o;
  const SyntheticModel model = make_synthetic_model(3, 10, 2.0, 0.5, 0.1, 41);
  const NetworkArchitecture arch{{10, 32, 16}, 0};
  const Eigen::VectorXd w = 3.0 * init_prior(arch, 0.05, 4).mu;
  for (double delta : {0.05, 0.1}) {
    for (double tau : {0.2, 1.0}) {
      const auto r = check_hoeffding_negatives(arch, w, model, tau, 50, delta, 10000, 5);
      o.require(r.pass(), "delta " + std::to_string(delta));
      o.detail << "delta=" << delta << " tau=" << tau << " rate=" << r.violation_rate
               << " threshold=" << r.threshold << "; ";
    }
  }
  return o;
}

Outcome criterion_5()
{
  Outcome o;
  const NetworkArchitecture arch{{4, 3, 2}, 0};
  const GaussianPosterior prior = init_prior(arch, 0.1, 5);
  GaussianPosterior q = prior;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd(0.0, 0.2);
  for (auto& v : q.mu) {
    v += nd(rng);
  }
  for (auto& v : q.rho) {
    v += nd(rng);
  }
  const SyntheticModel model = make_synthetic_model(2, 4, 2.0, 0.5, 0.1, 7);
  const PairDataset batch = sample_pairs(model, 3, 8);
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.loss.tau = 0.5;
  const Eigen::Index n = 300;
  const ObjectiveGradient g = gradient(q, prior, batch, cfg, 99, n);
  const Eigen::Index P = q.mu.size();
  std::uniform_int_distribution<Eigen::Index> pick(0, 2 * P - 1);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index k = pick(rng);
    GaussianPosterior up = q, down = q;
    double& xu = k < P ? up.mu(k) : up.rho(k - P);
    double& xd = k < P ? down.mu(k) : down.rho(k - P);
    const double h = 1e-4 * std::max(1.0, std::abs(xu));
    xu += h;
    xd -= h;
    const double fd = (gradient(up, prior, batch, cfg, 99, n).value -
                       gradient(down, prior, batch, cfg, 99, n).value) / (2.0 * h);
    const double an = k < P ? g.grad_mu(k) : g.grad_rho(k - P);
    worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}));
  }
  o.require(worst <= 1e-4, "relative error");
  o.detail << "20 coordinates, max relative error " << worst;
  return o;
}

Outcome criterion_6()
{
  Outcome o;
  ValidityConfig vc;
  vc.synthetic = make_synthetic_model(3, 10, 3.0, 0.5, 0.1, 61);
  vc.arch = {{10, 16, 8}, 0};
  vc.train.batch_size = 10;
  vc.train.epochs = 5;
  vc.certify.m = 10;
  vc.certify.delta = 0.04;
  vc.certify.p_mc = 100;
  vc.n_total = 10000;  // 2000 certificate pairs
  vc.population_batches = 2000;
  const ValidityResult r = check_certificate_validity(vc, 20, 6);
  double min_gap = std::numeric_limits<double>::infinity();
  double kl = 0.0;
  for (const auto& run : r.runs) {
    min_gap = std::min({min_gap, run.thm1 - run.population_loss, run.thm2 - run.population_loss,
                        run.thm4 - run.population_zero_one, run.thm5 - run.population_zero_one});
    kl += run.kl / double(r.runs.size());
  }
  o.require(r.violations == 0, "violations");
  o.detail << "20 runs, n=2000, m=10: violations " << r.violations
           << ", smallest certificate minus population " << min_gap << ", mean KL " << kl;
  return o;
}

Outcome criterion_7()
{
  Outcome o;
  const SyntheticModel model = make_synthetic_model(3, 10, 2.0, 0.5, 0.1, 71);
  const NetworkArchitecture arch{{10, 32, 16}, 0};
  int cases = 0, failures = 0, tempered_below_beta = 0, at_02 = 0;
  double worst = -std::numeric_limits<double>::infinity();
  double example_bound = 0.0, example_beta = 0.0;
  for (int net = 0; net < 10; ++net) {
    const Eigen::VectorXd w = 3.0 * init_prior(arch, 0.05, derive_seed(7, std::uint64_t(net))).mu;
    for (double tau : {0.2, 0.5, 1.0}) {
      const auto g = check_downstream_gap(arch, w, model, tau, 250, 1000, 200,
                                          derive_seed(70 + std::uint64_t(net), std::uint64_t(tau * 10)));
      ++cases;
      failures += !g.pass();
      worst = std::max(worst, g.lhs - g.rhs);
      if (tau == 0.2) {
        ++at_02;
        tempered_below_beta += g.rhs < g.bound.beta;
        example_bound = g.rhs;
        example_beta = g.bound.beta;
      }
    }
  }
  o.require(failures == 0, "cross-entropy above bound");
  o.require(tempered_below_beta == at_02, "bound below beta at tau=0.2");
  o.detail << cases << " cases, failures " << failures << ", max(lhs-rhs) " << worst
           << "; tau=0.2 bound < beta in " << tempered_below_beta << "/" << at_02
           << " (last: " << example_bound << " vs " << example_beta << ")";
  return o;
}

Outcome criterion_8()
{
  Outcome o;
  BoundInputs in;
  in.empirical_loss = 4.9;
  in.kl_qp = 13.0;
  in.n = 10000;
  in.m = 250;
  in.tau = 1.0;
  in.delta = 0.04;
  const double t2 = bound_thm2_mcdiarmid(in);
  const double t1 = bound_thm1_extended_kl(in, default_alpha_grid()).value;
  const double kl = bound_baseline(in, Baseline::kl_iid);
  const double classic = bound_baseline(in, Baseline::classic_iid);
  const double fdiv = bound_baseline(in, Baseline::f_divergence);
  const double Bl = loss_range(1.0, 250, Variant::simplified);
  o.require(t2 < t1 && t1 < kl && kl < classic, "ordering");
  o.require(fdiv > Bl, "f-divergence vacuous");
  // formula-evaluation oracle (tests/oracle/bounds_oracle.py)
  o.require(near(t2, 5.271668567872105, 1e-8) && near(t1, 6.451394095840381, 1e-6) &&
                near(kl, 7.187877396594546, 1e-6) && near(classic, 8.541939097129994, 1e-8) &&
                near(fdiv, 27.10423928811271, 1e-8),
            "oracle values");
  o.detail << "thm2 " << t2 << " < thm1 " << t1 << " < kl " << kl << " < classic " << classic
           << "; f-div " << fdiv << " > B " << Bl;
  return o;
}

Outcome criterion_9()
{
  Outcome o;
  PipelineConfig cfg = load_config(std::filesystem::path(PBCERT_SOURCE_DIR) / "configs/mnist.toml");
  cfg.data.mnist_dir = std::filesystem::path(PBCERT_SOURCE_DIR) / "data/mnist";
  cfg.out = std::filesystem::current_path() / "acceptance_mnist";
  ArtifactWriter out(cfg.out);
  run_train_prior(cfg, out);
  run_train_posterior(cfg, out);
  const CertificateReport rep = run_certify(cfg, out);

  const GaussianPosterior posterior = load_checkpoint(cfg.out / "posterior.json");
  const PairDataset test_pairs = build_test_pairs(cfg, 10000);
  double test_zero_one = 0.0;
  const double test_loss = heldout_loss(cfg, posterior, test_pairs, cfg.downstream.test_p_mc, &test_zero_one);

  const double Bl = loss_range(cfg.certify.tau, cfg.certify.m, cfg.certify.variant);
  const double t1 = rep.get("thm1_extended_kl").value;
  const double t2 = rep.get("thm2_mcdiarmid").value;
  const double t5 = rep.get("thm5_zero_one_kl").value;
  for (const auto& [name, v] : {std::pair{"thm1", t1}, std::pair{"thm2", t2}}) {
    o.require(std::isfinite(v) && v < Bl, std::string(name) + " non-vacuous");
    o.require(std::abs(v - test_loss) <= 1.5, std::string(name) + " within 1.5 of test loss");
  }
  o.require(t5 < 0.5, "thm5 < 0.5");
  o.detail << "n=" << rep.inputs.n << " KL=" << rep.inputs.kl_qp << " train L=" << rep.inputs.empirical_loss
           << " test L=" << test_loss << " thm1=" << t1 << " (corollary B "
           << rep.get("thm1_extended_kl_corollary_b").value << ") thm2=" << t2 << " B_l=" << Bl
           << " zero-one: train " << rep.empirical_zero_one << " test " << test_zero_one
           << " thm4=" << rep.get("thm4_zero_one").value << " thm5=" << t5;
  return o;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"acceptance criteria"};
  std::vector<int> which;
  app.add_option("--criterion", which, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  if (which.empty()) {
    which = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  }
  const std::vector<std::function<Outcome()>> table{criterion_1, criterion_2, criterion_3,
                                                    criterion_4, criterion_5, criterion_6,
                                                    criterion_7, criterion_8, criterion_9};
  int failed = 0;
  for (int c : which) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = table[std::size_t(c - 1)]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "error: " << e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %d: %s (%.1fs) %s\n", c, o.pass ? "PASS" : "FAIL", secs,
                o.detail.str().c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed;
}
