// Reference values from tests/oracle/bounds_oracle.py (mpmath, 40 digits).
#include <cmath>

#include <gtest/gtest.h>

#include "pbcert/certificates.hpp"
#include "pbcert/numerics.hpp"

using namespace pbcert;

namespace {

BoundInputs inputs(double L, double kl, Eigen::Index n, Eigen::Index m, double tau = 1.0,
                   double delta = 0.04)
{
  BoundInputs in;
  in.empirical_loss = L;
  in.kl_qp = kl;
  in.n = n;
  in.m = m;
  in.tau = tau;
  in.delta = delta;
  return in;
}

}  // namespace

TEST(Constants, McDiarmid)
{
  EXPECT_NEAR(mcdiarmid_constant(1.0, 2, Variant::simplified), 5.433780830483027, 1e-12);
  EXPECT_NEAR(mcdiarmid_constant(0.5, 250, Variant::simplified), 56.36676451721858, 1e-10);
  EXPECT_NEAR(mcdiarmid_constant(1.0, 250, Variant::simplified), 10.28354571460801, 1e-10);
  EXPECT_NEAR(mcdiarmid_constant(1.0, 2, Variant::original), 6.281864955107550, 1e-12);
}

TEST(Constants, EpsilonBGamma)
{
  const double eps = hoeffding_epsilon(1.0, 2, 0.04, 0.5, Variant::simplified);
  EXPECT_NEAR(eps, 4.648822020472211, 1e-12);
  EXPECT_NEAR(hoeffding_epsilon(1.0, 2, 0.04, 0.5, Variant::original), 2.0 * eps, 1e-12);
  EXPECT_NEAR(thm1_b(1.0, 2, eps, Variant::simplified), 7.341969201032156, 1e-12);
  EXPECT_NEAR(thm1_b(1.0, 2, eps, Variant::simplified, BForm::corollary),
              1.0 + std::log(2.0 * std::exp(1.0) + eps), 1e-12);
  EXPECT_NEAR(gamma_constant(250, 0.04, 0.4), 0.1401380380409423, 1e-13);
}

TEST(Constants, LossRange)
{
  EXPECT_NEAR(loss_range(1.0, 250, Variant::simplified), 7.521460917862246, 1e-12);
  EXPECT_NEAR(loss_range(0.5, 10, Variant::original), 4.0 + std::log(19.0), 1e-12);
}

TEST(Thm2, ShrinksWithN)
{
  double last = std::numeric_limits<double>::infinity();
  for (Eigen::Index n : {100, 10000, 1000000}) {
    const double v = bound_thm2_mcdiarmid(inputs(0.0, 0.0, n, 2));
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, last);
    last = v;
  }
}

TEST(Thm2, FrozenValue)
{
  EXPECT_NEAR(bound_thm2_mcdiarmid(inputs(1.0, 65.0, 10000, 250)), 1.642742899488339, 1e-10);
}

TEST(Thm1, SingleAlphaExample)
{
  const GridBound b = bound_thm1_extended_kl(inputs(0.0, 0.0, 10000, 2), {0.5});
  EXPECT_NEAR(b.value, 0.1916386670817049, 1e-8);
  EXPECT_DOUBLE_EQ(b.alpha_star, 0.5);
  EXPECT_FALSE(b.vacuous);
}

TEST(Thm1, MonotoneInDelta)
{
  const GridBound loose = bound_thm1_extended_kl(inputs(3.0, 20.0, 10000, 50, 1.0, 0.01),
                                                 default_alpha_grid());
  const GridBound tight = bound_thm1_extended_kl(inputs(3.0, 20.0, 10000, 50, 1.0, 0.04),
                                                 default_alpha_grid());
  EXPECT_GE(loose.value, tight.value);
}

TEST(Thm1, GridMinimum)
{
  const GridBound b = bound_thm1_extended_kl(inputs(4.9, 13.0, 10000, 250), default_alpha_grid());
  ASSERT_EQ(b.per_alpha.size(), default_alpha_grid().size());
  for (const auto& p : b.per_alpha) {
    EXPECT_LE(b.value, p.value);
  }
  EXPECT_NEAR(b.value, 6.451394095840381, 1e-8);
  EXPECT_NEAR(bound_thm1_extended_kl(inputs(4.9, 13.0, 10000, 250), default_alpha_grid(),
                                     BForm::corollary)
                  .value,
              5.134580782793216, 1e-8);
}

TEST(Thm1, ModifiedLossesPerAlpha)
{
  // a larger modified loss at one alpha can only raise that grid point
  const auto in = inputs(1.0, 5.0, 10000, 10);
  const auto grid = default_alpha_grid();
  std::vector<double> same(grid.size(), 1.0), raised = same;
  raised[2] = 2.0;
  const GridBound a = bound_thm1_extended_kl(in, grid, same);
  const GridBound b = bound_thm1_extended_kl(in, grid, raised);
  EXPECT_GT(b.per_alpha[2].value, a.per_alpha[2].value);
  EXPECT_DOUBLE_EQ(b.per_alpha[0].value, a.per_alpha[0].value);
}

TEST(Thm1, VacuousWhenArgumentExceedsOne)
{
  const GridBound b = bound_thm1_extended_kl(inputs(100.0, 0.0, 10000, 10), {0.5});
  EXPECT_TRUE(b.vacuous);
}

TEST(Thm4, Examples)
{
  EXPECT_NEAR(bound_thm4_zero_one(inputs(0.0, 0.0, 10000, 2)), 0.05123216908345542, 1e-12);
  EXPECT_NEAR(bound_thm4_zero_one(inputs(0.1, 0.0, 100000000, 2)), 0.1, 1e-3);
}

TEST(Thm5, GammaAndLargeM)
{
  const GridBound b = bound_thm5_zero_one_kl(inputs(0.0, 0.0, 10000, 10000), default_alpha_grid());
  EXPECT_LT(b.value, 1.0);
  EXPECT_NEAR(b.value, 0.05378566721639463, 1e-8);
}

TEST(Baselines, ClassicFactor)
{
  const auto in = inputs(0.0, 0.0, 10000, 250);
  const double Bl = loss_range(1.0, 250, Variant::simplified);
  EXPECT_NEAR(bound_baseline(in, Baseline::classic_iid), Bl * 0.2682457532861684, 1e-10);
  EXPECT_NEAR(bound_baseline(in, Baseline::classic_iid, true), 0.2682457532861684, 1e-12);
}

TEST(Baselines, TableTwoInputs)
{
  const auto in = inputs(4.9, 13.0, 10000, 250);
  EXPECT_NEAR(bound_baseline(in, Baseline::kl_iid), 7.187877396594546, 1e-8);
  EXPECT_NEAR(bound_baseline(in, Baseline::classic_iid), 8.541939097129994, 1e-10);
  EXPECT_NEAR(bound_baseline(in, Baseline::f_divergence), 27.10423928811271, 1e-9);
  EXPECT_NEAR(bound_thm2_mcdiarmid(in), 5.271668567872105, 1e-10);
}

TEST(Baselines, KlNeverAboveClassic)
{
  for (double L : {0.0, 1.0, 3.0, 6.0}) {
    for (double kl : {0.0, 5.0, 100.0}) {
      const auto in = inputs(L, kl, 10000, 250);
      EXPECT_LE(bound_baseline(in, Baseline::kl_iid),
                bound_baseline(in, Baseline::classic_iid) + 1e-12);
      EXPECT_LE(bound_baseline(in, Baseline::catoni_iid),
                loss_range(1.0, 250, Variant::simplified) + 1e-12);
    }
  }
}

TEST(Baselines, RequireWholeBatches)
{
  EXPECT_THROW(bound_baseline(inputs(1.0, 1.0, 1001, 10), Baseline::kl_iid), std::invalid_argument);
  EXPECT_NO_THROW(bound_baseline(inputs(1.0, 1.0, 1001, 10), Baseline::f_divergence));
}

TEST(Downstream, TemperedExample)
{
  BoundInputs in = inputs(0.0, 0.0, 1, 250, 0.5);
  in.num_classes = 10;
  const DownstreamBound b = bound_downstream(in, 4.2, 0.5);
  EXPECT_NEAR(b.delta_term, -0.5648623087549331, 1e-12);
  EXPECT_NEAR(b.beta, 4.635137691245067, 1e-12);
  EXPECT_NEAR(b.alpha_term, 2.302585092994046, 1e-12);
  EXPECT_NEAR(b.bound, 4.620153938616579, 1e-12);
  EXPECT_EQ(b.branch, DownstreamBranch::tempered);
}

TEST(Downstream, BranchMatchesMinimum)
{
  BoundInputs in = inputs(0.0, 0.0, 1, 250);
  in.num_classes = 3;
  for (double tau : {0.2, 0.5, 1.0}) {
    in.tau = tau;
    for (double L : {0.5, 3.0, 6.0}) {
      const DownstreamBound b = bound_downstream(in, L, 0.3);
      const double tempered = tau * b.beta + b.alpha_term;
      EXPECT_DOUBLE_EQ(b.bound, std::min(b.beta, tempered));
      EXPECT_EQ(b.branch, tempered < b.beta ? DownstreamBranch::tempered
                                            : DownstreamBranch::untempered);
    }
  }
}

TEST(Downstream, RequiresClasses)
{
  EXPECT_THROW(bound_downstream(inputs(0.0, 0.0, 1, 250), 1.0, 0.1), std::invalid_argument);
}

TEST(BoundInputs, Validation)
{
  EXPECT_THROW(inputs(-1.0, 0.0, 10, 2).validate(), std::invalid_argument);
  EXPECT_THROW(inputs(1.0, -1.0, 10, 2).validate(), std::invalid_argument);
  EXPECT_THROW(inputs(1.0, 0.0, 10, 1).validate(), std::invalid_argument);
  EXPECT_THROW(inputs(1.0, 0.0, 10, 2, 1.0, 1.5).validate(), std::invalid_argument);
}

TEST(Certify, ZeroStdPosteriorMatchesFormulas)
{
  const NetworkArchitecture arch{{4, 6, 3}, 0};
  GaussianPosterior q = init_prior(arch, 1e-12, 5);
  q.rho.setConstant(-60.0);
  const SyntheticModel model = make_synthetic_model(2, 4, 2.0, 0.5, 0.1, 3);
  const PairDataset pairs = sample_pairs(model, 200, 4);

  CertifyConfig cc;
  cc.m = 10;
  cc.p_mc = 3;
  cc.seed = 9;
  const CertificateReport r = certify(q, q, pairs, cc);
  EXPECT_NEAR(r.inputs.kl_qp, 0.0, 1e-12);

  const BatchPlan plan = make_batches(pairs, 10, derive_seed(9, 1));
  const WeightSample w = mean_weights(q);
  const LossConfig loss{1.0, Variant::simplified, 0.0};
  const double L = simclr_loss(arch, w, pairs, plan, loss).value;
  const double R = zero_one_risk(arch, w, pairs, plan);
  EXPECT_NEAR(r.inputs.empirical_loss, L, 1e-9);
  EXPECT_NEAR(r.empirical_zero_one, R, 1e-12);

  BoundInputs in = inputs(L, 0.0, 200, 10);
  EXPECT_NEAR(r.get("thm2_mcdiarmid").value, bound_thm2_mcdiarmid(in), 1e-9);
  in.empirical_loss = R;
  EXPECT_NEAR(r.get("thm4_zero_one").value, bound_thm4_zero_one(in), 1e-9);
  EXPECT_NEAR(r.get("thm5_zero_one_kl").value,
              bound_thm5_zero_one_kl(in, default_alpha_grid()).value, 1e-9);

  // the modified losses follow from the deterministic embeddings as well
  ASSERT_EQ(r.modified_losses.size(), default_alpha_grid().size());
  for (std::size_t k = 0; k < r.modified_losses.size(); ++k) {
    LossConfig mod = loss;
    mod.epsilon = hoeffding_epsilon(1.0, 10, 0.04, default_alpha_grid()[k], Variant::simplified);
    EXPECT_NEAR(r.modified_losses[k], simclr_loss(arch, w, pairs, plan, mod).value, 1e-9);
    EXPECT_GE(r.modified_losses[k], L);
  }
}

TEST(Certify, ZeroStdIndependentOfSampleCount)
{
  const NetworkArchitecture arch{{4, 5, 3}, 0};
  GaussianPosterior q = init_prior(arch, 0.05, 1);
  q.rho.setConstant(-60.0);
  const SyntheticModel model = make_synthetic_model(2, 4, 2.0, 0.5, 0.1, 3);
  const PairDataset pairs = sample_pairs(model, 100, 4);
  const BatchPlan plan = make_batches(pairs, 10, 5);
  const LossConfig loss{1.0, Variant::simplified, 0.0};
  const double one = mc_empirical_loss(q, pairs, plan, LossKind::simclr, loss, 1, 7);
  const double many = mc_empirical_loss(q, pairs, plan, LossKind::simclr, loss, 100, 8);
  EXPECT_NEAR(one, many, 1e-12);
}

TEST(Certify, ReportIsReproducible)
{
  const NetworkArchitecture arch{{4, 5, 3}, 0};
  const GaussianPosterior p = init_prior(arch, 0.05, 1);
  GaussianPosterior q = p;
  q.mu.array() += 0.01;
  const SyntheticModel model = make_synthetic_model(2, 4, 2.0, 0.5, 0.1, 3);
  const PairDataset pairs = sample_pairs(model, 100, 4);
  CertifyConfig cc;
  cc.m = 10;
  cc.p_mc = 5;
  cc.seed = 3;
  const std::string a = report_to_json(certify(q, p, pairs, cc));
  const std::string b = report_to_json(certify(q, p, pairs, cc));
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("\"thm1_extended_kl\""), std::string::npos);
  EXPECT_NE(a.find("\"seed\""), std::string::npos);
}

TEST(Certify, TailCorrectionOnlyLoosens)
{
  McLosses l;
  l.simclr = 2.0;
  l.zero_one = 0.1;
  l.modified.assign(default_alpha_grid().size(), 2.1);
  l.epsilons.assign(default_alpha_grid().size(), 1.0);
  l.p_mc = 100;
  CertifyConfig cc;
  cc.m = 10;
  const CertificateReport plain = certify_from_losses(l, 3.0, 1000, cc);
  cc.mc_tail_correction = true;
  const CertificateReport corrected = certify_from_losses(l, 3.0, 1000, cc);
  for (const auto& name : {"thm2_mcdiarmid", "thm1_extended_kl", "thm4_zero_one"}) {
    EXPECT_GE(corrected.get(name).value, plain.get(name).value) << name;
  }
}
