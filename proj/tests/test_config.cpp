#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "pbcert/pipeline.hpp"

using namespace pbcert;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
seed = 3
[data]
source = "synthetic"
n_pairs = 200
dim = 4
[model]
layer_widths = [4, 6, 3]
[loss]
tau = 0.5
variant = "original"
[train]
epochs = 2
batch_size = 10
)";

std::string field_of(const std::string& text)
{
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Config, MinimalDocument)
{
  const PipelineConfig c = parse_config(kMinimal);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.certify.m, 10);
  EXPECT_EQ(c.certify.variant, Variant::original);
  EXPECT_DOUBLE_EQ(c.certify.tau, 0.5);
  EXPECT_DOUBLE_EQ(c.certify.delta, 0.04);
  EXPECT_EQ(c.certify.p_mc, 100);
  EXPECT_DOUBLE_EQ(c.train.prior_fraction, 0.8);
  EXPECT_EQ(c.certify.alpha_grid, default_alpha_grid());
}

TEST(Config, MissingKeysNamePath)
{
  std::string text = kMinimal;
  EXPECT_EQ(field_of(text.replace(text.find("tau = 0.5"), 9, "")), "loss.tau");
  text = kMinimal;
  EXPECT_EQ(field_of(text.replace(text.find("seed = 3"), 8, "")), "seed");
  text = kMinimal;
  EXPECT_EQ(field_of(text.replace(text.find("batch_size = 10"), 15, "")), "train.batch_size");
}

TEST(Config, RejectsBadValues)
{
  EXPECT_EQ(field_of(std::string(kMinimal) + "[certify]\nunknown = 1\n"), "certify.unknown");
  std::string text = kMinimal;
  EXPECT_EQ(field_of(text.replace(text.find("\"original\""), 10, "\"both\"")), "loss.variant");
  text = kMinimal;
  EXPECT_EQ(field_of(text.replace(text.find("[4, 6, 3]"), 9, "[5, 6, 3]")), "model.layer_widths");
  text = kMinimal;
  EXPECT_EQ(field_of(text.replace(text.find("tau = 0.5"), 9, "tau = \"x\"")), "loss.tau");
  EXPECT_EQ(field_of("seed = [1"), "<document>");
}

TEST(Config, OverridesStayInSync)
{
  PipelineConfig c = parse_config(kMinimal);
  apply_overrides(c, 9, 1.0, 20, "simplified", fs::path("elsewhere"), true);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.certify.seed, 9u);
  EXPECT_DOUBLE_EQ(c.train.loss.tau, 1.0);
  EXPECT_DOUBLE_EQ(c.certify.tau, 1.0);
  EXPECT_EQ(c.train.batch_size, 20);
  EXPECT_EQ(c.certify.m, 20);
  EXPECT_EQ(c.certify.variant, Variant::simplified);
  EXPECT_TRUE(c.use_grid);
  EXPECT_THROW(apply_overrides(c, {}, -1.0, {}, {}, {}, false), ConfigError);
}

TEST(Pipeline, EndToEndSmallRun)
{
  PipelineConfig c = parse_config(kMinimal);
  c.out = fs::temp_directory_path() / "pbcert_pipeline";
  fs::remove_all(c.out);
  c.certify.p_mc = 3;
  c.downstream.n_train = 200;
  c.downstream.n_test = 200;
  c.downstream.adam_epochs = 3;
  ArtifactWriter w(c.out);
  run_gen_synthetic(c, w);
  run_train_prior(c, w);
  run_train_posterior(c, w);
  const CertificateReport r = run_certify(c, w);
  EXPECT_EQ(r.inputs.n, 40);
  run_downstream(c, w);
  for (const char* f : {"synthetic_model.json", "latent.csv", "prior.json", "split.json",
                        "posterior.json", "certificate.json", "certificate.csv", "downstream.json",
                        "downstream.csv"}) {
    EXPECT_TRUE(fs::exists(c.out / f)) << f;
  }
  const auto split = nlohmann::json::parse(slurp(c.out / "split.json"));
  EXPECT_EQ(split["prior"][1], 160);
  EXPECT_EQ(split["certificate"][0], 160);

  // rerunning certify reproduces the report byte for byte
  const std::string first = slurp(c.out / "certificate.json");
  run_certify(c, w);
  EXPECT_EQ(first, slurp(c.out / "certificate.json"));

  // a different pair set is refused
  PipelineConfig other = c;
  other.seed = 4;
  other.certify.seed = 4;
  EXPECT_THROW(run_certify(other, w), std::runtime_error);

  w.rollback();
  EXPECT_FALSE(fs::exists(c.out / "certificate.json"));
}

TEST(Pipeline, ReportOneRowPerBoundPerTau)
{
  const fs::path dir = fs::temp_directory_path() / "pbcert_report";
  fs::create_directories(dir);
  std::vector<fs::path> inputs;
  McLosses l;
  l.simclr = 3.0;
  l.zero_one = 0.2;
  l.modified.assign(default_alpha_grid().size(), 3.1);
  l.epsilons.assign(default_alpha_grid().size(), 1.0);
  l.p_mc = 10;
  std::size_t per_report = 0;
  for (double tau : {1.0, 0.2, 0.5, 0.7}) {
    CertifyConfig cc;
    cc.tau = tau;
    const CertificateReport r = certify_from_losses(l, 10.0, 10000, cc);
    per_report = r.bounds.size();
    inputs.push_back(dir / ("cert_" + std::to_string(tau) + ".json"));
    std::ofstream(inputs.back()) << report_to_json(r);
  }
  ArtifactWriter w(dir);
  run_report(inputs, w);
  const std::string csv = slurp(dir / "table2.csv");
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  EXPECT_EQ(std::size_t(lines), 1 + 4 * per_report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "tau,bound,value,vacuous,kl_over_n");
  // sorted by tau
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, 4), "0.2,");
}

TEST(Pipeline, Fingerprint)
{
  EXPECT_EQ(fingerprint(""), "cbf29ce484222325");
  EXPECT_EQ(fingerprint("a"), "af63dc4c8601ec8c");
}
