// pbcert: train, certify and evaluate contrastive PAC-Bayes pipelines.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pbcert/pipeline.hpp"

namespace {

using namespace pbcert;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::optional<Eigen::Index> m;
  std::optional<std::string> variant;
  std::optional<std::string> out;
  bool grid = false;
  std::vector<std::string> inputs;  // report only
};

void add_common(CLI::App* sub, Options& o, bool config_required)
{
  auto* c = sub->add_option("--config", o.config, "TOML configuration");
  if (config_required) {
    c->required();
  }
  sub->add_option("--seed", o.seed, "root seed");
  sub->add_option("--tau", o.tau, "temperature");
  sub->add_option("--m", o.m, "batch size");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--variant", o.variant, "simplified | original")
      ->check(CLI::IsMember({"simplified", "original"}));
  sub->add_flag("--grid", o.grid, "search learning rate x momentum");
}

std::string slurp(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("--config", "cannot open " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_error(const std::string& sub, const std::string& kind, const std::string& field,
                 const std::string& message)
{
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["subcommand"] = sub;
  if (!field.empty()) {
    j["field"] = field;
  }
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"PAC-Bayes risk certificates for contrastive learning"};
  app.set_version_flag("--version", std::string(pbcert::version()));
  app.require_subcommand(1);

  Options o;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-synthetic", "write the synthetic latent dataset and its model"},
      {"train-prior", "learn the prior on the prior split"},
      {"train-posterior", "train the posterior from the prior"},
      {"certify", "compute risk certificates on the certificate split"},
      {"downstream", "linear evaluation and surrogate-gap bounds"},
      {"verify", "run the oracle suite"},
      {"report", "merge certificate reports into one CSV"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, o, name != "report");
    if (name == "report") {
      sub->add_option("inputs", o.inputs, "certificate.json files");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);
    }
    print_error("", "usage", "", e.what());
    return 2;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  std::vector<std::string> args(argv, argv + argc);
  std::optional<ArtifactWriter> writer;
  try {
    PipelineConfig cfg;
    std::string text;
    if (!o.config.empty()) {
      text = slurp(o.config);
      cfg = parse_config(text, o.config);
    }
    std::optional<std::filesystem::path> out;
    if (o.out) {
      out = *o.out;
    }
    apply_overrides(cfg, o.seed, o.tau, o.m, o.variant, out, o.grid);

    // the hash covers the document and every override, i.e. everything that shapes the run
    std::string hashed = text;
    for (std::size_t i = 2; i < args.size(); ++i) {
      hashed += '\0' + args[i];
    }
    writer.emplace(cfg.out);

    if (sub == "gen-synthetic") {
      run_gen_synthetic(cfg, *writer);
    } else if (sub == "train-prior") {
      run_train_prior(cfg, *writer);
    } else if (sub == "train-posterior") {
      run_train_posterior(cfg, *writer);
    } else if (sub == "certify") {
      run_certify(cfg, *writer);
    } else if (sub == "downstream") {
      run_downstream(cfg, *writer);
    } else if (sub == "verify") {
      run_verify(cfg, *writer);
    } else {
      std::vector<std::filesystem::path> inputs = cfg.report_inputs;
      inputs.insert(inputs.end(), o.inputs.begin(), o.inputs.end());
      run_report(inputs, *writer);
    }
    writer->write("manifest-" + sub + ".json", manifest_json(sub, fingerprint(hashed), cfg, args));
  } catch (const ConfigError& e) {
    if (writer) {
      writer->rollback();
    }
    print_error(sub, "config", e.field(), e.what());
    return 2;
  } catch (const std::exception& e) {
    if (writer) {
      writer->rollback();
    }
    print_error(sub, "runtime", "", e.what());
    return 1;
  }
  return 0;
}
