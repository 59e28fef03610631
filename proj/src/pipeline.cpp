#include "pbcert/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#ifndef PBCERT_VERSION
#define PBCERT_VERSION "0.0.0"
#endif

namespace pbcert {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ojson report_json(const TrainReport& r)
{
  return {{"objective_trace", r.objective_trace},
          {"final_kl", r.final_kl},
          {"final_empirical_loss", r.final_empirical_loss}};
}

struct Split {
  Eigen::Index n_total = 0;
  Eigen::Index prior_begin = 0, prior_end = 0;
  Eigen::Index cert_begin = 0, cert_end = 0;
  std::string data_fingerprint;
};

Split read_split(const fs::path& path)
{
  const auto j = nlohmann::json::parse(read_file(path));
  Split s;
  s.n_total = j.at("n_total").get<Eigen::Index>();
  s.prior_begin = j.at("prior").at(0).get<Eigen::Index>();
  s.prior_end = j.at("prior").at(1).get<Eigen::Index>();
  s.cert_begin = j.at("certificate").at(0).get<Eigen::Index>();
  s.cert_end = j.at("certificate").at(1).get<Eigen::Index>();
  s.data_fingerprint = j.at("data_fingerprint").get<std::string>();
  return s;
}

std::vector<std::size_t> range(Eigen::Index begin, Eigen::Index end)
{
  std::vector<std::size_t> idx;
  for (Eigen::Index i = begin; i < end; ++i) {
    idx.push_back(static_cast<std::size_t>(i));
  }
  return idx;
}

// the prior-independent part of the pairs, checked against the recorded split
PairDataset certificate_pairs(const PipelineConfig& cfg, const PairDataset& pairs)
{
  const Split s = read_split(cfg.out / "split.json");
  if (s.n_total != pairs.size() || s.data_fingerprint != fingerprint(pairs)) {
    throw std::runtime_error("split.json does not describe the configured pair set");
  }
  const bool disjoint = s.cert_begin >= s.prior_end || s.cert_end <= s.prior_begin;
  if (!disjoint) {
    throw std::runtime_error("certificate range overlaps the prior's training range");
  }
  return pairs.subset(range(s.cert_begin, s.cert_end));
}

double best_loss_certificate(const CertificateReport& r)
{
  return std::min(r.get("thm1_extended_kl").value, r.get("thm2_mcdiarmid").value);
}

struct LabelledSplit {
  SampleSet train;
  SampleSet test;
  int num_classes = 0;
};

LabelledSplit labelled_views(const PipelineConfig& cfg)
{
  LabelledSplit out;
  if (cfg.data.source == "synthetic") {
    const SyntheticModel model = synthetic_model(cfg);
    auto views = [&](Eigen::Index n, std::uint64_t s) {
      SampleSet latent = draw_latent(model, n, derive_seed(s, 0));
      latent.features = augment(model, latent.features, derive_seed(s, 1));
      return latent;
    };
    out.train = views(cfg.downstream.n_train, derive_seed(cfg.seed, 31));
    out.test = views(cfg.downstream.n_test, derive_seed(cfg.seed, 32));
    out.num_classes = model.num_classes;
    return out;
  }
  const MnistData mnist = load_mnist(cfg.data.mnist_dir);
  // one augmented view per image, matching the marginal of x in the pair distribution
  auto views = [&](const SampleSet& images, std::uint64_t s) {
    AugmentationConfig aug = cfg.data.augmentation;
    SampleSet set;
    set.features.resize(images.dim(), images.size());
    set.labels = images.labels;
    for (Eigen::Index i = 0; i < images.size(); ++i) {
      SampleSet one{images.features.col(i), {}};
      set.features.col(i) = sample_pairs(one, 1, aug, derive_seed(s, std::uint64_t(i))).views_a.col(0);
    }
    return set;
  };
  out.train = views(mnist.train.samples, derive_seed(cfg.seed, 31));
  out.test = views(mnist.test.samples, derive_seed(cfg.seed, 32));
  out.num_classes = std::max(out.train.num_classes(), out.test.num_classes());
  return out;
}

}  // namespace

const char* version()
{
  return PBCERT_VERSION;
}

ArtifactWriter::ArtifactWriter(fs::path dir) : dir_(std::move(dir))
{
  fs::create_directories(dir_);
}

void ArtifactWriter::write(const std::string& name, const std::string& content)
{
  const fs::path target = dir_ / name;
  const fs::path tmp = dir_ / (name + ".partial");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw std::runtime_error("cannot write " + tmp.string());
    }
    out << content;
    if (!out) {
      fs::remove(tmp);
      throw std::runtime_error("write failed: " + tmp.string());
    }
  }
  fs::rename(tmp, target);
  written_.push_back(target);
}

void ArtifactWriter::rollback()
{
  for (const auto& p : written_) {
    std::error_code ec;
    fs::remove(p, ec);
  }
  written_.clear();
}

SyntheticModel synthetic_model(const PipelineConfig& cfg)
{
  const auto& d = cfg.data;
  return make_synthetic_model(d.num_classes, d.dim, d.radius, d.class_std, d.augmentation_std,
                              d.model_seed);
}

MnistData load_mnist(const fs::path& dir)
{
  for (const char* name : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                           "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"}) {
    if (!fs::exists(dir / name)) {
      throw std::runtime_error("MNIST file missing: " + (dir / name).string() +
                               " (see tools/fetch_mnist.py)");
    }
  }
  MnistData m;
  m.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  m.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  normalize(m.train.samples.features, m.train.stats);
  normalize(m.test.samples.features, m.train.stats);
  return m;
}

PairDataset build_pairs(const PipelineConfig& cfg)
{
  if (cfg.data.source == "synthetic") {
    return sample_pairs(synthetic_model(cfg), cfg.data.n_pairs, derive_seed(cfg.seed, 11));
  }
  const MnistData mnist = load_mnist(cfg.data.mnist_dir);
  if (mnist.train.samples.dim() != cfg.arch.input_dim()) {
    throw ConfigError("model.layer_widths", "input width must equal the image size " +
                                                std::to_string(mnist.train.samples.dim()));
  }
  return sample_pairs(mnist.train.samples, cfg.data.n_pairs, cfg.data.augmentation,
                      derive_seed(cfg.seed, 11));
}

PairDataset build_test_pairs(const PipelineConfig& cfg, Eigen::Index n)
{
  if (cfg.data.source == "synthetic") {
    return sample_pairs(synthetic_model(cfg), n, derive_seed(cfg.seed, 12));
  }
  const MnistData mnist = load_mnist(cfg.data.mnist_dir);
  return sample_pairs(mnist.test.samples, n, cfg.data.augmentation, derive_seed(cfg.seed, 12));
}

std::string fingerprint(const std::string& bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fingerprint(const PairDataset& pairs)
{
  std::string bytes(reinterpret_cast<const char*>(pairs.views_a.data()),
                    sizeof(double) * static_cast<std::size_t>(pairs.views_a.size()));
  bytes.append(reinterpret_cast<const char*>(pairs.views_b.data()),
               sizeof(double) * static_cast<std::size_t>(pairs.views_b.size()));
  return fingerprint(bytes);
}

void run_gen_synthetic(const PipelineConfig& cfg, ArtifactWriter& out)
{
  if (cfg.data.source != "synthetic") {
    throw ConfigError("data.source", "gen-synthetic needs data.source = \"synthetic\"");
  }
  const SyntheticModel model = synthetic_model(cfg);
  ojson j;
  j["num_classes"] = model.num_classes;
  j["dim"] = model.dim();
  j["class_std"] = model.class_std;
  j["augmentation_std"] = model.augmentation_std;
  j["seed"] = model.seed;
  j["class_means"] = ojson::array();
  for (int c = 0; c < model.num_classes; ++c) {
    std::vector<double> col(model.class_means.col(c).data(),
                            model.class_means.col(c).data() + model.dim());
    j["class_means"].push_back(col);
  }
  out.write("synthetic_model.json", j.dump(2) + "\n");

  SampleSet latent;
  const PairDataset pairs = sample_pairs(model, cfg.data.n_pairs, derive_seed(cfg.seed, 11), &latent);
  const fs::path tmp = out.dir() / "latent.csv.partial";
  write_embeddings_csv(tmp, latent);
  out.write("latent.csv", read_file(tmp));
  fs::remove(tmp);
}

void run_train_prior(const PipelineConfig& cfg, ArtifactWriter& out)
{
  const PairDataset pairs = build_pairs(cfg);
  const PairSplit split = split_pairs(pairs.size(), cfg.train.prior_fraction);
  TrainConfig tc = cfg.train;
  if (cfg.prior_epochs > 0) {
    tc.epochs = cfg.prior_epochs;
  }
  TrainReport report;
  const GaussianPosterior prior =
      learn_prior(cfg.arch, pairs.subset(split.prior_indices()), tc, cfg.prior_mode, &report);

  const fs::path tmp = out.dir() / "prior.json.partial";
  save_checkpoint(tmp, prior);
  out.write("prior.json", read_file(tmp));
  fs::remove(tmp);

  ojson s;
  s["n_total"] = split.n_total;
  s["prior"] = {0, split.n_prior};
  s["certificate"] = {split.n_prior, split.n_total};
  s["data_fingerprint"] = fingerprint(pairs);
  out.write("split.json", s.dump(2) + "\n");

  ojson r = report_json(report);
  r["mode"] = cfg.prior_mode == PriorMode::informed ? "informed" : "random";
  r["pairs"] = split.n_prior;
  out.write("prior_report.json", r.dump(2) + "\n");
}

void run_train_posterior(const PipelineConfig& cfg, ArtifactWriter& out)
{
  const GaussianPosterior prior = load_checkpoint(cfg.out / "prior.json");
  if (!(prior.arch == cfg.arch)) {
    throw ConfigError("model", "prior checkpoint architecture differs from the configuration");
  }
  const PairDataset pairs = build_pairs(cfg);
  TrainConfig tc = cfg.train;

  ojson grid = ojson::array();
  if (cfg.use_grid) {
    const PairDataset cert = certificate_pairs(cfg, pairs);
    double best = std::numeric_limits<double>::infinity();
    for (double lr : cfg.grid.learning_rates) {
      for (double mom : cfg.grid.momenta) {
        TrainConfig g = tc;
        g.learning_rate = lr;
        g.momentum = mom;
        double value = std::numeric_limits<double>::infinity();
        std::string status = "ok";
        try {
          const GaussianPosterior q = train(prior, prior, pairs, g).posterior;
          CertifyConfig cc = cfg.certify;
          cc.p_mc = cfg.grid.p_mc;
          value = best_loss_certificate(certify(q, prior, cert, cc));
        } catch (const TrainingDiverged& e) {
          status = "diverged";
        }
        grid.push_back({{"learning_rate", lr}, {"momentum", mom}, {"certificate", value},
                        {"status", status}});
        if (value < best) {
          best = value;
          tc.learning_rate = lr;
          tc.momentum = mom;
        }
      }
    }
    if (!std::isfinite(best)) {
      throw TrainingDiverged("every grid point diverged");
    }
  }

  const TrainResult result = train(prior, prior, pairs, tc);
  const fs::path tmp = out.dir() / "posterior.json.partial";
  save_checkpoint(tmp, result.posterior);
  out.write("posterior.json", read_file(tmp));
  fs::remove(tmp);

  ojson r = report_json(result.report);
  r["learning_rate"] = tc.learning_rate;
  r["momentum"] = tc.momentum;
  r["pairs"] = pairs.size();
  if (cfg.use_grid) {
    r["grid"] = grid;
  }
  out.write("posterior_report.json", r.dump(2) + "\n");
}

CertificateReport run_certify(const PipelineConfig& cfg, ArtifactWriter& out)
{
  const GaussianPosterior prior = load_checkpoint(cfg.out / "prior.json");
  const GaussianPosterior posterior = load_checkpoint(cfg.out / "posterior.json");
  const PairDataset cert = certificate_pairs(cfg, build_pairs(cfg));
  const CertificateReport report = certify(posterior, prior, cert, cfg.certify);
  out.write("certificate.json", report_to_json(report));
  out.write("certificate.csv", report_to_csv(report));
  return report;
}

double heldout_loss(const PipelineConfig& cfg, const GaussianPosterior& posterior,
                    const PairDataset& test_pairs, int p_mc, double* zero_one)
{
  const BatchPlan plan = make_batches(test_pairs, cfg.certify.m, derive_seed(cfg.seed, 41));
  const LossConfig loss{cfg.certify.tau, cfg.certify.variant, 0.0};
  const McLosses l = mc_losses(posterior, test_pairs, plan, loss, cfg.certify.delta, {}, p_mc,
                               derive_seed(cfg.seed, 42));
  if (zero_one) {
    *zero_one = l.zero_one;
  }
  return l.simclr;
}

void run_downstream(const PipelineConfig& cfg, ArtifactWriter& out)
{
  const GaussianPosterior posterior = load_checkpoint(cfg.out / "posterior.json");
  const LabelledSplit data = labelled_views(cfg);
  const WeightSample w = mean_weights(posterior);
  const PairDataset test_pairs =
      build_test_pairs(cfg, std::max<Eigen::Index>(cfg.downstream.n_test, cfg.certify.m));
  const BatchPlan plan = make_batches(test_pairs, cfg.certify.m, derive_seed(cfg.seed, 41));
  const LossConfig loss{cfg.certify.tau, cfg.certify.variant, 0.0};

  std::optional<double> certified;
  if (fs::exists(cfg.out / "certificate.json")) {
    const auto j = nlohmann::json::parse(read_file(cfg.out / "certificate.json"));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : j.at("bounds")) {
      const std::string name = b.at("name").get<std::string>();
      if (name == "thm1_extended_kl" || name == "thm2_mcdiarmid") {
        best = std::min(best, b.at("value").get<double>());
      }
    }
    certified = best;
  }

  ojson rows = ojson::array();
  std::ostringstream csv;
  csv << "representation,loss_source,contrastive_loss,sigma,train_ce,test_ce,test_top1,"
         "bound,branch,bao_beta\n";
  for (bool proj : {false, true}) {
    if (proj && posterior.arch.projection_dim == 0) {
      continue;
    }
    const Eigen::MatrixXd ftrain = embed(posterior.arch, w, data.train.features, proj);
    const Eigen::MatrixXd ftest = embed(posterior.arch, w, data.test.features, proj);
    const HeadFit head = fit_head_adam(ftrain, data.train.labels, data.num_classes,
                                       cfg.downstream.adam_epochs, cfg.downstream.adam_learning_rate,
                                       cfg.downstream.adam_batch, derive_seed(cfg.seed, 51));
    const double test_ce = cross_entropy(ftest, data.test.labels, head.head);
    const double top1 = top1_risk(ftest, data.test.labels, head.head);
    const double sigma = intra_class_deviation(ftest, data.test.labels, data.num_classes).sigma;
    const PairEmbeddings emb = embed_pairs(posterior.arch, w.weights, test_pairs, proj);
    const double L = simclr_loss(emb, plan, loss).value;

    BoundInputs in;
    in.n = 1;
    in.m = cfg.certify.m;
    in.tau = cfg.certify.tau;
    in.variant = cfg.certify.variant;
    in.num_classes = data.num_classes;
    std::vector<std::pair<std::string, double>> sources{{"test_empirical", L}};
    if (proj && certified) {
      sources.emplace_back("certificate", *certified);
    }
    for (const auto& [src, Lval] : sources) {
      const DownstreamBound b = bound_downstream(in, Lval, std::min(sigma, 2.0));
      const std::string rep = proj ? "projection" : "backbone";
      const std::string branch = b.branch == DownstreamBranch::tempered ? "tempered" : "untempered";
      rows.push_back({{"representation", rep}, {"loss_source", src}, {"contrastive_loss", Lval},
                      {"sigma", sigma}, {"train_ce", head.loss}, {"test_ce", test_ce},
                      {"test_top1", top1}, {"bound", b.bound}, {"branch", branch},
                      {"bao_beta", b.beta}});
      csv << rep << ',' << src << ',' << csv_number(Lval) << ',' << csv_number(sigma) << ','
          << csv_number(head.loss) << ',' << csv_number(test_ce) << ',' << csv_number(top1) << ','
          << csv_number(b.bound) << ',' << branch << ',' << csv_number(b.beta) << '\n';
    }
  }
  ojson j;
  j["tau"] = cfg.certify.tau;
  j["m"] = cfg.certify.m;
  j["num_classes"] = data.num_classes;
  j["rows"] = rows;
  out.write("downstream.json", j.dump(2) + "\n");
  out.write("downstream.csv", csv.str());
}

void run_verify(const PipelineConfig& cfg, ArtifactWriter& out)
{
  if (cfg.data.source != "synthetic") {
    throw ConfigError("data.source", "verify needs a samplable synthetic source");
  }
  const SyntheticModel model = synthetic_model(cfg);
  const GaussianPosterior net = init_prior(cfg.arch, cfg.train.sigma0, derive_seed(cfg.seed, 61));
  const Eigen::VectorXd& w = net.mu;
  const LossConfig loss = cfg.train.loss;
  const Eigen::Index m = cfg.train.batch_size;
  const Eigen::Index n = std::max<Eigen::Index>(m, (cfg.data.n_pairs / m) * m);
  std::vector<OracleRecord> records;

  for (bool zo : {false, true}) {
    const auto r = check_bounded_difference(cfg.arch, w, model, n, loss, m, zo,
                                            cfg.verify.bounded_difference_trials,
                                            derive_seed(cfg.seed, 62));
    records.push_back({zo ? "bounded_difference_zero_one" : "bounded_difference", r.trials,
                       r.max_observed, r.budget, r.pass()});
  }
  const auto h = check_hoeffding_negatives(cfg.arch, w, model, loss.tau, m, cfg.train.delta,
                                           cfg.verify.hoeffding_trials, derive_seed(cfg.seed, 63));
  records.push_back({"hoeffding_negatives", h.trials, h.violation_rate, h.threshold, h.pass()});

  if (cfg.verify.validity_runs > 0) {
    ValidityConfig vc;
    vc.synthetic = model;
    vc.arch = cfg.arch;
    vc.train = cfg.train;
    vc.prior_epochs = cfg.prior_epochs;
    vc.certify = cfg.certify;
    vc.n_total = cfg.data.n_pairs;
    vc.population_batches = cfg.verify.population_batches;
    const auto v = check_certificate_validity(vc, cfg.verify.validity_runs, derive_seed(cfg.seed, 64));
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& run : v.runs) {
      worst = std::max({worst, run.population_loss - run.thm1, run.population_loss - run.thm2,
                        run.population_zero_one - run.thm4, run.population_zero_one - run.thm5});
    }
    records.push_back({"certificate_validity", cfg.verify.validity_runs, worst, 0.0, v.violations == 0});
  }

  if (model.num_classes >= 2) {
    const auto g = check_downstream_gap(cfg.arch, w, model, loss.tau, m, 1000,
                                        cfg.verify.population_batches, derive_seed(cfg.seed, 65));
    records.push_back({"downstream_gap", 1, g.lhs, g.rhs, g.pass()});
  }
  out.write("oracle.json", records_to_json(records));
  for (const auto& r : records) {
    if (!r.pass) {
      throw std::runtime_error("oracle check failed: " + r.check);
    }
  }
}

void run_report(const std::vector<fs::path>& inputs, ArtifactWriter& out)
{
  if (inputs.empty()) {
    throw ConfigError("report.inputs", "no certificate reports given");
  }
  struct Row {
    double tau;
    std::size_t order;
    std::string name;
    double value;
    bool vacuous;
    double kl_over_n;
  };
  std::vector<Row> rows;
  for (const auto& p : inputs) {
    const auto j = nlohmann::json::parse(read_file(p));
    const double tau = j.at("inputs").at("tau").get<double>();
    const double kl_n = j.at("inputs").at("kl_qp").get<double>() / j.at("inputs").at("n").get<double>();
    std::size_t k = 0;
    for (const auto& b : j.at("bounds")) {
      rows.push_back({tau, k++, b.at("name").get<std::string>(), b.at("value").get<double>(),
                      b.at("vacuous").get<bool>(), kl_n});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.tau != b.tau ? a.tau < b.tau : a.order < b.order;
  });
  std::ostringstream csv;
  csv << "tau,bound,value,vacuous,kl_over_n\n";
  for (const auto& r : rows) {
    csv << csv_number(r.tau) << ',' << r.name << ',' << csv_number(r.value) << ','
        << (r.vacuous ? "true" : "false") << ',' << csv_number(r.kl_over_n) << '\n';
  }
  out.write("table2.csv", csv.str());
}

std::string manifest_json(const std::string& subcommand, const std::string& config_hash,
                          const PipelineConfig& cfg, const std::vector<std::string>& argv)
{
  ojson j;
  j["subcommand"] = subcommand;
  j["config_hash"] = config_hash;
  j["seed"] = cfg.seed;
  j["versions"] = {{"pbcert", version()},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__}};
  j["argv"] = argv;
  return j.dump(2) + "\n";
}

}  // namespace pbcert
