#include "pbcert/model.hpp"

#include <fstream>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

namespace pbcert {

namespace {

constexpr int kCheckpointVersion = 1;

struct LayerView {
  Eigen::Map<const Eigen::MatrixXd> W;
  Eigen::Map<const Eigen::VectorXd> b;
};

LayerView layer(const NetworkArchitecture& arch, const Eigen::VectorXd& weights, int l,
                Eigen::Index offset)
{
  const int in = arch.layer_widths[l];
  const int out = arch.layer_widths[l + 1];
  return {Eigen::Map<const Eigen::MatrixXd>(weights.data() + offset, out, in),
          Eigen::Map<const Eigen::VectorXd>(weights.data() + offset + Eigen::Index(in) * out, out)};
}

void check_weights(const NetworkArchitecture& arch, const Eigen::VectorXd& weights)
{
  if (weights.size() != count_parameters(arch)) {
    throw std::invalid_argument("weight vector has " + std::to_string(weights.size()) +
                                " entries, architecture needs " +
                                std::to_string(count_parameters(arch)));
  }
}

std::string encode_doubles(const Eigen::VectorXd& v)
{
  // hex floats round-trip exactly
  std::string out;
  char buf[40];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%a", v(i));
    if (i) {
      out += ' ';
    }
    out += buf;
  }
  return out;
}

Eigen::VectorXd decode_doubles(const std::string& s, Eigen::Index expected, const char* field)
{
  Eigen::VectorXd v(expected);
  const char* p = s.c_str();
  for (Eigen::Index i = 0; i < expected; ++i) {
    char* end = nullptr;
    v(i) = std::strtod(p, &end);
    if (end == p) {
      throw std::runtime_error(std::string("checkpoint: field '") + field + "' has " +
                               std::to_string(i) + " values, expected " + std::to_string(expected));
    }
    p = end;
  }
  return v;
}

}  // namespace

void NetworkArchitecture::validate() const
{
  if (layer_widths.size() < 2) {
    throw std::invalid_argument("architecture needs an input width and at least one layer");
  }
  for (int w : layer_widths) {
    if (w <= 0) {
      throw std::invalid_argument("layer widths must be positive");
    }
  }
  if (projection_dim < 0 || projection_dim > backbone_dim()) {
    throw std::invalid_argument("projection_dim must lie in [0, d]");
  }
}

Eigen::Index count_parameters(const NetworkArchitecture& arch)
{
  arch.validate();
  Eigen::Index total = 0;
  for (int l = 0; l < arch.num_layers(); ++l) {
    total += Eigen::Index(arch.layer_widths[l] + 1) * arch.layer_widths[l + 1];
  }
  return total;
}

DiagonalGaussian GaussianPosterior::as_gaussian() const
{
  return {mu, stddev().array().square().matrix()};
}

void GaussianPosterior::validate() const
{
  const Eigen::Index p = count_parameters(arch);
  if (mu.size() != p || rho.size() != p) {
    throw std::invalid_argument("posterior size does not match architecture");
  }
  if (!mu.allFinite() || !rho.allFinite()) {
    throw std::invalid_argument("posterior has non-finite entries");
  }
}

Eigen::VectorXd standard_normal(Eigen::Index n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd eps(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    eps(i) = normal(rng);
  }
  return eps;
}

WeightSample sample_weights(const GaussianPosterior& posterior, std::uint64_t seed)
{
  const Eigen::VectorXd eps = standard_normal(posterior.mu.size(), seed);
  return {posterior.mu + posterior.stddev().cwiseProduct(eps), seed};
}

WeightSample mean_weights(const GaussianPosterior& posterior)
{
  return {posterior.mu, 0};
}

Eigen::MatrixXd forward_batch(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                              const Eigen::MatrixXd& inputs, bool use_projection,
                              ForwardCache* cache)
{
  check_weights(arch, weights);
  if (inputs.rows() != arch.input_dim()) {
    throw std::invalid_argument("input dimension " + std::to_string(inputs.rows()) +
                                " does not match architecture input " +
                                std::to_string(arch.input_dim()));
  }
  const int L = arch.num_layers();
  std::vector<Eigen::MatrixXd> local;
  std::vector<Eigen::MatrixXd>& acts = cache ? cache->activations : local;
  acts.assign(static_cast<std::size_t>(L + 1), Eigen::MatrixXd());
  acts[0] = inputs;

  Eigen::Index offset = 0;
  for (int l = 0; l < L; ++l) {
    const auto view = layer(arch, weights, l, offset);
    Eigen::MatrixXd z = view.W * acts[static_cast<std::size_t>(l)];
    z.colwise() += view.b;
    if (l + 1 < L) {
      z = z.cwiseMax(0.0);
    }
    acts[static_cast<std::size_t>(l + 1)] = std::move(z);
    offset += Eigen::Index(arch.layer_widths[l] + 1) * arch.layer_widths[l + 1];
  }

  const int k = arch.output_dim(use_projection);
  const Eigen::MatrixXd& raw = acts.back();
  Eigen::MatrixXd out(k, inputs.cols());
  Eigen::VectorXd norms(inputs.cols());
  for (Eigen::Index i = 0; i < inputs.cols(); ++i) {
    const double r = raw.col(i).head(k).norm();
    norms(i) = r;
    if (r > 0.0) {
      out.col(i) = raw.col(i).head(k) / r;
    } else {
      out.col(i).setZero();
      out(0, i) = 1.0;
    }
  }
  if (cache) {
    cache->norms = norms;
    cache->output = out;
    cache->out_dim = k;
  }
  return out;
}

Eigen::VectorXd forward(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                        const Eigen::VectorXd& input, bool use_projection)
{
  return forward_batch(arch, weights, input, use_projection).col(0);
}

void backward_accumulate(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                         const ForwardCache& cache, const Eigen::MatrixXd& grad_output,
                         Eigen::Ref<Eigen::VectorXd> grad)
{
  check_weights(arch, weights);
  const int L = arch.num_layers();
  const Eigen::Index N = cache.output.cols();
  const int k = cache.out_dim;
  if (grad.size() != weights.size() || grad_output.rows() != k || grad_output.cols() != N) {
    throw std::invalid_argument("backward: shape mismatch");
  }

  // through u = h / |h|: dh = (g - u (u.g)) / |h|, zero where the fallback fired
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(arch.backbone_dim(), N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double r = cache.norms(i);
    if (r > 0.0) {
      const auto u = cache.output.col(i);
      const auto g = grad_output.col(i);
      delta.col(i).head(k) = (g - u * u.dot(g)) / r;
    }
  }

  std::vector<Eigen::Index> offsets(static_cast<std::size_t>(L));
  Eigen::Index offset = 0;
  for (int l = 0; l < L; ++l) {
    offsets[static_cast<std::size_t>(l)] = offset;
    offset += Eigen::Index(arch.layer_widths[l] + 1) * arch.layer_widths[l + 1];
  }

  for (int l = L - 1; l >= 0; --l) {
    const int in = arch.layer_widths[l];
    const int out = arch.layer_widths[l + 1];
    const Eigen::Index off = offsets[static_cast<std::size_t>(l)];
    const auto view = layer(arch, weights, l, off);
    const Eigen::MatrixXd& h_in = cache.activations[static_cast<std::size_t>(l)];
    Eigen::Map<Eigen::MatrixXd> gW(grad.data() + off, out, in);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + off + Eigen::Index(in) * out, out);
    gW.noalias() += delta * h_in.transpose();
    gb += delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd next = view.W.transpose() * delta;
      // relu mask from the stored (post-activation) values
      next.array() *= (h_in.array() > 0.0).cast<double>();
      delta = std::move(next);
    }
  }
}

Eigen::VectorXd backward(const NetworkArchitecture& arch, const Eigen::VectorXd& weights,
                         const ForwardCache& cache, const Eigen::MatrixXd& grad_output)
{
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(weights.size());
  backward_accumulate(arch, weights, cache, grad_output, grad);
  return grad;
}

GaussianPosterior init_prior(const NetworkArchitecture& arch, double sigma0, std::uint64_t seed)
{
  if (!(sigma0 > 0.0)) {
    throw std::invalid_argument("sigma0 must be positive");
  }
  GaussianPosterior prior;
  prior.arch = arch;
  const Eigen::Index p = count_parameters(arch);
  prior.mu = Eigen::VectorXd::Zero(p);
  prior.rho = Eigen::VectorXd::Constant(p, inverse_softplus(sigma0));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::Index offset = 0;
  for (int l = 0; l < arch.num_layers(); ++l) {
    const int in = arch.layer_widths[l];
    const int out = arch.layer_widths[l + 1];
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index j = 0; j < Eigen::Index(in) * out; ++j) {
      double z;
      do {
        z = normal(rng);
      } while (std::abs(z) > 2.0);
      prior.mu(offset + j) = sd * z;
    }
    offset += Eigen::Index(in + 1) * out;
  }
  return prior;
}

void save_checkpoint(const std::filesystem::path& path, const GaussianPosterior& posterior)
{
  posterior.validate();
  nlohmann::ordered_json j;
  j["format"] = "pbcert-checkpoint";
  j["version"] = kCheckpointVersion;
  j["layer_widths"] = posterior.arch.layer_widths;
  j["projection_dim"] = posterior.arch.projection_dim;
  j["num_parameters"] = posterior.mu.size();
  j["mu"] = encode_doubles(posterior.mu);
  j["rho"] = encode_doubles(posterior.rho);
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << j.dump(1) << '\n';
}

GaussianPosterior load_checkpoint(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "pbcert-checkpoint" || j.value("version", 0) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported format or version");
  }
  GaussianPosterior post;
  post.arch.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  post.arch.projection_dim = j.at("projection_dim").get<int>();
  const Eigen::Index p = count_parameters(post.arch);
  if (j.at("num_parameters").get<Eigen::Index>() != p) {
    throw std::runtime_error("checkpoint: parameter count does not match architecture");
  }
  post.mu = decode_doubles(j.at("mu").get<std::string>(), p, "mu");
  post.rho = decode_doubles(j.at("rho").get<std::string>(), p, "rho");
  post.validate();
  return post;
}

}  // namespace pbcert
