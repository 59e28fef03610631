#include "pbcert/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

namespace pbcert {

namespace {

class Reader {
public:
  explicit Reader(const toml::table& root) : root_(root) {}

  template <typename T>
  std::optional<T> get(const std::string& path)
  {
    seen_.insert(path);
    const toml::node_view<const toml::node> node = root_.at_path(path);
    if (!node) {
      return std::nullopt;
    }
    if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = node.value<std::string>()) {
        return v;
      }
      throw ConfigError(path, "expected a string");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node.value<bool>()) {
        return v;
      }
      throw ConfigError(path, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!node.is_integer()) {
        throw ConfigError(path, "expected an integer");
      }
      return static_cast<T>(*node.value<std::int64_t>());
    } else {
      if (!node.is_number()) {
        throw ConfigError(path, "expected a number");
      }
      return *node.value<double>();
    }
  }

  template <typename T>
  T req(const std::string& path)
  {
    auto v = get<T>(path);
    if (!v) {
      throw ConfigError(path, "missing required key");
    }
    return *v;
  }

  template <typename T>
  T opt(const std::string& path, T fallback)
  {
    auto v = get<T>(path);
    return v ? *v : fallback;
  }

  template <typename T>
  std::optional<std::vector<T>> list(const std::string& path)
  {
    seen_.insert(path);
    const auto node = root_.at_path(path);
    if (!node) {
      return std::nullopt;
    }
    const toml::array* arr = node.as_array();
    if (!arr) {
      throw ConfigError(path, "expected an array");
    }
    std::vector<T> out;
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const toml::node& el = (*arr)[i];
      const std::string at = path + "[" + std::to_string(i) + "]";
      if constexpr (std::is_same_v<T, std::string>) {
        auto v = el.value<std::string>();
        if (!v) {
          throw ConfigError(at, "expected a string");
        }
        out.push_back(*v);
      } else if constexpr (std::is_integral_v<T>) {
        if (!el.is_integer()) {
          throw ConfigError(at, "expected an integer");
        }
        out.push_back(static_cast<T>(*el.value<std::int64_t>()));
      } else {
        if (!el.is_number()) {
          throw ConfigError(at, "expected a number");
        }
        out.push_back(*el.value<double>());
      }
    }
    return out;
  }

  // every leaf key in the document must have been read
  void reject_unknown() const { walk(root_, ""); }

private:
  void walk(const toml::table& t, const std::string& prefix) const
  {
    for (const auto& [key, node] : t) {
      const std::string path = prefix.empty() ? std::string(key.str())
                                              : prefix + "." + std::string(key.str());
      if (const toml::table* sub = node.as_table()) {
        walk(*sub, path);
      } else if (!seen_.count(path)) {
        throw ConfigError(path, "unknown key");
      }
    }
  }

  const toml::table& root_;
  std::set<std::string> seen_;
};

template <typename Fn>
void check(const std::string& field, Fn&& fn)
{
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace

PipelineConfig parse_config(const std::string& toml_text, const std::string& source_name)
{
  toml::table root;
  try {
    root = toml::parse(toml_text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " (line " << e.source().begin.line << ")";
    throw ConfigError("<document>", msg.str());
  }

  Reader r(root);
  PipelineConfig c;
  c.seed = r.req<std::uint64_t>("seed");
  c.out = r.opt<std::string>("out", "out");

  auto& d = c.data;
  d.source = r.req<std::string>("data.source");
  if (d.source != "synthetic" && d.source != "mnist") {
    throw ConfigError("data.source", "expected 'synthetic' or 'mnist'");
  }
  d.n_pairs = r.req<Eigen::Index>("data.n_pairs");
  if (d.n_pairs < 2) {
    throw ConfigError("data.n_pairs", "must be >= 2");
  }
  d.num_classes = r.opt<int>("data.num_classes", d.num_classes);
  d.dim = r.opt<int>("data.dim", d.dim);
  d.radius = r.opt<double>("data.radius", d.radius);
  d.class_std = r.opt<double>("data.class_std", d.class_std);
  d.augmentation_std = r.opt<double>("data.augmentation_std", d.augmentation_std);
  d.model_seed = r.opt<std::uint64_t>("data.model_seed", d.model_seed);
  d.mnist_dir = r.opt<std::string>("data.mnist_dir", d.mnist_dir.string());
  d.augmentation.shift_max = r.opt<int>("data.augmentation.shift_max", d.augmentation.shift_max);
  d.augmentation.mask_prob = r.opt<double>("data.augmentation.mask_prob", d.augmentation.mask_prob);
  d.augmentation.noise_std = r.opt<double>("data.augmentation.noise_std", d.augmentation.noise_std);
  d.augmentation.image_width = r.opt<int>("data.augmentation.image_width", d.augmentation.image_width);
  check("data.augmentation", [&] { d.augmentation.validate(); });

  auto widths = r.list<int>("model.layer_widths");
  if (!widths) {
    throw ConfigError("model.layer_widths", "missing required key");
  }
  c.arch.layer_widths = *widths;
  c.arch.projection_dim = r.opt<int>("model.projection_dim", 0);
  check("model", [&] { c.arch.validate(); });
  if (d.source == "synthetic" && c.arch.input_dim() != d.dim) {
    throw ConfigError("model.layer_widths", "input width must equal data.dim");
  }

  auto& t = c.train;
  t.loss.tau = r.req<double>("loss.tau");
  t.loss.variant = [&] {
    const auto v = r.req<std::string>("loss.variant");
    try {
      return parse_variant(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("loss.variant", e.what());
    }
  }();
  check("loss", [&] { t.loss.validate(); });

  t.epochs = r.req<int>("train.epochs");
  t.batch_size = r.req<Eigen::Index>("train.batch_size");
  t.learning_rate = r.opt<double>("train.learning_rate", t.learning_rate);
  t.momentum = r.opt<double>("train.momentum", t.momentum);
  t.delta = r.opt<double>("train.delta", t.delta);
  t.prior_fraction = r.opt<double>("train.prior_fraction", t.prior_fraction);
  t.sigma0 = r.opt<double>("train.sigma0", t.sigma0);
  t.kl_penalty_eta = r.opt<double>("train.kl_penalty_eta", t.kl_penalty_eta);
  c.prior_epochs = r.opt<int>("train.prior_epochs", 0);
  const auto mode = r.opt<std::string>("train.prior_mode", "informed");
  if (mode != "informed" && mode != "random") {
    throw ConfigError("train.prior_mode", "expected 'informed' or 'random'");
  }
  c.prior_mode = mode == "informed" ? PriorMode::informed : PriorMode::random;
  t.seed = c.seed;
  check("train", [&] { t.validate(); });

  auto& cc = c.certify;
  cc.tau = t.loss.tau;
  cc.variant = t.loss.variant;
  cc.m = t.batch_size;
  cc.delta = r.opt<double>("certify.delta", t.delta);
  cc.p_mc = r.opt<int>("certify.p_mc", cc.p_mc);
  if (auto grid = r.list<double>("certify.alpha_grid")) {
    cc.alpha_grid = *grid;
  }
  const auto b_form = r.opt<std::string>("certify.b_form", "theorem");
  if (b_form != "theorem" && b_form != "corollary") {
    throw ConfigError("certify.b_form", "expected 'theorem' or 'corollary'");
  }
  cc.b_form = b_form == "theorem" ? BForm::theorem : BForm::corollary;
  cc.mc_tail_correction = r.opt<bool>("certify.mc_tail_correction", false);
  cc.mc_delta = r.opt<double>("certify.mc_delta", cc.mc_delta);
  cc.seed = c.seed;
  check("certify", [&] { cc.validate(); });

  auto& ds = c.downstream;
  ds.n_train = r.opt<Eigen::Index>("downstream.n_train", ds.n_train);
  ds.n_test = r.opt<Eigen::Index>("downstream.n_test", ds.n_test);
  ds.adam_epochs = r.opt<int>("downstream.adam_epochs", ds.adam_epochs);
  ds.adam_learning_rate = r.opt<double>("downstream.adam_learning_rate", ds.adam_learning_rate);
  ds.adam_batch = r.opt<Eigen::Index>("downstream.adam_batch", ds.adam_batch);
  ds.test_p_mc = r.opt<int>("downstream.test_p_mc", ds.test_p_mc);

  auto& v = c.verify;
  v.bounded_difference_trials = r.opt<int>("verify.bounded_difference_trials", v.bounded_difference_trials);
  v.hoeffding_trials = r.opt<int>("verify.hoeffding_trials", v.hoeffding_trials);
  v.validity_runs = r.opt<int>("verify.validity_runs", v.validity_runs);
  v.population_batches = r.opt<long>("verify.population_batches", v.population_batches);

  if (auto lrs = r.list<double>("grid.learning_rates")) {
    c.grid.learning_rates = *lrs;
  }
  if (auto moms = r.list<double>("grid.momenta")) {
    c.grid.momenta = *moms;
  }
  c.grid.p_mc = r.opt<int>("grid.p_mc", c.grid.p_mc);
  c.use_grid = r.opt<bool>("grid.enabled", false);

  if (auto inputs = r.list<std::string>("report.inputs")) {
    c.report_inputs.assign(inputs->begin(), inputs->end());
  }

  r.reject_unknown();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("--config", "cannot open " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void apply_overrides(PipelineConfig& cfg, std::optional<std::uint64_t> seed,
                     std::optional<double> tau, std::optional<Eigen::Index> m,
                     std::optional<std::string> variant, std::optional<std::filesystem::path> out,
                     bool grid)
{
  if (seed) {
    cfg.seed = *seed;
    cfg.train.seed = *seed;
    cfg.certify.seed = *seed;
  }
  if (tau) {
    cfg.train.loss.tau = *tau;
    cfg.certify.tau = *tau;
    check("--tau", [&] { cfg.train.loss.validate(); });
  }
  if (m) {
    cfg.train.batch_size = *m;
    cfg.certify.m = *m;
    check("--m", [&] { cfg.train.validate(); });
  }
  if (variant) {
    try {
      cfg.train.loss.variant = parse_variant(*variant);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("--variant", e.what());
    }
    cfg.certify.variant = cfg.train.loss.variant;
  }
  if (out) {
    cfg.out = *out;
  }
  if (grid) {
    cfg.use_grid = true;
  }
}

}  // namespace pbcert
