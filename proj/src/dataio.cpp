#include "pbcert/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace pbcert {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path)
{
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("truncated file: " + path.string());
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v)
{
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_binary(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return in;
}

template <typename T>
T parse_field(const std::string& field, std::size_t row)
{
  T value{};
  const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || end != field.data() + field.size()) {
    throw FormatError("row " + std::to_string(row) + ": cannot parse '" + field + "'");
  }
  return value;
}

std::vector<std::string> split_csv_line(const std::string& line)
{
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t counter)
{
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (counter + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

UnlabeledSample SampleSet::at(Eigen::Index i) const
{
  UnlabeledSample s{features.col(i), std::nullopt};
  if (labeled()) {
    s.label = labels[static_cast<std::size_t>(i)];
  }
  return s;
}

int SampleSet::num_classes() const
{
  if (labels.empty()) {
    return 0;
  }
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

IdxData load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path)
{
  auto in = open_binary(images_path);
  if (read_be32(in, images_path) != kImageMagic) {
    throw FormatError("bad magic in " + images_path.string());
  }
  const std::uint32_t count = read_be32(in, images_path);
  const std::uint32_t rows = read_be32(in, images_path);
  const std::uint32_t cols = read_be32(in, images_path);
  const std::size_t dim = std::size_t(rows) * cols;

  std::vector<unsigned char> raw(dim * count);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError("truncated file: " + images_path.string());
  }

  IdxData data;
  data.rows = static_cast<int>(rows);
  data.cols = static_cast<int>(cols);
  data.samples.features.resize(static_cast<Eigen::Index>(dim), count);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    data.samples.features.data()[i] = raw[i] / 255.0;
  }

  if (labels_path) {
    auto lin = open_binary(*labels_path);
    if (read_be32(lin, *labels_path) != kLabelMagic) {
      throw FormatError("bad magic in " + labels_path->string());
    }
    const std::uint32_t label_count = read_be32(lin, *labels_path);
    if (label_count != count) {
      throw FormatError("image/label count mismatch: " + std::to_string(count) + " vs " +
                        std::to_string(label_count));
    }
    std::vector<unsigned char> labels(label_count);
    if (!lin.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()))) {
      throw FormatError("truncated file: " + labels_path->string());
    }
    data.samples.labels.assign(labels.begin(), labels.end());
  }

  if (data.samples.features.size() > 0) {
    const double mean = data.samples.features.mean();
    const double var = (data.samples.features.array() - mean).square().mean();
    data.stats = {mean, var > 0.0 ? std::sqrt(var) : 1.0};
  }
  return data;
}

void write_idx_images(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels,
                      int count, int rows, int cols)
{
  if (pixels.size() != std::size_t(count) * rows * cols) {
    throw std::invalid_argument("write_idx_images: pixel buffer size mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  write_be32(out, kImageMagic);
  write_be32(out, static_cast<std::uint32_t>(count));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels)
{
  std::ofstream out(path, std::ios::binary);
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

void normalize(Eigen::MatrixXd& features, const NormalizationStats& stats)
{
  features.array() = (features.array() - stats.mean) / stats.stddev;
}

SampleSet read_embeddings_csv(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("empty embeddings file: " + path.string());
  }
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw FormatError("embeddings header must start with id,label,e0");
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j + 2] != "e" + std::to_string(j)) {
      throw FormatError("unexpected embeddings column " + header[j + 2]);
    }
  }

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t rows = 0;
  std::size_t labeled_rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != dim + 2) {
      throw FormatError("row " + std::to_string(rows + 1) + " has " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(dim + 2));
    }
    if (!fields[1].empty()) {
      labels.push_back(parse_field<int>(fields[1], rows + 1));
      ++labeled_rows;
    }
    for (std::size_t j = 0; j < dim; ++j) {
      values.push_back(parse_field<double>(fields[j + 2], rows + 1));
    }
    ++rows;
  }
  if (labeled_rows != 0 && labeled_rows != rows) {
    throw FormatError("labels must be present for all rows or none");
  }

  SampleSet set;
  set.features = Eigen::Map<Eigen::MatrixXd>(values.data(), static_cast<Eigen::Index>(dim),
                                             static_cast<Eigen::Index>(rows));
  set.labels = std::move(labels);
  return set;
}

void write_embeddings_csv(const std::filesystem::path& path, const SampleSet& samples)
{
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "id,label";
  for (Eigen::Index j = 0; j < samples.dim(); ++j) {
    out << ",e" << j;
  }
  out << '\n';
  out.precision(17);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    out << i << ',';
    if (samples.labeled()) {
      out << samples.labels[static_cast<std::size_t>(i)];
    }
    for (Eigen::Index j = 0; j < samples.dim(); ++j) {
      out << ',' << samples.features(j, i);
    }
    out << '\n';
  }
}

PositivePair PairDataset::pair(Eigen::Index i) const
{
  PositivePair p{views_a.col(i), views_b.col(i), source_index[static_cast<std::size_t>(i)],
                 std::nullopt};
  if (labeled()) {
    p.label = labels[static_cast<std::size_t>(i)];
  }
  return p;
}

PairDataset PairDataset::subset(const std::vector<std::size_t>& indices) const
{
  PairDataset out;
  const auto n = static_cast<Eigen::Index>(indices.size());
  out.views_a.resize(dim(), n);
  out.views_b.resize(dim(), n);
  out.source_index.reserve(indices.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(k)]);
    out.views_a.col(k) = views_a.col(i);
    out.views_b.col(k) = views_b.col(i);
    out.source_index.push_back(source_index[static_cast<std::size_t>(i)]);
    if (labeled()) {
      out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

void AugmentationConfig::validate() const
{
  if (shift_max < 0) {
    throw std::invalid_argument("augmentation: shift_max must be >= 0");
  }
  if (!(mask_prob >= 0.0 && mask_prob < 1.0)) {
    throw std::invalid_argument("augmentation: mask_prob must lie in [0, 1)");
  }
  if (!(noise_std >= 0.0)) {
    throw std::invalid_argument("augmentation: noise_std must be >= 0");
  }
  if (image_width < 0) {
    throw std::invalid_argument("augmentation: image_width must be >= 0");
  }
}

SyntheticModel make_synthetic_model(int num_classes, int dim, double radius, double class_std,
                                    double augmentation_std, std::uint64_t seed)
{
  if (num_classes < 1 || dim < 1) {
    throw std::invalid_argument("synthetic model: num_classes and dim must be positive");
  }
  if (!(radius > 0.0) || !(class_std > 0.0) || !(augmentation_std > 0.0)) {
    throw std::invalid_argument("synthetic model: radius and stds must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  SyntheticModel model;
  model.num_classes = num_classes;
  model.class_std = class_std;
  model.augmentation_std = augmentation_std;
  model.seed = seed;
  model.class_means.resize(dim, num_classes);
  for (int c = 0; c < num_classes; ++c) {
    Eigen::VectorXd v(dim);
    do {
      for (int j = 0; j < dim; ++j) {
        v(j) = normal(rng);
      }
    } while (v.norm() < 1e-8);
    model.class_means.col(c) = radius * v.normalized();
  }
  return model;
}

SampleSet draw_latent(const SyntheticModel& model, Eigen::Index n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> pick_class(0, model.num_classes - 1);
  SampleSet set;
  set.features.resize(model.dim(), n);
  set.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = pick_class(rng);
    set.labels[static_cast<std::size_t>(i)] = c;
    for (Eigen::Index j = 0; j < model.dim(); ++j) {
      set.features(j, i) = model.class_means(j, c) + model.class_std * normal(rng);
    }
  }
  return set;
}

Eigen::MatrixXd augment(const SyntheticModel& model, const Eigen::MatrixXd& latent,
                        std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd views(latent.rows(), latent.cols());
  for (Eigen::Index i = 0; i < latent.cols(); ++i) {
    for (Eigen::Index j = 0; j < latent.rows(); ++j) {
      views(j, i) = latent(j, i) + model.augmentation_std * normal(rng);
    }
  }
  return views;
}

PairDataset sample_pairs(const SyntheticModel& model, Eigen::Index n, std::uint64_t seed,
                         SampleSet* latent)
{
  if (n < 1) {
    throw std::invalid_argument("sample_pairs: n must be >= 1");
  }
  SampleSet sources = draw_latent(model, n, derive_seed(seed, 0));
  PairDataset pairs;
  pairs.views_a = augment(model, sources.features, derive_seed(seed, 1));
  pairs.views_b = augment(model, sources.features, derive_seed(seed, 2));
  pairs.source_index.resize(static_cast<std::size_t>(n));
  std::iota(pairs.source_index.begin(), pairs.source_index.end(), std::size_t{0});
  pairs.labels = sources.labels;
  if (latent) {
    *latent = std::move(sources);
  }
  return pairs;
}

namespace {

void augment_image(Eigen::Ref<Eigen::VectorXd> out, const Eigen::Ref<const Eigen::VectorXd>& src,
                   const AugmentationConfig& cfg, int width, std::mt19937_64& rng)
{
  const Eigen::Index dim = src.size();
  if (cfg.shift_max > 0) {
    std::uniform_int_distribution<int> shift(-cfg.shift_max, cfg.shift_max);
    if (width > 0) {
      const int height = static_cast<int>(dim / width);
      const int dy = shift(rng);
      const int dx = shift(rng);
      for (int r = 0; r < height; ++r) {
        const int sr = ((r - dy) % height + height) % height;
        for (int c = 0; c < width; ++c) {
          const int sc = ((c - dx) % width + width) % width;
          out(r * width + c) = src(sr * width + sc);
        }
      }
    } else {
      const auto d = static_cast<int>(dim);
      const int s = shift(rng);
      for (int k = 0; k < d; ++k) {
        out(k) = src(((k - s) % d + d) % d);
      }
    }
  } else {
    out = src;
  }
  if (cfg.mask_prob > 0.0) {
    std::bernoulli_distribution mask(cfg.mask_prob);
    for (Eigen::Index k = 0; k < dim; ++k) {
      if (mask(rng)) {
        out(k) = 0.0;
      }
    }
  }
  if (cfg.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (Eigen::Index k = 0; k < dim; ++k) {
      out(k) += noise(rng);
    }
  }
}

}  // namespace

PairDataset sample_pairs(const SampleSet& dataset, Eigen::Index n, const AugmentationConfig& config,
                         std::uint64_t seed)
{
  if (dataset.size() == 0) {
    throw std::invalid_argument("sample_pairs: empty dataset");
  }
  if (n < 1) {
    throw std::invalid_argument("sample_pairs: n must be >= 1");
  }
  config.validate();
  int width = config.image_width;
  if (width == 0) {
    const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dataset.dim()))));
    width = (Eigen::Index(side) * side == dataset.dim()) ? side : 0;
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, dataset.size() - 1);
  PairDataset pairs;
  pairs.views_a.resize(dataset.dim(), n);
  pairs.views_b.resize(dataset.dim(), n);
  pairs.source_index.resize(static_cast<std::size_t>(n));
  if (dataset.labeled()) {
    pairs.labels.resize(static_cast<std::size_t>(n));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = pick(rng);
    pairs.source_index[static_cast<std::size_t>(i)] = static_cast<std::size_t>(src);
    if (dataset.labeled()) {
      pairs.labels[static_cast<std::size_t>(i)] = dataset.labels[static_cast<std::size_t>(src)];
    }
    augment_image(pairs.views_a.col(i), dataset.features.col(src), config, width, rng);
    augment_image(pairs.views_b.col(i), dataset.features.col(src), config, width, rng);
  }
  return pairs;
}

BatchPlan make_batches(Eigen::Index num_pairs, Eigen::Index m, std::uint64_t seed)
{
  if (m < 2) {
    throw std::invalid_argument("make_batches: batch size must be >= 2");
  }
  if (m > num_pairs) {
    throw std::invalid_argument("make_batches: batch size " + std::to_string(m) +
                                " exceeds pair count " + std::to_string(num_pairs));
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(num_pairs));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  BatchPlan plan;
  plan.batch_size = m;
  const Eigen::Index p = num_pairs / m;
  plan.batches.resize(static_cast<std::size_t>(p));
  for (Eigen::Index b = 0; b < p; ++b) {
    auto first = order.begin() + b * m;
    plan.batches[static_cast<std::size_t>(b)].assign(first, first + m);
  }
  return plan;
}

std::string csv_number(double v)
{
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace pbcert
