#include "fuda/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string_view>

#include "fuda/errors.hpp"
#include "fuda/rng.hpp"

namespace fuda {
namespace {

constexpr std::string_view kMagic = "#fuda-features";
constexpr std::string_view kVersion = "v1";

// Gram-Schmidt over Gaussian draws; returns `count` orthonormal vectors of length dim (count <= dim).
std::vector<std::vector<double>> random_orthonormal(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& b : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * b[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * b[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  return random_orthonormal(1, dim, rng).front();
}

// Rotation by `angle` in floor(d/2) mutually orthogonal random planes. For even d
// every principal angle equals `angle`; for odd d one axis is left fixed.
Matrix random_rotation(std::size_t dim, double angle, Rng& rng) {
  Matrix rot(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) rot(i, i) = 1.0;
  if (angle == 0.0) return rot;
  const auto basis = random_orthonormal(dim - dim % 2, dim, rng);
  for (std::size_t p = 0; p + 1 < basis.size(); p += 2) {
    const auto& u = basis[p];
    const auto& v = basis[p + 1];
    const double c = std::cos(angle) - 1.0;
    const double s = std::sin(angle);
    // R += (cos - 1)(uu^T + vv^T) + sin(vu^T - uv^T)
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        rot(i, j) += c * (u[i] * u[j] + v[i] * v[j]) + s * (v[i] * u[j] - u[i] * v[j]);
      }
    }
  }
  return rot;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string header_value(std::string_view header, std::string_view key, std::size_t line) {
  const std::string needle = " " + std::string(key) + "=";
  const auto pos = header.find(needle);
  if (pos == std::string_view::npos) throw ParseError(line, "header is missing '" + std::string(key) + "='");
  const auto begin = pos + needle.size();
  const auto end = header.find(' ', begin);
  return std::string(header.substr(begin, end == std::string_view::npos ? header.size() - begin : end - begin));
}

std::size_t parse_count(const std::string& text, std::size_t line, std::string_view what) {
  std::size_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ParseError(line, "bad " + std::string(what) + " '" + text + "'");
  }
  return value;
}

}  // namespace

const std::vector<std::size_t>& DomainDataset::require_labels() const {
  if (!labels) throw ValidationError("dataset '" + domain_id + "' is unlabeled");
  return *labels;
}

void DomainDataset::validate() const {
  if (features.rows() < 1) throw ValidationError("dataset '" + domain_id + "' is empty");
  if (num_classes < 2) throw ValidationError("dataset '" + domain_id + "' needs at least 2 classes");
  if (!features.all_finite()) throw ValidationError("dataset '" + domain_id + "' has non-finite features");
  if (labels) {
    if (labels->size() != features.rows()) throw DimensionError("label count != sample count");
    for (auto y : *labels) {
      if (y >= num_classes) throw ValidationError("label " + std::to_string(y) + " >= num_classes");
    }
  }
}

UnlabeledDataset::UnlabeledDataset(std::string domain_id, Matrix features, std::size_t num_classes)
    : domain_id_(std::move(domain_id)), features_(std::move(features)), num_classes_(num_classes) {
  if (features_.rows() < 1) throw ValidationError("target dataset is empty");
  if (!features_.all_finite()) throw ValidationError("target dataset has non-finite features");
}

UnlabeledDataset without_labels(const DomainDataset& ds) {
  return UnlabeledDataset(ds.domain_id, ds.features, ds.num_classes);
}

void SyntheticShiftConfig::validate() const {
  if (num_domains < 2) throw ValidationError("num_domains must be >= 2");
  if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
  if (feature_dim < 1) throw ValidationError("feature_dim must be >= 1");
  if (samples_per_domain < 1) throw ValidationError("samples_per_domain must be >= 1");
  if (!(class_separation > 0.0)) throw ValidationError("class_separation must be positive");
  if (!(shift_rotation_max >= 0.0)) throw ValidationError("shift_rotation_max must be >= 0");
  if (!(shift_translation_max >= 0.0)) throw ValidationError("shift_translation_max must be >= 0");
  if (!(label_noise_rate >= 0.0 && label_noise_rate < 0.5)) {
    throw ValidationError("label_noise_rate must lie in [0, 0.5)");
  }
  if (feature_dim < 2 && shift_rotation_max > 0.0) {
    throw ValidationError("rotation requires feature_dim >= 2");
  }
}

std::vector<DomainDataset> generate_domains(const SyntheticShiftConfig& cfg) {
  return generate_synthetic(cfg).domains;
}

SyntheticDomains generate_synthetic(const SyntheticShiftConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.feature_dim;
  const std::size_t n = cfg.samples_per_domain;
  const std::size_t classes = cfg.num_classes;

  Rng base_rng(mix_seed(cfg.seed, 0));
  std::vector<std::vector<double>> directions;
  if (classes <= d) {
    directions = random_orthonormal(classes, d, base_rng);
  } else {
    for (std::size_t c = 0; c < classes; ++c) directions.push_back(random_unit(d, base_rng));
  }

  // Balanced labels in a seeded order.
  std::vector<std::size_t> labels(n);
  const auto order = base_rng.permutation(n);
  for (std::size_t i = 0; i < n; ++i) labels[order[i]] = i % classes;

  Matrix base(n, d);
  for (std::size_t s = 0; s < n; ++s) {
    auto row = base.row(s);
    const auto& center = directions[labels[s]];
    for (std::size_t i = 0; i < d; ++i) row[i] = cfg.class_separation * center[i] + base_rng.normal();
  }

  SyntheticDomains out;
  out.clean_labels = labels;
  auto& domains = out.domains;
  domains.push_back({"domain0", base, labels, classes});
  for (std::size_t k = 1; k < cfg.num_domains; ++k) {
    Rng rng(mix_seed(cfg.seed, k));
    const Matrix rot = random_rotation(d, cfg.shift_rotation_max, rng);
    std::vector<double> shift(d, 0.0);
    if (cfg.shift_translation_max > 0.0) {
      const auto dir = random_unit(d, rng);
      const double magnitude = rng.uniform(0.0, cfg.shift_translation_max);
      for (std::size_t i = 0; i < d; ++i) shift[i] = magnitude * dir[i];
    }
    Matrix features(n, d);
    for (std::size_t s = 0; s < n; ++s) {
      const auto x = base.row(s);
      auto y = features.row(s);
      for (std::size_t i = 0; i < d; ++i) {
        double acc = shift[i];
        for (std::size_t j = 0; j < d; ++j) acc += rot(i, j) * x[j];
        y[i] = acc;
      }
    }
    std::vector<std::size_t> noisy = labels;
    if (cfg.label_noise_rate > 0.0) {
      for (auto& y : noisy) {
        if (rng.bernoulli(cfg.label_noise_rate)) y = static_cast<std::size_t>(rng.below(classes));
      }
    }
    domains.push_back({"domain" + std::to_string(k), std::move(features), std::move(noisy), classes});
  }
  return out;
}

std::string format_feature_text(const DomainDataset& ds) {
  ds.validate();
  if (ds.domain_id.empty() || ds.domain_id.find_first_of(" \t\n") != std::string::npos) {
    throw ValidationError("domain id must be non-empty and contain no whitespace");
  }
  std::string out;
  out += std::string(kMagic) + " " + std::string(kVersion) + " domain=" + ds.domain_id +
         " classes=" + std::to_string(ds.num_classes) + " dim=" + std::to_string(ds.dim()) + "\n";
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out += ds.labels ? std::to_string((*ds.labels)[r]) : std::string("-");
    for (double v : ds.features.row(r)) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

DomainDataset parse_feature_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  const std::string_view header = line;
  if (header.substr(0, kMagic.size()) != kMagic ||
      header.substr(kMagic.size(), kVersion.size() + 1) != " " + std::string(kVersion)) {
    throw ParseError(1, "expected header '#fuda-features v1 ...'");
  }
  DomainDataset ds;
  ds.domain_id = header_value(header, "domain", 1);
  ds.num_classes = parse_count(header_value(header, "classes", 1), 1, "class count");
  const std::size_t dim = parse_count(header_value(header, "dim", 1), 1, "dimension");
  if (ds.num_classes < 2) throw ParseError(1, "classes must be >= 2");
  if (dim < 1) throw ParseError(1, "dim must be >= 1");

  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t rows = 0;
  std::size_t unlabeled_rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != dim + 1) {
      throw ParseError(line_no, "row has " + std::to_string(fields.size() - 1) + " features, header says dim=" +
                                    std::to_string(dim));
    }
    if (fields[0] == "-") {
      ++unlabeled_rows;
    } else {
      std::size_t y = 0;
      const auto res = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), y);
      if (res.ec != std::errc() || res.ptr != fields[0].data() + fields[0].size()) {
        throw ParseError(line_no, "bad label '" + std::string(fields[0]) + "'");
      }
      if (y >= ds.num_classes) {
        throw ParseError(line_no, "label " + std::to_string(y) + " >= classes=" + std::to_string(ds.num_classes));
      }
      labels.push_back(y);
    }
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v = 0.0;
      const auto res = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), v);
      if (res.ec != std::errc() || res.ptr != fields[i].data() + fields[i].size() || !std::isfinite(v)) {
        throw ParseError(line_no, "bad feature value '" + std::string(fields[i]) + "'");
      }
      values.push_back(v);
    }
    ++rows;
    if (unlabeled_rows != 0 && unlabeled_rows != rows) {
      throw ParseError(line_no, "mixes labeled and unlabeled rows");
    }
  }
  if (rows == 0) throw ParseError(line_no, "no data rows");
  ds.features = Matrix(rows, dim);
  std::copy(values.begin(), values.end(), ds.features.values().begin());
  if (unlabeled_rows == 0) ds.labels = std::move(labels);
  return ds;
}

DomainDataset load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open feature file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_feature_text(buf.str());
}

void save_feature_file(const DomainDataset& ds, const std::filesystem::path& path) {
  const std::string text = format_feature_text(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write feature file " + path.string());
  out << text;
}

std::pair<DomainDataset, DomainDataset> split(const DomainDataset& ds, double fraction, std::uint64_t seed) {
  ds.validate();
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("split fraction must lie in (0, 1)");
  const std::size_t n = ds.size();
  const auto first_total = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  if (first_total == 0 || first_total == n) {
    throw ValidationError("split of " + std::to_string(n) + " samples at fraction " + std::to_string(fraction) +
                          " leaves one side empty");
  }

  Rng rng(seed);
  const auto order = rng.permutation(n);
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  if (!ds.labels) {
    first.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first_total));
    second.assign(order.begin() + static_cast<std::ptrdiff_t>(first_total), order.end());
  } else {
    // Largest-remainder allocation keeps every class within one sample of proportional.
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (auto i : order) by_class[(*ds.labels)[i]].push_back(i);
    std::vector<std::size_t> quota(ds.num_classes);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t allocated = 0;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      const double exact = static_cast<double>(by_class[c].size()) * static_cast<double>(first_total) /
                           static_cast<double>(n);
      quota[c] = static_cast<std::size_t>(std::floor(exact));
      allocated += quota[c];
      remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; allocated < first_total; ++k, ++allocated) ++quota[remainders[k].second];
    std::vector<std::size_t> taken(ds.num_classes, 0);
    for (auto i : order) {
      const auto c = (*ds.labels)[i];
      if (taken[c] < quota[c]) {
        first.push_back(i);
        ++taken[c];
      } else {
        second.push_back(i);
      }
    }
  }

  auto subset = [&](const std::vector<std::size_t>& idx, const std::string& suffix) {
    DomainDataset part{ds.domain_id + suffix, ds.features.gather_rows(idx), std::nullopt, ds.num_classes};
    if (ds.labels) {
      std::vector<std::size_t> y;
      y.reserve(idx.size());
      for (auto i : idx) y.push_back((*ds.labels)[i]);
      part.labels = std::move(y);
    }
    return part;
  };
  return {subset(first, ".a"), subset(second, ".b")};
}

std::uint64_t dataset_hash(const DomainDataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  feed(ds.domain_id.data(), ds.domain_id.size());
  const std::uint64_t shape[3] = {ds.size(), ds.dim(), ds.num_classes};
  feed(shape, sizeof(shape));
  for (double v : ds.features.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    feed(&bits, sizeof(bits));
  }
  if (ds.labels) {
    for (auto y : *ds.labels) {
      const std::uint64_t v = y;
      feed(&v, sizeof(v));
    }
  }
  return h;
}

}  // namespace fuda
