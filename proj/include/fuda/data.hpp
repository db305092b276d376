#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fuda/matrix.hpp"

namespace fuda {

/// Feature vectors of one domain, optionally labeled.
struct DomainDataset {
  std::string domain_id;
  Matrix features;                                 // N x d
  std::optional<std::vector<std::size_t>> labels;  // N entries in [0, C) when present
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
  bool labeled() const noexcept { return labels.has_value(); }
  /// Throws ValidationError when labels are missing.
  const std::vector<std::size_t>& require_labels() const;

  void validate() const;

  friend bool operator==(const DomainDataset&, const DomainDataset&) = default;
};

/// A dataset with no label storage at all. Adaptation and aggregation code paths
/// only accept this type, so target ground truth cannot leak into them.
class UnlabeledDataset {
 public:
  UnlabeledDataset(std::string domain_id, Matrix features, std::size_t num_classes);

  const std::string& domain_id() const noexcept { return domain_id_; }
  const Matrix& features() const noexcept { return features_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return features_.rows(); }
  std::size_t dim() const noexcept { return features_.cols(); }

 private:
  std::string domain_id_;
  Matrix features_;
  std::size_t num_classes_;
};

UnlabeledDataset without_labels(const DomainDataset& ds);

struct SyntheticShiftConfig {
  std::size_t num_domains = 4;
  std::size_t num_classes = 5;
  std::size_t feature_dim = 16;
  std::size_t samples_per_domain = 600;
  double class_separation = 4.0;
  double shift_rotation_max = 0.6;  // radians
  double shift_translation_max = 1.0;
  double label_noise_rate = 0.05;
  std::uint64_t seed = 0;

  /// The standard desk-scale benchmark.
  static SyntheticShiftConfig standard() { return {}; }

  void validate() const;

  friend bool operator==(const SyntheticShiftConfig&, const SyntheticShiftConfig&) = default;
};

struct SyntheticDomains {
  std::vector<DomainDataset> domains;
  std::vector<std::size_t> clean_labels;  // pre-noise labels, shared by every domain
};

/// Domain 0 holds C unit-covariance Gaussian clusters around
/// class_separation * (seeded orthonormal directions). Domain k >= 1 reuses the same
/// base draw, rotated by shift_rotation_max radians in seeded random orthogonal
/// planes, translated by a random vector of norm <= shift_translation_max, and with
/// each label resampled uniformly with probability label_noise_rate. Domain ids are
/// "domain0", "domain1", ...
SyntheticDomains generate_synthetic(const SyntheticShiftConfig& cfg);
std::vector<DomainDataset> generate_domains(const SyntheticShiftConfig& cfg);

/// Header line: `#fuda-features v1 domain=<id> classes=<C> dim=<d>`.
DomainDataset load_feature_file(const std::filesystem::path& path);
DomainDataset parse_feature_text(const std::string& text);
void save_feature_file(const DomainDataset& ds, const std::filesystem::path& path);
std::string format_feature_text(const DomainDataset& ds);

/// Seeded split, stratified by class when labels are present. The first part
/// receives round(N * fraction) samples.
std::pair<DomainDataset, DomainDataset> split(const DomainDataset& ds, double fraction,
                                              std::uint64_t seed);

/// FNV-1a over domain id, shape, feature bytes and labels.
std::uint64_t dataset_hash(const DomainDataset& ds);

}  // namespace fuda
