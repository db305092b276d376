#pragma once

// Experiment driver: seeded end-to-end runs, ablations, the epsilon sweep and
// their CSV / JSON emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fuda/aggregation.hpp"
#include "fuda/data.hpp"
#include "fuda/federation.hpp"
#include "fuda/mspl.hpp"
#include "fuda/nn.hpp"
#include "fuda/report.hpp"

namespace fuda {

/// Fraction of samples whose argmax logit (lowest index on ties) matches the label.
double accuracy(const ModelParams& params, const DomainDataset& labeled);

/// Pearson correlation; needs >= 3 pairs and nonzero variance in both coordinates.
double pearson_correlation(std::span<const double> x, std::span<const double> y);

/// Correlation of per-client (mean entropy, target accuracy) pairs.
double entropy_accuracy_correlation(std::span<const ClientReport> rows);

struct FeatureFileSource {
  std::vector<std::filesystem::path> domains;

  friend bool operator==(const FeatureFileSource&, const FeatureFileSource&) = default;
};

// Standard-benchmark epoch budgets. The default recipe (20 client / 10 adaptation
// epochs) assumes domains of roughly 3,900 samples; on 600-sample domains these
// counts give about the same number of SGD steps at batch size 32.
inline constexpr std::size_t kStandardClientEpochs = 130;
inline constexpr std::size_t kStandardAdaptEpochs = 65;

inline TrainConfig standard_client_train() {
  TrainConfig cfg = TrainConfig::client_default();
  cfg.epochs = kStandardClientEpochs;
  return cfg;
}

inline MSPLConfig standard_mspl() {
  MSPLConfig cfg;
  cfg.train.epochs = kStandardAdaptEpochs;
  return cfg;
}

struct ExperimentConfig {
  std::variant<SyntheticShiftConfig, FeatureFileSource> data = SyntheticShiftConfig::standard();
  std::optional<std::size_t> target_domain;  // defaults to the last domain
  // input_dim / num_classes of 0 are filled in from the data.
  ArchitectureSpec arch{0, {64, 32}, 0};
  TrainConfig client_train = standard_client_train();
  AggregatorKind aggregator = AggregatorKind::SEA;
  std::optional<MSPLConfig> mspl = standard_mspl();
  std::vector<std::uint64_t> eval_seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  /// Standard synthetic benchmark with the standard-benchmark epoch budgets.
  static ExperimentConfig standard() { return {}; }

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Data and trained source clients for one evaluation seed. Every variant
/// evaluated from the same context sees bit-identical data and client models.
struct SeedContext {
  std::uint64_t seed = 0;
  std::vector<DomainDataset> domains;
  std::size_t target_index = 0;
  ArchitectureSpec arch;
  TrainConfig client_train;
  std::optional<MSPLConfig> mspl;
  std::vector<ClientState> clients;
  std::uint64_t data_hash = 0;

  const DomainDataset& target() const { return domains.at(target_index); }
};

/// Loads or generates the domains for `seed` (no training).
std::vector<DomainDataset> load_domains(const ExperimentConfig& cfg, std::uint64_t seed);
std::size_t resolve_target_index(const ExperimentConfig& cfg, std::size_t domain_count);
ArchitectureSpec resolve_architecture(const ExperimentConfig& cfg, const DomainDataset& sample);
/// Per-seed training configs: the base seeds mixed with the evaluation seed.
TrainConfig seeded_client_train(const ExperimentConfig& cfg, std::uint64_t seed);
std::optional<MSPLConfig> seeded_mspl(const ExperimentConfig& cfg, const std::optional<MSPLConfig>& mspl,
                                      std::uint64_t seed);

SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Adds target accuracies (per client, pre and post adaptation) and the
/// entropy-accuracy correlation using the held-out target labels.
void attach_evaluation(RunReport& report, const OneShotResult& result, const DomainDataset& labeled_target);

OneShotResult run_variant(const SeedContext& ctx, AggregatorKind aggregator, const std::optional<MSPLConfig>& adapt);

/// Full pipeline for one seed with the configured aggregator and adaptation.
RunReport run_experiment(const ExperimentConfig& cfg, std::uint64_t seed);

struct TableRow {
  std::string label;
  std::vector<double> per_seed;
  std::vector<std::uint64_t> data_hashes;  // one per seed
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for one seed
};

struct ResultTable {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<TableRow> rows;

  const TableRow& row(const std::string& label) const;
};

/// Rows: sea+mspl, sea+mspl-ce, sea, entropy, uniform.
ResultTable run_ablation(const ExperimentConfig& cfg);
/// Rows: uniform, fedavg, entropy, sea (no adaptation).
ResultTable run_aggregator_comparison(const ExperimentConfig& cfg);
/// Rows: ce, softce, ssce; aggregation with the configured aggregator.
ResultTable run_loss_comparison(const ExperimentConfig& cfg);
/// One SSCE row per epsilon, labeled "eps=<value>".
ResultTable run_epsilon_sweep(const ExperimentConfig& cfg, std::span<const double> epsilons);

/// Mean and standard deviation of each row, computed from per_seed.
void finalize_rows(ResultTable& table);

std::string table_csv(const ResultTable& table);
nlohmann::json table_to_json(const ResultTable& table);

}  // namespace fuda
