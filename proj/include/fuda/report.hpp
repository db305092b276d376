#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuda/mspl.hpp"

namespace fuda {

struct ClientReport {
  std::string client_id;
  double mean_entropy = 0.0;
  double weight_unscaled = 0.0;  // normalized inverse-entropy weight
  double weight_final = 0.0;     // weight actually used by the run's aggregator
  std::size_t sample_count = 0;
  std::optional<double> target_accuracy;
};

/// Outcome of one one-shot run. Accuracy fields are filled only when evaluation
/// labels are supplied out-of-band.
struct RunReport {
  std::uint64_t seed = 0;
  std::string aggregator;
  std::optional<MSPLConfig> adaptation;
  std::vector<ClientReport> clients;
  std::size_t uploads = 0;
  std::size_t exchanges_after_upload = 0;
  std::optional<double> accuracy_pre_adaptation;
  std::optional<double> accuracy_post_adaptation;
  std::optional<double> entropy_accuracy_correlation;
  std::optional<std::uint64_t> target_hash;
  nlohmann::json config;  // echo of the experiment config, null when not run from one
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
nlohmann::json mspl_config_to_json(const MSPLConfig& cfg);

nlohmann::json report_to_json(const RunReport& report);
/// Pretty JSON, doubles at full round-trip precision, trailing newline.
std::string report_json(const RunReport& report);
/// Long format `section,name,field,value` with 6 significant digits.
std::string report_csv(const RunReport& report);

/// 6-significant-digit rendering used by every CSV emitter.
std::string format_csv_number(double value);

}  // namespace fuda
