#include "fuda/report.hpp"

#include <cstdio>

namespace fuda {
namespace {

template <typename T>
nlohmann::json optional_json(const std::optional<T>& value) {
  return value ? nlohmann::json(*value) : nlohmann::json(nullptr);
}

void csv_line(std::string& out, const std::string& section, const std::string& name, const std::string& field,
              const std::string& value) {
  out += section + "," + name + "," + field + "," + value + "\n";
}

}  // namespace

std::string format_csv_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"momentum", cfg.momentum},
          {"warmup_fraction", cfg.warmup_fraction},
          {"seed", cfg.seed}};
}

nlohmann::json mspl_config_to_json(const MSPLConfig& cfg) {
  return {{"epsilon", cfg.epsilon}, {"loss", cfg.loss_kind().name()}, {"train", train_config_to_json(cfg.train)}};
}

nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& c : report.clients) {
    clients.push_back({{"id", c.client_id},
                       {"mean_entropy", c.mean_entropy},
                       {"weight_unscaled", c.weight_unscaled},
                       {"weight_final", c.weight_final},
                       {"sample_count", c.sample_count},
                       {"target_accuracy", optional_json(c.target_accuracy)}});
  }
  return {{"seed", report.seed},
          {"aggregator", report.aggregator},
          {"adaptation", report.adaptation ? mspl_config_to_json(*report.adaptation) : nlohmann::json(nullptr)},
          {"clients", clients},
          {"protocol", {{"uploads", report.uploads}, {"exchanges_after_upload", report.exchanges_after_upload}}},
          {"metrics",
           {{"accuracy_pre_adaptation", optional_json(report.accuracy_pre_adaptation)},
            {"accuracy_post_adaptation", optional_json(report.accuracy_post_adaptation)},
            {"entropy_accuracy_correlation", optional_json(report.entropy_accuracy_correlation)}}},
          {"target_hash", optional_json(report.target_hash)},
          {"config", report.config}};
}

std::string report_json(const RunReport& report) { return report_to_json(report).dump(2) + "\n"; }

std::string report_csv(const RunReport& report) {
  std::string out = "section,name,field,value\n";
  csv_line(out, "run", "run", "seed", std::to_string(report.seed));
  csv_line(out, "run", "run", "aggregator", report.aggregator);
  if (report.adaptation) {
    csv_line(out, "run", "run", "adaptation_loss", report.adaptation->loss_kind().name());
    csv_line(out, "run", "run", "epsilon", format_csv_number(report.adaptation->epsilon));
  }
  for (const auto& c : report.clients) {
    csv_line(out, "client", c.client_id, "mean_entropy", format_csv_number(c.mean_entropy));
    csv_line(out, "client", c.client_id, "weight_unscaled", format_csv_number(c.weight_unscaled));
    csv_line(out, "client", c.client_id, "weight_final", format_csv_number(c.weight_final));
    csv_line(out, "client", c.client_id, "sample_count", std::to_string(c.sample_count));
    if (c.target_accuracy) {
      csv_line(out, "client", c.client_id, "target_accuracy", format_csv_number(*c.target_accuracy));
    }
  }
  csv_line(out, "protocol", "run", "uploads", std::to_string(report.uploads));
  csv_line(out, "protocol", "run", "exchanges_after_upload", std::to_string(report.exchanges_after_upload));
  auto metric = [&](const char* field, const std::optional<double>& v) {
    if (v) csv_line(out, "metric", "run", field, format_csv_number(*v));
  };
  metric("accuracy_pre_adaptation", report.accuracy_pre_adaptation);
  metric("accuracy_post_adaptation", report.accuracy_post_adaptation);
  metric("entropy_accuracy_correlation", report.entropy_accuracy_correlation);
  return out;
}

}  // namespace fuda
