#pragma once

// One-shot federation: clients train locally and upload their trained
// bottleneck and head once; the server aggregates and optionally adapts.
// Everything runs in-process; the protocol trace records each message.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuda/aggregation.hpp"
#include "fuda/data.hpp"
#include "fuda/mspl.hpp"
#include "fuda/nn.hpp"
#include "fuda/report.hpp"

namespace fuda {

struct Upload {
  std::string client_id;
  ModelParams params;
  std::size_t sample_count = 0;
};

struct TraceEvent {
  enum class Direction { ClientToServer, ServerToClient };

  Direction direction = Direction::ClientToServer;
  std::string client_id;
  std::string message;  // "upload"
  std::size_t payload_values = 0;
};

class ProtocolTrace {
 public:
  void record(TraceEvent event) { events_.push_back(std::move(event)); }
  const std::vector<TraceEvent>& events() const noexcept { return events_; }

  std::size_t upload_count() const;
  /// Events of any kind recorded after the last upload.
  std::size_t exchanges_after_last_upload() const;

 private:
  std::vector<TraceEvent> events_;
};

/// Local training on a labeled source domain with hard-label cross-entropy.
/// Initialization is drawn from cfg.seed, so clients sharing a TrainConfig share
/// their starting point.
ModelParams train_client(const DomainDataset& dataset, const ArchitectureSpec& arch, const TrainConfig& cfg);

class ClientState {
 public:
  ClientState(std::string client_id, DomainDataset dataset);

  const std::string& id() const noexcept { return id_; }
  const DomainDataset& dataset() const noexcept { return dataset_; }
  std::size_t sample_count() const noexcept { return dataset_.size(); }

  bool trained() const noexcept { return params_.has_value(); }
  /// Trains once; the parameters are frozen afterwards.
  void train(const ArchitectureSpec& arch, const TrainConfig& cfg);
  const ModelParams& params() const;

  Upload make_upload() const;

 private:
  std::string id_;
  DomainDataset dataset_;
  std::optional<ModelParams> params_;
};

class Server {
 public:
  explicit Server(UnlabeledDataset target) : target_(std::move(target)) {}

  /// Accepts exactly one upload per client; all uploads must share one architecture.
  void receive(Upload upload);

  const std::vector<Upload>& received() const noexcept { return received_; }
  const ProtocolTrace& trace() const noexcept { return trace_; }
  const UnlabeledDataset& target() const noexcept { return target_; }

  std::vector<ModelParams> models() const;
  std::vector<std::size_t> sample_counts() const;
  EntropyStats entropy_stats() const;

 private:
  UnlabeledDataset target_;
  std::vector<Upload> received_;
  ProtocolTrace trace_;
};

struct OneShotResult {
  ModelParams global;      // final model (adapted when MSPL ran)
  ModelParams aggregated;  // global model straight after aggregation
  AggregationWeights weights;
  std::optional<PseudoLabelSet> pseudo_labels;
  std::vector<ModelParams> source_models;
  ProtocolTrace trace;
  RunReport report;
};

/// Single upload round, aggregation, then optional MSPL refinement.
OneShotResult run_one_shot(std::span<const ClientState> clients, const UnlabeledDataset& target,
                           AggregatorKind aggregator, const std::optional<MSPLConfig>& adapt);

/// Server-side half of run_one_shot for uploads that already arrived.
OneShotResult finish_one_shot(const Server& server, AggregatorKind aggregator, const std::optional<MSPLConfig>& adapt);

}  // namespace fuda
