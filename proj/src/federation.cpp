#include "fuda/federation.hpp"

#include <algorithm>

#include "fuda/errors.hpp"

namespace fuda {

std::size_t ProtocolTrace::upload_count() const {
  return static_cast<std::size_t>(std::count_if(events_.begin(), events_.end(), [](const TraceEvent& e) {
    return e.direction == TraceEvent::Direction::ClientToServer && e.message == "upload";
  }));
}

std::size_t ProtocolTrace::exchanges_after_last_upload() const {
  for (std::size_t i = events_.size(); i-- > 0;) {
    if (events_[i].direction == TraceEvent::Direction::ClientToServer && events_[i].message == "upload") {
      return events_.size() - i - 1;
    }
  }
  return events_.size();
}

ModelParams train_client(const DomainDataset& dataset, const ArchitectureSpec& arch, const TrainConfig& cfg) {
  arch.validate();
  dataset.validate();
  const auto& labels = dataset.require_labels();
  if (dataset.num_classes != arch.num_classes) {
    throw DimensionError("dataset has " + std::to_string(dataset.num_classes) + " classes, architecture " +
                         std::to_string(arch.num_classes));
  }
  if (dataset.dim() != arch.input_dim) throw DimensionError("dataset feature dim != architecture input_dim");
  return train(init_params(arch, cfg.seed), dataset.features, labels, LossKind::hard_ce(), cfg).params;
}

ClientState::ClientState(std::string client_id, DomainDataset dataset)
    : id_(std::move(client_id)), dataset_(std::move(dataset)) {
  dataset_.validate();
  dataset_.require_labels();
}

void ClientState::train(const ArchitectureSpec& arch, const TrainConfig& cfg) {
  if (params_) throw ProtocolError("client '" + id_ + "' is already trained");
  params_ = train_client(dataset_, arch, cfg);
}

const ModelParams& ClientState::params() const {
  if (!params_) throw ProtocolError("client '" + id_ + "' has not been trained");
  return *params_;
}

Upload ClientState::make_upload() const { return {id_, params(), sample_count()}; }

void Server::receive(Upload upload) {
  for (const auto& prior : received_) {
    if (prior.client_id == upload.client_id) {
      throw ProtocolError("duplicate upload from client '" + upload.client_id + "'");
    }
  }
  if (!upload.params.all_finite()) throw NumericError("client '" + upload.client_id + "' uploaded non-finite parameters");
  const ArchitectureSpec arch = upload.params.architecture();
  if (!received_.empty() && received_.front().params.architecture() != arch) {
    throw ProtocolError("client '" + upload.client_id + "' uses a different architecture");
  }
  if (arch.input_dim != target_.dim() || arch.num_classes != target_.num_classes()) {
    throw ProtocolError("client '" + upload.client_id + "' architecture does not fit the target domain");
  }
  trace_.record({TraceEvent::Direction::ClientToServer, upload.client_id, "upload", upload.params.parameter_count()});
  received_.push_back(std::move(upload));
}

std::vector<ModelParams> Server::models() const {
  std::vector<ModelParams> out;
  out.reserve(received_.size());
  for (const auto& u : received_) out.push_back(u.params);
  return out;
}

std::vector<std::size_t> Server::sample_counts() const {
  std::vector<std::size_t> out;
  out.reserve(received_.size());
  for (const auto& u : received_) out.push_back(u.sample_count);
  return out;
}

EntropyStats Server::entropy_stats() const {
  EntropyStats stats;
  for (const auto& u : received_) stats.per_client.push_back({u.client_id, mean_entropy(u.params, target_)});
  return stats;
}

OneShotResult finish_one_shot(const Server& server, AggregatorKind aggregator, const std::optional<MSPLConfig>& adapt) {
  if (server.received().empty()) throw ProtocolError("no client uploads received");
  const EntropyStats stats = server.entropy_stats();
  const auto counts = server.sample_counts();

  OneShotResult result;
  result.source_models = server.models();
  result.weights = compute_weights(stats, counts, aggregator);
  const AggregationWeights unscaled = compute_weights(stats, counts, AggregatorKind::EntropyUnscaled);
  result.aggregated = aggregate(result.source_models, result.weights);
  result.global = result.aggregated;
  if (adapt) {
    // Pseudo labels come from the original source models, not the aggregate.
    result.pseudo_labels = generate_pseudo_labels(result.source_models, server.target());
    result.global = adapt_global(result.aggregated, server.target(), *result.pseudo_labels, *adapt);
  }
  result.trace = server.trace();

  RunReport& report = result.report;
  report.aggregator = aggregator_name(aggregator);
  report.adaptation = adapt;
  for (std::size_t i = 0; i < stats.per_client.size(); ++i) {
    report.clients.push_back({stats.per_client[i].client_id, stats.per_client[i].mean_entropy,
                              unscaled.per_client[i].weight, result.weights.per_client[i].weight, counts[i],
                              std::nullopt});
  }
  report.uploads = result.trace.upload_count();
  report.exchanges_after_upload = result.trace.exchanges_after_last_upload();
  return result;
}

OneShotResult run_one_shot(std::span<const ClientState> clients, const UnlabeledDataset& target,
                           AggregatorKind aggregator, const std::optional<MSPLConfig>& adapt) {
  if (clients.empty()) throw ProtocolError("run_one_shot needs at least one client");
  Server server(target);
  for (const auto& client : clients) server.receive(client.make_upload());
  return finish_one_shot(server, aggregator, adapt);
}

}  // namespace fuda
