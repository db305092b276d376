#include <doctest.h>

#include <cmath>

#include "fuda/errors.hpp"
#include "fuda/federation.hpp"
#include "fuda/harness.hpp"
#include "oracles.hpp"

using namespace fuda;
using namespace fuda::testing;

namespace {

// Two classes split by the line x0 + 0.5 x1 = 0 with a margin of at least 0.3.
DomainDataset separable_2d(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  DomainDataset ds{"sep", Matrix(n, 2), std::vector<std::size_t>(n), 2};
  for (std::size_t i = 0; i < n; ++i) {
    double x0 = 0.0;
    double x1 = 0.0;
    do {
      x0 = rng.uniform(-2.0, 2.0);
      x1 = rng.uniform(-2.0, 2.0);
    } while (std::abs(x0 + 0.5 * x1) < 0.3);
    ds.features(i, 0) = x0;
    ds.features(i, 1) = x1;
    (*ds.labels)[i] = x0 + 0.5 * x1 > 0.0 ? 1 : 0;
  }
  return ds;
}

struct SmallFederation {
  std::vector<ClientState> clients;
  DomainDataset target;
  ArchitectureSpec arch;
};

SmallFederation small_federation(std::uint64_t seed, std::size_t domains = 4) {
  SyntheticShiftConfig cfg;
  cfg.num_domains = domains;
  cfg.samples_per_domain = 150;
  cfg.feature_dim = 6;
  cfg.num_classes = 3;
  cfg.seed = seed;
  auto generated = generate_domains(cfg);
  SmallFederation fed;
  fed.arch = {6, {8}, 3};
  fed.target = generated.back();
  TrainConfig train;
  train.epochs = 5;
  train.seed = seed;
  for (std::size_t i = 0; i + 1 < generated.size(); ++i) {
    fed.clients.emplace_back(generated[i].domain_id, generated[i]);
    fed.clients.back().train(fed.arch, train);
  }
  return fed;
}

MSPLConfig quick_mspl() {
  MSPLConfig m;
  m.train.epochs = 2;
  m.train.seed = 5;
  return m;
}

}  // namespace

TEST_CASE("train_client: separable 2-D data is fit") {
  const auto ds = separable_2d(200, 1);
  // The generating line classifies every sample, so the data are separable.
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK((ds.features(i, 0) + 0.5 * ds.features(i, 1) > 0.0) == ((*ds.labels)[i] == 1));
  }
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 3;
  const auto params = train_client(ds, {2, {8}, 2}, cfg);
  CHECK(accuracy(params, ds) >= 0.99);
}

TEST_CASE("train_client: zero epochs and determinism") {
  const auto ds = separable_2d(64, 2);
  const ArchitectureSpec arch{2, {4}, 2};
  TrainConfig cfg;
  cfg.seed = 11;
  cfg.epochs = 0;
  CHECK(train_client(ds, arch, cfg) == init_params(arch, 11));
  cfg.epochs = 3;
  CHECK(train_client(ds, arch, cfg) == train_client(ds, arch, cfg));
}

TEST_CASE("train_client: errors") {
  auto ds = separable_2d(32, 3);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_client(ds, {3, {}, 2}, cfg), DimensionError);
  CHECK_THROWS_AS(train_client(ds, {2, {}, 3}, cfg), DimensionError);
  ds.labels.reset();
  CHECK_THROWS_AS(train_client(ds, {2, {}, 2}, cfg), ValidationError);
  CHECK_THROWS_AS(ClientState("c", ds), ValidationError);
}

TEST_CASE("ClientState lifecycle") {
  ClientState client("c0", separable_2d(32, 4));
  CHECK_FALSE(client.trained());
  CHECK_THROWS_AS(client.params(), ProtocolError);
  CHECK_THROWS_AS(client.make_upload(), ProtocolError);
  TrainConfig cfg;
  cfg.epochs = 1;
  client.train({2, {}, 2}, cfg);
  CHECK(client.trained());
  const ModelParams frozen = client.params();
  CHECK_THROWS_AS(client.train({2, {}, 2}, cfg), ProtocolError);
  CHECK(client.params() == frozen);
  const Upload up = client.make_upload();
  CHECK(up.client_id == "c0");
  CHECK(up.sample_count == 32);
  CHECK(up.params == frozen);
}

TEST_CASE("Server: one upload per client and one shared architecture") {
  Rng rng(6);
  Server server(UnlabeledDataset("t", random_matrix(10, 3, rng), 2));
  const auto a = random_params({3, {4}, 2}, rng);
  server.receive({"a", a, 10});
  CHECK_THROWS_AS(server.receive({"a", a, 10}), ProtocolError);
  CHECK_THROWS_AS(server.receive({"b", random_params({3, {5}, 2}, rng), 10}), ProtocolError);
  CHECK_THROWS_AS(server.receive({"c", random_params({4, {4}, 2}, rng), 10}), ProtocolError);
  auto bad = random_params({3, {4}, 2}, rng);
  bad.layers[0].bias[0] = NAN;
  CHECK_THROWS_AS(server.receive({"d", bad, 10}), NumericError);
  CHECK(server.received().size() == 1);
  CHECK(server.trace().upload_count() == 1);

  Server empty(UnlabeledDataset("t", random_matrix(10, 3, rng), 2));
  CHECK_THROWS_AS(finish_one_shot(empty, AggregatorKind::SEA, std::nullopt), ProtocolError);
}

TEST_CASE("ProtocolTrace counting") {
  ProtocolTrace trace;
  CHECK(trace.upload_count() == 0);
  trace.record({TraceEvent::Direction::ClientToServer, "a", "upload", 5});
  trace.record({TraceEvent::Direction::ClientToServer, "b", "upload", 5});
  CHECK(trace.upload_count() == 2);
  CHECK(trace.exchanges_after_last_upload() == 0);
  trace.record({TraceEvent::Direction::ServerToClient, "a", "global", 5});
  CHECK(trace.exchanges_after_last_upload() == 1);
}

TEST_CASE("run_one_shot: single client with uniform weights returns that client") {
  auto fed = small_federation(1, 2);
  REQUIRE(fed.clients.size() == 1);
  const auto result = run_one_shot(fed.clients, without_labels(fed.target), AggregatorKind::UniformAverage, std::nullopt);
  CHECK(result.global == fed.clients[0].params());
  CHECK(result.weights.values() == std::vector<double>{1.0});
  CHECK_FALSE(result.pseudo_labels.has_value());
}

TEST_CASE("run_one_shot: identical clients give that client's parameters") {
  auto fed = small_federation(2);
  std::vector<ClientState> same;
  for (int i = 0; i < 3; ++i) same.emplace_back("c" + std::to_string(i), fed.clients[0].dataset());
  TrainConfig train;
  train.epochs = 3;
  train.seed = 9;
  for (auto& c : same) c.train(fed.arch, train);
  for (auto kind : {AggregatorKind::UniformAverage, AggregatorKind::SEA}) {
    const auto result = run_one_shot(same, without_labels(fed.target), kind, std::nullopt);
    const auto a = flatten(result.global);
    const auto b = flatten(same[0].params());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  }
}

TEST_CASE("run_one_shot: exactly M uploads and nothing afterwards") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto fed = small_federation(seed);
    for (auto kind : {AggregatorKind::UniformAverage, AggregatorKind::SampleCount, AggregatorKind::EntropyUnscaled,
                      AggregatorKind::SEA}) {
      const auto result = run_one_shot(fed.clients, without_labels(fed.target), kind, quick_mspl());
      CHECK(result.trace.upload_count() == fed.clients.size());
      CHECK(result.trace.events().size() == fed.clients.size());
      CHECK(result.trace.exchanges_after_last_upload() == 0);
      CHECK(result.report.uploads == fed.clients.size());
      CHECK(result.report.exchanges_after_upload == 0);
      CHECK(result.global.architecture() == fed.arch);
      for (const auto& e : result.trace.events()) CHECK(e.payload_values == fed.clients[0].params().parameter_count());
    }
  }
}

TEST_CASE("run_one_shot: client order does not change the global model") {
  auto fed = small_federation(4);
  const auto target = without_labels(fed.target);
  const auto forward_order = run_one_shot(fed.clients, target, AggregatorKind::SEA, std::nullopt);
  std::vector<ClientState> reversed(fed.clients.rbegin(), fed.clients.rend());
  const auto backward_order = run_one_shot(reversed, target, AggregatorKind::SEA, std::nullopt);
  const auto a = flatten(forward_order.global);
  const auto b = flatten(backward_order.global);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("run_one_shot: works on a target that never had labels") {
  auto fed = small_federation(5);
  // Features only; there is nothing the pipeline could read as ground truth.
  const UnlabeledDataset target("blind", fed.target.features, fed.target.num_classes);
  const auto result = run_one_shot(fed.clients, target, AggregatorKind::SEA, quick_mspl());
  CHECK(result.global.all_finite());
  REQUIRE(result.pseudo_labels.has_value());
  CHECK(result.pseudo_labels->size() == target.size());
  CHECK(result.pseudo_labels->source_count == fed.clients.size());
  for (const auto& c : result.report.clients) CHECK_FALSE(c.target_accuracy.has_value());
  CHECK_FALSE(result.report.accuracy_pre_adaptation.has_value());
}

TEST_CASE("run_one_shot: pseudo labels come from the source models") {
  auto fed = small_federation(6);
  const auto target = without_labels(fed.target);
  const auto result = run_one_shot(fed.clients, target, AggregatorKind::SEA, quick_mspl());
  std::vector<ModelParams> sources;
  for (const auto& c : fed.clients) sources.push_back(c.params());
  CHECK(result.pseudo_labels->probs == generate_pseudo_labels(sources, target).probs);
  CHECK(result.global == adapt_global(result.aggregated, target, *result.pseudo_labels, quick_mspl()));
}

TEST_CASE("run_one_shot: report carries entropies and both weight sets") {
  auto fed = small_federation(7);
  const auto target = without_labels(fed.target);
  const auto result = run_one_shot(fed.clients, target, AggregatorKind::SEA, std::nullopt);
  REQUIRE(result.report.clients.size() == fed.clients.size());
  for (std::size_t i = 0; i < fed.clients.size(); ++i) {
    const auto& row = result.report.clients[i];
    CHECK(row.client_id == fed.clients[i].id());
    CHECK(row.mean_entropy == mean_entropy(fed.clients[i].params(), target));
    CHECK(row.weight_final == result.weights.per_client[i].weight);
    CHECK(row.sample_count == 150);
  }
  CHECK(result.report.aggregator == "sea");
  CHECK_THROWS_AS(run_one_shot(std::span<const ClientState>{}, target, AggregatorKind::SEA, std::nullopt),
                  ProtocolError);
}
