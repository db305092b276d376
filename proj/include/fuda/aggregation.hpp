#pragma once

// Client confidence on the target domain and weighted parameter aggregation.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fuda/data.hpp"
#include "fuda/nn.hpp"

namespace fuda {

/// Mean entropies are clamped to at least this value before inversion.
inline constexpr double kEntropyFloor = 1e-6;

enum class AggregatorKind { UniformAverage, SampleCount, EntropyUnscaled, SEA };

/// CLI names: uniform, fedavg, entropy, sea.
std::string aggregator_name(AggregatorKind kind);
AggregatorKind parse_aggregator(std::string_view name);

struct ClientEntropy {
  std::string client_id;
  double mean_entropy = 0.0;
};

struct EntropyStats {
  std::vector<ClientEntropy> per_client;
};

struct ClientWeight {
  std::string client_id;
  double weight = 0.0;
};

struct AggregationWeights {
  std::vector<ClientWeight> per_client;
  AggregatorKind strategy = AggregatorKind::UniformAverage;

  std::vector<double> values() const;
};

/// -sum p ln p with the probability floor inside the log; in [0, ln C].
double prediction_entropy(std::span<const double> probs);

/// Average prediction entropy of the model's softmax outputs over the target.
double mean_entropy(const ModelParams& params, const UnlabeledDataset& target);

/// Weights for each aggregation strategy. SEA: w' = 1/H, scaled (w'/mean(w'))^2,
/// then normalized. `sample_counts` is only read by SampleCount.
AggregationWeights compute_weights(const EntropyStats& stats, std::span<const std::size_t> sample_counts,
                                   AggregatorKind kind);

/// Element-wise sum_i w_i * model_i over every weight matrix and bias.
ModelParams aggregate(std::span<const ModelParams> models, const AggregationWeights& weights);

}  // namespace fuda
