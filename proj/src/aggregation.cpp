#include "fuda/aggregation.hpp"

#include <algorithm>
#include <cmath>

#include "fuda/errors.hpp"

namespace fuda {

std::string aggregator_name(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::UniformAverage: return "uniform";
    case AggregatorKind::SampleCount: return "fedavg";
    case AggregatorKind::EntropyUnscaled: return "entropy";
    case AggregatorKind::SEA: return "sea";
  }
  return "?";
}

AggregatorKind parse_aggregator(std::string_view name) {
  if (name == "uniform") return AggregatorKind::UniformAverage;
  if (name == "fedavg") return AggregatorKind::SampleCount;
  if (name == "entropy") return AggregatorKind::EntropyUnscaled;
  if (name == "sea") return AggregatorKind::SEA;
  throw ValidationError("unknown aggregator '" + std::string(name) + "' (expected uniform|fedavg|entropy|sea)");
}

std::vector<double> AggregationWeights::values() const {
  std::vector<double> out;
  out.reserve(per_client.size());
  for (const auto& cw : per_client) out.push_back(cw.weight);
  return out;
}

double prediction_entropy(std::span<const double> probs) {
  if (probs.empty()) throw ValidationError("entropy of an empty distribution");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ValidationError("distribution has a negative or NaN entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("distribution sums to " + std::to_string(sum));
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(std::max(p, kProbabilityFloor));
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(probs.size())));
}

double mean_entropy(const ModelParams& params, const UnlabeledDataset& target) {
  if (target.size() == 0) throw ValidationError("mean entropy over an empty target");
  const Matrix probs = softmax_rows(forward(params, target.features()));
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) total += prediction_entropy(probs.row(r));
  return total / static_cast<double>(probs.rows());
}

AggregationWeights compute_weights(const EntropyStats& stats, std::span<const std::size_t> sample_counts,
                                   AggregatorKind kind) {
  const std::size_t m = stats.per_client.size();
  if (m == 0) throw ValidationError("no clients to weight");

  std::vector<double> raw(m);
  switch (kind) {
    case AggregatorKind::UniformAverage:
      std::fill(raw.begin(), raw.end(), 1.0);
      break;
    case AggregatorKind::SampleCount:
      if (sample_counts.size() != m) throw DimensionError("sample count list length != client count");
      for (std::size_t i = 0; i < m; ++i) {
        if (sample_counts[i] == 0) throw ValidationError("sample counts must be positive");
        raw[i] = static_cast<double>(sample_counts[i]);
      }
      break;
    case AggregatorKind::EntropyUnscaled:
    case AggregatorKind::SEA: {
      for (std::size_t i = 0; i < m; ++i) {
        const double h = stats.per_client[i].mean_entropy;
        if (!std::isfinite(h) || h < 0.0) {
          throw ValidationError("client '" + stats.per_client[i].client_id + "' has invalid mean entropy");
        }
        raw[i] = 1.0 / std::max(h, kEntropyFloor);
      }
      if (kind == AggregatorKind::SEA) {
        double mean = 0.0;
        for (double w : raw) mean += w;
        mean /= static_cast<double>(m);
        for (double& w : raw) {
          const double ratio = w / mean;
          w = ratio * ratio;
        }
      }
      break;
    }
  }

  double total = 0.0;
  for (double w : raw) total += w;
  AggregationWeights out;
  out.strategy = kind;
  for (std::size_t i = 0; i < m; ++i) out.per_client.push_back({stats.per_client[i].client_id, raw[i] / total});
  return out;
}

ModelParams aggregate(std::span<const ModelParams> models, const AggregationWeights& weights) {
  if (models.empty()) throw ValidationError("nothing to aggregate");
  if (weights.per_client.size() != models.size()) throw DimensionError("weight count != model count");
  const ArchitectureSpec arch = models.front().architecture();
  for (const auto& model : models) {
    if (model.architecture() != arch) throw DimensionError("models do not share one architecture");
  }
  double total = 0.0;
  for (const auto& cw : weights.per_client) {
    if (!(cw.weight >= 0.0)) throw ValidationError("aggregation weights must be nonnegative");
    total += cw.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("aggregation weights sum to " + std::to_string(total));

  ModelParams out = zeros_like(models.front());
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto w_out = out.layers[l].weight.values();
    auto b_out = std::span<double>(out.layers[l].bias);
    for (std::size_t k = 0; k < models.size(); ++k) {
      const double w = weights.per_client[k].weight;
      const auto w_in = models[k].layers[l].weight.values();
      const auto& b_in = models[k].layers[l].bias;
      for (std::size_t i = 0; i < w_out.size(); ++i) w_out[i] += w * w_in[i];
      for (std::size_t i = 0; i < b_out.size(); ++i) b_out[i] += w * b_in[i];
    }
  }
  return out;
}

}  // namespace fuda
