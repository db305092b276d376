#include "fuda/mspl.hpp"

#include "fuda/aggregation.hpp"
#include "fuda/errors.hpp"

namespace fuda {

std::vector<std::size_t> PseudoLabelSet::hard_labels() const {
  std::vector<std::size_t> labels;
  labels.reserve(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) labels.push_back(argmax(probs.row(r)));
  return labels;
}

LossKind MSPLConfig::loss_kind() const {
  switch (loss) {
    case LossKind::Tag::HardCE: return LossKind::hard_ce();
    case LossKind::Tag::SoftCE: return LossKind::soft_ce();
    case LossKind::Tag::SSCE: return LossKind::ssce(epsilon);
  }
  return LossKind::ssce(epsilon);
}

void MSPLConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0, 1]");
  train.validate();
}

PseudoLabelSet generate_pseudo_labels(std::span<const ModelParams> models, const UnlabeledDataset& target) {
  if (models.empty()) throw ValidationError("pseudo labeling needs at least one source model");
  const ArchitectureSpec arch = models.front().architecture();
  for (const auto& model : models) {
    if (model.architecture() != arch) throw DimensionError("source models do not share one architecture");
  }
  Matrix mean_logits;
  for (const auto& model : models) {
    const Matrix logits = forward(model, target.features());
    if (mean_logits.empty()) {
      mean_logits = logits;
    } else {
      auto acc = mean_logits.values();
      const auto add = logits.values();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
    }
  }
  const double inv_m = 1.0 / static_cast<double>(models.size());
  for (double& v : mean_logits.values()) v *= inv_m;
  return {softmax_rows(mean_logits), models.size()};
}

PseudoLabelSet smooth_labels(const PseudoLabelSet& pl, double epsilon) {
  return {smooth_rows(pl.probs, epsilon), pl.source_count};
}

std::vector<double> entropy_increase_of_smoothing(const PseudoLabelSet& pl, double epsilon) {
  const PseudoLabelSet smoothed = smooth_labels(pl, epsilon);
  std::vector<double> delta;
  delta.reserve(pl.size());
  for (std::size_t r = 0; r < pl.size(); ++r) {
    delta.push_back(prediction_entropy(smoothed.probs.row(r)) - prediction_entropy(pl.probs.row(r)));
  }
  return delta;
}

ModelParams adapt_global(const ModelParams& global, const UnlabeledDataset& target, const PseudoLabelSet& pl,
                         const MSPLConfig& cfg) {
  cfg.validate();
  if (pl.size() != target.size()) {
    throw ValidationError("pseudo label count " + std::to_string(pl.size()) + " != target size " +
                          std::to_string(target.size()));
  }
  const LossKind kind = cfg.loss_kind();
  const Targets targets = kind.tag == LossKind::Tag::HardCE ? Targets(pl.hard_labels()) : Targets(pl.probs);
  return train(global, target.features(), targets, kind, cfg.train).params;
}

}  // namespace fuda
