#pragma once

// Multi-source pseudo labeling: averaged source-model predictions on the
// unlabeled target become soft labels for fine-tuning the global model.

#include <cstddef>
#include <span>
#include <vector>

#include "fuda/data.hpp"
#include "fuda/nn.hpp"

namespace fuda {

struct PseudoLabelSet {
  Matrix probs;  // one probability row per target sample
  std::size_t source_count = 0;

  std::size_t size() const noexcept { return probs.rows(); }
  /// argmax per row, lowest index on ties.
  std::vector<std::size_t> hard_labels() const;
};

struct MSPLConfig {
  double epsilon = 0.9;
  TrainConfig train = TrainConfig::adaptation_default();
  LossKind::Tag loss = LossKind::Tag::SSCE;

  /// The loss used for adaptation; SSCE carries `epsilon`.
  LossKind loss_kind() const;
  void validate() const;

  friend bool operator==(const MSPLConfig&, const MSPLConfig&) = default;
};

/// Mean of the source models' logits per sample, then softmax.
PseudoLabelSet generate_pseudo_labels(std::span<const ModelParams> models, const UnlabeledDataset& target);

PseudoLabelSet smooth_labels(const PseudoLabelSet& pl, double epsilon);

/// H(smoothed) - H(original) per sample.
std::vector<double> entropy_increase_of_smoothing(const PseudoLabelSet& pl, double epsilon);

/// Fine-tunes `global` on the pseudo labels. SSCE smooths inside the loss, so `pl`
/// must be the unsmoothed set; HardCE trains on the argmax labels.
ModelParams adapt_global(const ModelParams& global, const UnlabeledDataset& target, const PseudoLabelSet& pl,
                         const MSPLConfig& cfg);

}  // namespace fuda
