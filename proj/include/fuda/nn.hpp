#pragma once

// Dense bottleneck + head classifier: forward/backward passes, losses,
// momentum SGD and the warmup learning-rate schedule.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fuda/matrix.hpp"

namespace fuda {

/// Probability floor applied inside every logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

struct ArchitectureSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> bottleneck_widths;  // may be empty: head only
  std::size_t num_classes = 0;

  /// Desk-scale default: bottleneck [64, 32].
  static ArchitectureSpec desk_default(std::size_t input_dim, std::size_t num_classes) {
    return {input_dim, {64, 32}, num_classes};
  }

  void validate() const;
  /// input_dim, bottleneck widths..., num_classes.
  std::vector<std::size_t> layer_widths() const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

struct DenseLayer {
  Matrix weight;             // out x in
  std::vector<double> bias;  // out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Trainable bottleneck and head weights of one model. Hidden layers use ReLU;
/// the final layer emits raw logits.
struct ModelParams {
  std::vector<DenseLayer> layers;

  ArchitectureSpec architecture() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Throws DimensionError if consecutive layers do not chain.
  void validate_shapes() const;

  /// Visits every scalar parameter in a fixed order (layer, weights row-major, bias).
  void for_each_value(const std::function<void(double&)>& fn);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Zeros with the same shapes as `like`.
ModelParams zeros_like(const ModelParams& like);
ModelParams zero_params(const ArchitectureSpec& arch);
/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero bias.
ModelParams init_params(const ArchitectureSpec& arch, std::uint64_t seed);

/// Flattened copy of all parameters in for_each_value order.
std::vector<double> flatten(const ModelParams& params);
/// Inverse of flatten against the shapes of `like`.
ModelParams unflatten(std::span<const double> values, const ModelParams& like);

Matrix forward(const ModelParams& params, const Matrix& batch);

std::vector<double> softmax(std::span<const double> logits);
Matrix softmax_rows(const Matrix& logits);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> values);

struct LossKind {
  enum class Tag { HardCE, SoftCE, SSCE };

  Tag tag = Tag::HardCE;
  double epsilon = 0.0;  // SSCE only

  static LossKind hard_ce() { return {Tag::HardCE, 0.0}; }
  static LossKind soft_ce() { return {Tag::SoftCE, 0.0}; }
  static LossKind ssce(double epsilon);

  /// "ce", "softce" or "ssce".
  std::string name() const;
  static Tag parse_tag(std::string_view name);

  friend bool operator==(const LossKind&, const LossKind&) = default;
};

/// Class indices (HardCE) or one probability row per sample (SoftCE / SSCE).
using Targets = std::variant<std::vector<std::size_t>, Matrix>;

std::size_t target_count(const Targets& targets);
Targets gather_targets(const Targets& targets, std::span<const std::size_t> indices);

/// (1 - epsilon) * v + epsilon / C applied to every row.
Matrix smooth_rows(const Matrix& distributions, double epsilon);

struct LossAndGrad {
  double loss = 0.0;
  ModelParams grads;
};

/// Batch-mean loss and its exact gradient.
LossAndGrad loss_and_grad(const ModelParams& params, const Matrix& batch, const Targets& targets,
                          const LossKind& kind);
double loss_value(const ModelParams& params, const Matrix& batch, const Targets& targets,
                  const LossKind& kind);

/// Classical momentum: velocity = momentum * velocity + grads; params -= lr * velocity.
void sgd_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr,
              double momentum);

std::size_t warmup_steps(std::size_t total_steps, double warmup_fraction);
/// Linear ramp (step + 1) / warmup_steps * base_lr, then constant base_lr.
double lr_at_step(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction);

/// Worst element-wise relative error between `analytic` and central differences of the loss.
double gradient_error(const ModelParams& params, const ModelParams& analytic, const Matrix& batch,
                      const Targets& targets, const LossKind& kind, double h);
double check_gradients(const ModelParams& params, const Matrix& batch, const Targets& targets,
                       const LossKind& kind, double h);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 3e-2;
  double momentum = 0.9;
  double warmup_fraction = 0.05;
  std::uint64_t seed = 0;

  static TrainConfig client_default() { return {}; }
  static TrainConfig adaptation_default() {
    TrainConfig cfg;
    cfg.epochs = 10;
    return cfg;
  }

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
  ModelParams params;
  double final_epoch_loss = 0.0;  // mean batch loss over the last epoch; 0 when epochs == 0
};

/// Mini-batch momentum SGD. Samples are reshuffled every epoch with seed ^ epoch.
TrainResult train(ModelParams init, const Matrix& features, const Targets& targets,
                  const LossKind& kind, const TrainConfig& cfg);

}  // namespace fuda
