#include "fuda/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fuda/errors.hpp"
#include "fuda/rng.hpp"

namespace fuda {
namespace {

const double kLogFloor = std::log(kProbabilityFloor);

// Denominator floor for relative gradient error; below it the comparison is absolute.
constexpr double kGradientScaleFloor = 1e-4;

void check_same_shapes(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) throw DimensionError("layer count mismatch");
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
        x.bias.size() != y.bias.size()) {
      throw DimensionError("parameter shape mismatch at layer " + std::to_string(l));
    }
  }
}

// z = a * W^T + b
Matrix affine(const Matrix& input, const DenseLayer& layer) {
  const std::size_t n = input.rows();
  const std::size_t out = layer.weight.rows();
  const std::size_t in = layer.weight.cols();
  Matrix z(n, out);
  for (std::size_t s = 0; s < n; ++s) {
    const auto x = input.row(s);
    auto zr = z.row(s);
    for (std::size_t o = 0; o < out; ++o) {
      const auto w = layer.weight.row(o);
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
      zr[o] = acc;
    }
  }
  return z;
}

void relu_inplace(Matrix& m) {
  for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
}

void validate_batch(const ModelParams& params, const Matrix& batch) {
  params.validate_shapes();
  if (params.layers.empty()) throw DimensionError("model has no layers");
  if (batch.cols() != params.layers.front().weight.cols()) {
    throw DimensionError("batch width " + std::to_string(batch.cols()) + " != input_dim " +
                         std::to_string(params.layers.front().weight.cols()));
  }
  if (!batch.all_finite()) throw ValidationError("batch contains non-finite values");
}

void validate_distributions(const Matrix& targets, std::size_t num_classes) {
  if (targets.cols() != num_classes) {
    throw DimensionError("target width " + std::to_string(targets.cols()) + " != num_classes " +
                         std::to_string(num_classes));
  }
  for (std::size_t r = 0; r < targets.rows(); ++r) {
    double sum = 0.0;
    for (double v : targets.row(r)) {
      if (!(v >= 0.0)) throw ValidationError("target distribution has a negative or NaN entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError("target row " + std::to_string(r) + " sums to " + std::to_string(sum));
    }
  }
}

// Every loss kind reduces to cross-entropy against a per-row target distribution.
Matrix target_distributions(const Targets& targets, std::size_t num_classes, const LossKind& kind) {
  if (kind.tag == LossKind::Tag::HardCE) {
    const auto* labels = std::get_if<std::vector<std::size_t>>(&targets);
    if (labels == nullptr) throw ValidationError("HardCE expects class-index targets");
    Matrix onehot(labels->size(), num_classes);
    for (std::size_t r = 0; r < labels->size(); ++r) {
      if ((*labels)[r] >= num_classes) {
        throw DimensionError("label " + std::to_string((*labels)[r]) + " >= num_classes " +
                             std::to_string(num_classes));
      }
      onehot(r, (*labels)[r]) = 1.0;
    }
    return onehot;
  }
  const auto* dists = std::get_if<Matrix>(&targets);
  if (dists == nullptr) throw ValidationError(kind.name() + " expects probability-vector targets");
  validate_distributions(*dists, num_classes);
  if (kind.tag == LossKind::Tag::SSCE) return smooth_rows(*dists, kind.epsilon);
  return *dists;
}

struct ForwardCache {
  std::vector<Matrix> activations;  // input, then post-ReLU hidden outputs
  std::vector<Matrix> pre_activations;
  Matrix logits;
};

ForwardCache forward_cached(const ModelParams& params, const Matrix& batch) {
  ForwardCache cache;
  cache.activations.push_back(batch);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Matrix z = affine(cache.activations.back(), params.layers[l]);
    if (l + 1 == params.layers.size()) {
      cache.logits = std::move(z);
    } else {
      cache.pre_activations.push_back(z);
      relu_inplace(z);
      cache.activations.push_back(std::move(z));
    }
  }
  return cache;
}

// Cross-entropy of one row against target t with the log floor; writes d(loss)/d(logits).
double row_cross_entropy(std::span<const double> logits, std::span<const double> target,
                         std::span<double> dlogits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - peak);
  const double log_denom = std::log(denom);

  double loss = 0.0;
  double active_mass = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const double log_p = logits[c] - peak - log_denom;
    if (log_p >= kLogFloor) {
      loss -= target[c] * log_p;
      active_mass += target[c];
      dlogits[c] = -target[c];
    } else {
      loss -= target[c] * kLogFloor;
      dlogits[c] = 0.0;
    }
  }
  for (std::size_t c = 0; c < logits.size(); ++c) {
    dlogits[c] += std::exp(logits[c] - peak - log_denom) * active_mass;
  }
  return loss;
}

}  // namespace

void ArchitectureSpec::validate() const {
  if (input_dim < 1) throw ValidationError("input_dim must be >= 1");
  if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
  for (auto w : bottleneck_widths) {
    if (w < 1) throw ValidationError("bottleneck widths must be positive");
  }
}

std::vector<std::size_t> ArchitectureSpec::layer_widths() const {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), bottleneck_widths.begin(), bottleneck_widths.end());
  widths.push_back(num_classes);
  return widths;
}

ArchitectureSpec ModelParams::architecture() const {
  validate_shapes();
  if (layers.empty()) throw DimensionError("model has no layers");
  ArchitectureSpec arch;
  arch.input_dim = layers.front().weight.cols();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    arch.bottleneck_widths.push_back(layers[l].weight.rows());
  }
  arch.num_classes = layers.back().weight.rows();
  return arch;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers) total += layer.weight.size() + layer.bias.size();
  return total;
}

bool ModelParams::all_finite() const {
  return std::all_of(layers.begin(), layers.end(), [](const DenseLayer& layer) {
    return layer.weight.all_finite() &&
           std::all_of(layer.bias.begin(), layer.bias.end(), [](double v) { return std::isfinite(v); });
  });
}

void ModelParams::validate_shapes() const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].weight.rows()) {
      throw DimensionError("bias length mismatch at layer " + std::to_string(l));
    }
    if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows()) {
      throw DimensionError("layer " + std::to_string(l) + " input width does not match layer " +
                           std::to_string(l - 1) + " output");
    }
  }
}

void ModelParams::for_each_value(const std::function<void(double&)>& fn) {
  for (auto& layer : layers) {
    for (double& v : layer.weight.values()) fn(v);
    for (double& v : layer.bias) fn(v);
  }
}

ModelParams zeros_like(const ModelParams& like) {
  ModelParams out;
  out.layers.reserve(like.layers.size());
  for (const auto& layer : like.layers) {
    out.layers.push_back({Matrix(layer.weight.rows(), layer.weight.cols()),
                          std::vector<double>(layer.bias.size(), 0.0)});
  }
  return out;
}

ModelParams zero_params(const ArchitectureSpec& arch) {
  arch.validate();
  const auto widths = arch.layer_widths();
  ModelParams out;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    out.layers.push_back({Matrix(widths[l + 1], widths[l]), std::vector<double>(widths[l + 1], 0.0)});
  }
  return out;
}

ModelParams init_params(const ArchitectureSpec& arch, std::uint64_t seed) {
  ModelParams params = zero_params(arch);
  Rng rng(seed);
  for (auto& layer : params.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
  }
  return params;
}

std::vector<double> flatten(const ModelParams& params) {
  std::vector<double> out;
  out.reserve(params.parameter_count());
  for (const auto& layer : params.layers) {
    out.insert(out.end(), layer.weight.values().begin(), layer.weight.values().end());
    out.insert(out.end(), layer.bias.begin(), layer.bias.end());
  }
  return out;
}

ModelParams unflatten(std::span<const double> values, const ModelParams& like) {
  if (values.size() != like.parameter_count()) throw DimensionError("flat parameter length mismatch");
  ModelParams out = zeros_like(like);
  std::size_t i = 0;
  out.for_each_value([&](double& v) { v = values[i++]; });
  return out;
}

Matrix forward(const ModelParams& params, const Matrix& batch) {
  validate_batch(params, batch);
  return forward_cached(params, batch).logits;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax of an empty vector");
  for (double z : logits) {
    if (!std::isfinite(z)) throw ValidationError("softmax of non-finite logits");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - peak);
    sum += probs[c];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), probs.row(r).begin());
  }
  return probs;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw DimensionError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

LossKind LossKind::ssce(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("SSCE epsilon must lie in [0, 1]");
  return {Tag::SSCE, epsilon};
}

std::string LossKind::name() const {
  switch (tag) {
    case Tag::HardCE: return "ce";
    case Tag::SoftCE: return "softce";
    case Tag::SSCE: return "ssce";
  }
  return "?";
}

LossKind::Tag LossKind::parse_tag(std::string_view name) {
  if (name == "ce") return Tag::HardCE;
  if (name == "softce") return Tag::SoftCE;
  if (name == "ssce") return Tag::SSCE;
  throw ValidationError("unknown loss '" + std::string(name) + "' (expected ce|softce|ssce)");
}

std::size_t target_count(const Targets& targets) {
  return std::visit(
      [](const auto& t) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Matrix>) {
          return t.rows();
        } else {
          return t.size();
        }
      },
      targets);
}

Targets gather_targets(const Targets& targets, std::span<const std::size_t> indices) {
  if (const auto* labels = std::get_if<std::vector<std::size_t>>(&targets)) {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels->at(i));
    return out;
  }
  return std::get<Matrix>(targets).gather_rows(indices);
}

Matrix smooth_rows(const Matrix& distributions, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0, 1]");
  const double uniform_share = epsilon / static_cast<double>(distributions.cols());
  Matrix out(distributions.rows(), distributions.cols());
  auto src = distributions.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (1.0 - epsilon) * src[i] + uniform_share;
  return out;
}

LossAndGrad loss_and_grad(const ModelParams& params, const Matrix& batch, const Targets& targets,
                          const LossKind& kind) {
  validate_batch(params, batch);
  if (target_count(targets) != batch.rows()) throw DimensionError("target count != batch size");
  if (batch.rows() == 0) throw ValidationError("empty batch");
  const std::size_t num_classes = params.layers.back().weight.rows();
  const Matrix dist = target_distributions(targets, num_classes, kind);

  const ForwardCache cache = forward_cached(params, batch);
  const std::size_t n = batch.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  Matrix delta(n, num_classes);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    total += row_cross_entropy(cache.logits.row(s), dist.row(s), delta.row(s));
  }
  for (double& d : delta.values()) d *= inv_n;

  LossAndGrad out{total * inv_n, zeros_like(params)};
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const Matrix& input = cache.activations[l];
    auto& grad = out.grads.layers[l];
    const auto& layer = params.layers[l];
    const std::size_t out_w = layer.weight.rows();
    const std::size_t in_w = layer.weight.cols();
    for (std::size_t s = 0; s < n; ++s) {
      const auto d = delta.row(s);
      const auto x = input.row(s);
      for (std::size_t o = 0; o < out_w; ++o) {
        if (d[o] == 0.0) continue;
        auto g = grad.weight.row(o);
        for (std::size_t i = 0; i < in_w; ++i) g[i] += d[o] * x[i];
        grad.bias[o] += d[o];
      }
    }
    if (l == 0) break;
    Matrix prev(n, in_w);
    const Matrix& pre = cache.pre_activations[l - 1];
    for (std::size_t s = 0; s < n; ++s) {
      const auto d = delta.row(s);
      auto p = prev.row(s);
      for (std::size_t o = 0; o < out_w; ++o) {
        if (d[o] == 0.0) continue;
        const auto w = layer.weight.row(o);
        for (std::size_t i = 0; i < in_w; ++i) p[i] += d[o] * w[i];
      }
      const auto z = pre.row(s);
      for (std::size_t i = 0; i < in_w; ++i) {
        if (!(z[i] > 0.0)) p[i] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  return out;
}

double loss_value(const ModelParams& params, const Matrix& batch, const Targets& targets,
                  const LossKind& kind) {
  validate_batch(params, batch);
  if (target_count(targets) != batch.rows()) throw DimensionError("target count != batch size");
  if (batch.rows() == 0) throw ValidationError("empty batch");
  const std::size_t num_classes = params.layers.back().weight.rows();
  const Matrix dist = target_distributions(targets, num_classes, kind);
  const Matrix logits = forward_cached(params, batch).logits;
  std::vector<double> scratch(num_classes);
  double total = 0.0;
  for (std::size_t s = 0; s < batch.rows(); ++s) {
    total += row_cross_entropy(logits.row(s), dist.row(s), scratch);
  }
  return total / static_cast<double>(batch.rows());
}

void sgd_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr,
              double momentum) {
  check_same_shapes(params, grads);
  check_same_shapes(params, velocity);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = momentum * v[i] + g[i];
        p[i] -= lr * v[i];
      }
    };
    update(params.layers[l].weight.values(), grads.layers[l].weight.values(),
           velocity.layers[l].weight.values());
    update(params.layers[l].bias, grads.layers[l].bias, velocity.layers[l].bias);
  }
}

std::size_t warmup_steps(std::size_t total_steps, double warmup_fraction) {
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ValidationError("warmup_fraction must lie in [0, 1)");
  }
  // The tolerance keeps e.g. 0.05 * 100 = 5.000000000000001 from rounding up to 6.
  const double exact = warmup_fraction * static_cast<double>(total_steps);
  return static_cast<std::size_t>(std::ceil(exact - 1e-9));
}

double lr_at_step(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps == 0) throw ValidationError("total_steps must be positive");
  if (step >= total_steps) throw ValidationError("step out of range");
  const std::size_t ramp = warmup_steps(total_steps, warmup_fraction);
  if (step >= ramp) return base_lr;
  return base_lr * static_cast<double>(step + 1) / static_cast<double>(ramp);
}

double gradient_error(const ModelParams& params, const ModelParams& analytic, const Matrix& batch,
                      const Targets& targets, const LossKind& kind, double h) {
  if (!(h > 0.0)) throw ValidationError("finite-difference step must be positive");
  check_same_shapes(params, analytic);
  std::vector<double> theta = flatten(params);
  const std::vector<double> grads = flatten(analytic);
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double original = theta[i];
    theta[i] = original + h;
    const double up = loss_value(unflatten(theta, params), batch, targets, kind);
    theta[i] = original - h;
    const double down = loss_value(unflatten(theta, params), batch, targets, kind);
    theta[i] = original;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(numeric), std::abs(grads[i]), kGradientScaleFloor});
    worst = std::max(worst, std::abs(numeric - grads[i]) / scale);
  }
  return worst;
}

double check_gradients(const ModelParams& params, const Matrix& batch, const Targets& targets,
                       const LossKind& kind, double h) {
  const auto analytic = loss_and_grad(params, batch, targets, kind);
  return gradient_error(params, analytic.grads, batch, targets, kind, h);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ValidationError("warmup_fraction must lie in [0, 1)");
  }
}

TrainResult train(ModelParams init, const Matrix& features, const Targets& targets,
                  const LossKind& kind, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = features.rows();
  if (n == 0) throw ValidationError("cannot train on an empty dataset");
  if (target_count(targets) != n) throw DimensionError("target count != sample count");
  validate_batch(init, features);

  TrainResult result{std::move(init), 0.0};
  if (cfg.epochs == 0) return result;

  const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches_per_epoch;
  ModelParams velocity = zeros_like(result.params);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed ^ static_cast<std::uint64_t>(epoch));
    const std::vector<std::size_t> order = rng.permutation(n);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix batch = features.gather_rows(idx);
      const Targets batch_targets = gather_targets(targets, idx);
      const LossAndGrad lg = loss_and_grad(result.params, batch, batch_targets, kind);
      if (!std::isfinite(lg.loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += lg.loss;
      sgd_step(result.params, lg.grads, velocity,
               lr_at_step(step, total_steps, cfg.learning_rate, cfg.warmup_fraction), cfg.momentum);
      ++step;
    }
    result.final_epoch_loss = epoch_loss / static_cast<double>(batches_per_epoch);
  }
  if (!result.params.all_finite()) throw NumericError("training produced non-finite parameters");
  return result;
}

}  // namespace fuda
