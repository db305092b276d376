#include "fuda/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fuda/errors.hpp"
#include "fuda/rng.hpp"

namespace fuda {
namespace {

using nlohmann::json;

// Seed streams mixed with each evaluation seed.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kClientStream = 2;
constexpr std::uint64_t kAdaptStream = 3;

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

TrainConfig train_from_json(const json& j, TrainConfig cfg, const std::string& where) {
  reject_unknown_keys(j, {"epochs", "batch_size", "learning_rate", "momentum", "warmup_fraction", "seed"}, where);
  read_field(j, "epochs", cfg.epochs, where);
  read_field(j, "batch_size", cfg.batch_size, where);
  read_field(j, "learning_rate", cfg.learning_rate, where);
  read_field(j, "momentum", cfg.momentum, where);
  read_field(j, "warmup_fraction", cfg.warmup_fraction, where);
  read_field(j, "seed", cfg.seed, where);
  return cfg;
}

SyntheticShiftConfig synthetic_from_json(const json& j) {
  const std::string where = "data.synthetic";
  reject_unknown_keys(j,
                      {"num_domains", "num_classes", "feature_dim", "samples_per_domain", "class_separation",
                       "shift_rotation_max", "shift_translation_max", "label_noise_rate", "seed"},
                      where);
  SyntheticShiftConfig cfg;
  read_field(j, "num_domains", cfg.num_domains, where);
  read_field(j, "num_classes", cfg.num_classes, where);
  read_field(j, "feature_dim", cfg.feature_dim, where);
  read_field(j, "samples_per_domain", cfg.samples_per_domain, where);
  read_field(j, "class_separation", cfg.class_separation, where);
  read_field(j, "shift_rotation_max", cfg.shift_rotation_max, where);
  read_field(j, "shift_translation_max", cfg.shift_translation_max, where);
  read_field(j, "label_noise_rate", cfg.label_noise_rate, where);
  read_field(j, "seed", cfg.seed, where);
  return cfg;
}

json synthetic_to_json(const SyntheticShiftConfig& cfg) {
  return {{"num_domains", cfg.num_domains},
          {"num_classes", cfg.num_classes},
          {"feature_dim", cfg.feature_dim},
          {"samples_per_domain", cfg.samples_per_domain},
          {"class_separation", cfg.class_separation},
          {"shift_rotation_max", cfg.shift_rotation_max},
          {"shift_translation_max", cfg.shift_translation_max},
          {"label_noise_rate", cfg.label_noise_rate},
          {"seed", cfg.seed}};
}

MSPLConfig mspl_from_json(const json& j) {
  const std::string where = "mspl";
  reject_unknown_keys(j, {"epsilon", "loss", "train"}, where);
  MSPLConfig cfg = standard_mspl();
  read_field(j, "epsilon", cfg.epsilon, where);
  if (j.contains("loss")) {
    try {
      cfg.loss = LossKind::parse_tag(j.at("loss").get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("mspl.loss: ") + e.what());
    }
  }
  if (j.contains("train")) cfg.train = train_from_json(j.at("train"), cfg.train, "mspl.train");
  return cfg;
}

std::uint64_t combined_hash(const std::vector<DomainDataset>& domains) {
  std::uint64_t h = 0;
  for (const auto& d : domains) h = mix_seed(h, dataset_hash(d));
  return h;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string epsilon_label(double eps) {
  std::ostringstream os;
  os << "eps=" << eps;
  return os.str();
}

struct Variant {
  std::string label;
  AggregatorKind aggregator;
  std::optional<MSPLConfig> adapt;  // unseeded; seeded per context
};

ResultTable run_variants(const ExperimentConfig& cfg, const std::string& name, const std::vector<Variant>& variants) {
  cfg.validate();
  ResultTable table;
  table.name = name;
  table.seeds = cfg.eval_seeds;
  for (const auto& v : variants) table.rows.push_back({v.label, {}, {}, 0.0, 0.0});
  for (auto seed : cfg.eval_seeds) {
    const SeedContext ctx = prepare_seed(cfg, seed);
    for (std::size_t r = 0; r < variants.size(); ++r) {
      const auto adapt = seeded_mspl(cfg, variants[r].adapt, seed);
      const OneShotResult result = run_variant(ctx, variants[r].aggregator, adapt);
      table.rows[r].per_seed.push_back(accuracy(result.global, ctx.target()));
      table.rows[r].data_hashes.push_back(combined_hash(ctx.domains));
    }
    for (const auto& row : table.rows) {
      if (row.data_hashes.back() != ctx.data_hash) {
        throw Error("dataset changed between rows of table '" + name + "'");
      }
    }
  }
  finalize_rows(table);
  return table;
}

MSPLConfig base_mspl(const ExperimentConfig& cfg) { return cfg.mspl.value_or(standard_mspl()); }

}  // namespace

double accuracy(const ModelParams& params, const DomainDataset& labeled) {
  const auto& labels = labeled.require_labels();
  if (labeled.size() == 0) throw ValidationError("accuracy over an empty dataset");
  const Matrix logits = forward(params, labeled.features);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (argmax(logits.row(r)) == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labeled.size());
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("correlation inputs differ in length");
  if (x.size() < 3) throw ValidationError("correlation needs at least 3 pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double entropy_accuracy_correlation(std::span<const ClientReport> rows) {
  std::vector<double> h;
  std::vector<double> a;
  for (const auto& row : rows) {
    if (!row.target_accuracy) throw ValidationError("client '" + row.client_id + "' has no target accuracy");
    h.push_back(row.mean_entropy);
    a.push_back(*row.target_accuracy);
  }
  return pearson_correlation(h, a);
}

void ExperimentConfig::validate() const {
  try {
    if (const auto* syn = std::get_if<SyntheticShiftConfig>(&data)) {
      syn->validate();
    } else if (std::get<FeatureFileSource>(data).domains.size() < 2) {
      throw ValidationError("feature_files needs at least two domains");
    }
    for (auto w : arch.bottleneck_widths) {
      if (w < 1) throw ValidationError("bottleneck widths must be positive");
    }
    client_train.validate();
    if (mspl) mspl->validate();
    if (eval_seeds.empty()) throw ValidationError("eval_seeds must not be empty");
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown_keys(j, {"data", "target_domain", "arch", "client_train", "aggregator", "mspl", "eval_seeds"},
                      "config");
  ExperimentConfig cfg;
  if (j.contains("data")) {
    const json& data = j.at("data");
    reject_unknown_keys(data, {"synthetic", "feature_files"}, "data");
    if (data.contains("synthetic") == data.contains("feature_files")) {
      throw ConfigError("data needs exactly one of 'synthetic' or 'feature_files'");
    }
    if (data.contains("synthetic")) {
      cfg.data = synthetic_from_json(data.at("synthetic"));
    } else {
      FeatureFileSource files;
      std::vector<std::string> paths;
      read_field(data, "feature_files", paths, "data");
      for (auto& p : paths) files.domains.emplace_back(p);
      cfg.data = files;
    }
  }
  if (j.contains("target_domain") && !j.at("target_domain").is_null()) {
    std::size_t t = 0;
    read_field(j, "target_domain", t, "config");
    cfg.target_domain = t;
  }
  if (j.contains("arch")) {
    const json& a = j.at("arch");
    reject_unknown_keys(a, {"input_dim", "bottleneck_widths", "num_classes"}, "arch");
    read_field(a, "input_dim", cfg.arch.input_dim, "arch");
    read_field(a, "bottleneck_widths", cfg.arch.bottleneck_widths, "arch");
    read_field(a, "num_classes", cfg.arch.num_classes, "arch");
  }
  if (j.contains("client_train")) cfg.client_train = train_from_json(j.at("client_train"), cfg.client_train, "client_train");
  if (j.contains("aggregator")) {
    std::string name;
    read_field(j, "aggregator", name, "config");
    try {
      cfg.aggregator = parse_aggregator(name);
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("mspl")) {
    if (j.at("mspl").is_null()) {
      cfg.mspl.reset();
    } else {
      cfg.mspl = mspl_from_json(j.at("mspl"));
    }
  }
  read_field(j, "eval_seeds", cfg.eval_seeds, "config");
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json data;
  if (const auto* syn = std::get_if<SyntheticShiftConfig>(&cfg.data)) {
    data["synthetic"] = synthetic_to_json(*syn);
  } else {
    json paths = json::array();
    for (const auto& p : std::get<FeatureFileSource>(cfg.data).domains) paths.push_back(p.generic_string());
    data["feature_files"] = paths;
  }
  return {{"data", data},
          {"target_domain", cfg.target_domain ? json(*cfg.target_domain) : json(nullptr)},
          {"arch",
           {{"input_dim", cfg.arch.input_dim},
            {"bottleneck_widths", cfg.arch.bottleneck_widths},
            {"num_classes", cfg.arch.num_classes}}},
          {"client_train", train_config_to_json(cfg.client_train)},
          {"aggregator", aggregator_name(cfg.aggregator)},
          {"mspl", cfg.mspl ? mspl_config_to_json(*cfg.mspl) : json(nullptr)},
          {"eval_seeds", cfg.eval_seeds}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  ExperimentConfig cfg = config_from_json(j);
  // Feature-file paths are relative to the config file.
  if (auto* files = std::get_if<FeatureFileSource>(&cfg.data)) {
    for (auto& p : files->domains) {
      if (p.is_relative()) p = path.parent_path() / p;
    }
  }
  return cfg;
}

std::vector<DomainDataset> load_domains(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (const auto* syn = std::get_if<SyntheticShiftConfig>(&cfg.data)) {
    SyntheticShiftConfig seeded = *syn;
    seeded.seed = mix_seed(mix_seed(syn->seed, seed), kDataStream);
    SyntheticDomains generated = generate_synthetic(seeded);
    // Label noise corrupts training labels only; the target is scored against the true classes.
    const std::size_t target = resolve_target_index(cfg, generated.domains.size());
    generated.domains[target].labels = generated.clean_labels;
    return std::move(generated.domains);
  }
  std::vector<DomainDataset> domains;
  for (const auto& p : std::get<FeatureFileSource>(cfg.data).domains) domains.push_back(load_feature_file(p));
  for (const auto& d : domains) {
    if (d.dim() != domains.front().dim() || d.num_classes != domains.front().num_classes) {
      throw ConfigError("feature files disagree on dim or class count");
    }
  }
  return domains;
}

std::size_t resolve_target_index(const ExperimentConfig& cfg, std::size_t domain_count) {
  const std::size_t t = cfg.target_domain.value_or(domain_count - 1);
  if (t >= domain_count) {
    throw ConfigError("target_domain " + std::to_string(t) + " out of range for " + std::to_string(domain_count) +
                      " domains");
  }
  return t;
}

ArchitectureSpec resolve_architecture(const ExperimentConfig& cfg, const DomainDataset& sample) {
  ArchitectureSpec arch = cfg.arch;
  if (arch.input_dim == 0) arch.input_dim = sample.dim();
  if (arch.num_classes == 0) arch.num_classes = sample.num_classes;
  if (arch.input_dim != sample.dim() || arch.num_classes != sample.num_classes) {
    throw ConfigError("arch does not match the data (dim " + std::to_string(sample.dim()) + ", classes " +
                      std::to_string(sample.num_classes) + ")");
  }
  try {
    arch.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return arch;
}

TrainConfig seeded_client_train(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig t = cfg.client_train;
  t.seed = mix_seed(mix_seed(cfg.client_train.seed, seed), kClientStream);
  return t;
}

std::optional<MSPLConfig> seeded_mspl(const ExperimentConfig&, const std::optional<MSPLConfig>& mspl,
                                      std::uint64_t seed) {
  if (!mspl) return std::nullopt;
  MSPLConfig m = *mspl;
  m.train.seed = mix_seed(mix_seed(mspl->train.seed, seed), kAdaptStream);
  return m;
}

SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SeedContext ctx;
  ctx.seed = seed;
  ctx.domains = load_domains(cfg, seed);
  ctx.target_index = resolve_target_index(cfg, ctx.domains.size());
  ctx.arch = resolve_architecture(cfg, ctx.domains.front());
  ctx.client_train = seeded_client_train(cfg, seed);
  ctx.mspl = seeded_mspl(cfg, cfg.mspl, seed);
  ctx.data_hash = combined_hash(ctx.domains);
  if (!ctx.target().labeled()) throw ConfigError("target domain needs evaluation labels for the harness");
  for (std::size_t i = 0; i < ctx.domains.size(); ++i) {
    if (i == ctx.target_index) continue;
    ClientState client(ctx.domains[i].domain_id, ctx.domains[i]);
    client.train(ctx.arch, ctx.client_train);
    ctx.clients.push_back(std::move(client));
  }
  return ctx;
}

void attach_evaluation(RunReport& report, const OneShotResult& result, const DomainDataset& labeled_target) {
  for (std::size_t i = 0; i < report.clients.size(); ++i) {
    report.clients[i].target_accuracy = accuracy(result.source_models.at(i), labeled_target);
  }
  report.accuracy_pre_adaptation = accuracy(result.aggregated, labeled_target);
  if (report.adaptation) report.accuracy_post_adaptation = accuracy(result.global, labeled_target);
  report.target_hash = dataset_hash(labeled_target);
  try {
    report.entropy_accuracy_correlation = entropy_accuracy_correlation(report.clients);
  } catch (const ValidationError&) {
    report.entropy_accuracy_correlation.reset();  // fewer than 3 clients or zero variance
  }
}

OneShotResult run_variant(const SeedContext& ctx, AggregatorKind aggregator, const std::optional<MSPLConfig>& adapt) {
  OneShotResult result = run_one_shot(ctx.clients, without_labels(ctx.target()), aggregator, adapt);
  result.report.seed = ctx.seed;
  attach_evaluation(result.report, result, ctx.target());
  return result;
}

RunReport run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  const SeedContext ctx = prepare_seed(cfg, seed);
  RunReport report = run_variant(ctx, cfg.aggregator, ctx.mspl).report;
  report.config = config_to_json(cfg);
  return report;
}

const TableRow& ResultTable::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw ValidationError("table '" + name + "' has no row '" + label + "'");
}

void finalize_rows(ResultTable& table) {
  for (auto& row : table.rows) {
    row.mean = mean_of(row.per_seed);
    double ss = 0.0;
    for (double x : row.per_seed) ss += (x - row.mean) * (x - row.mean);
    row.stddev = row.per_seed.size() > 1 ? std::sqrt(ss / static_cast<double>(row.per_seed.size() - 1)) : 0.0;
  }
}

ResultTable run_ablation(const ExperimentConfig& cfg) {
  MSPLConfig ssce = base_mspl(cfg);
  ssce.loss = LossKind::Tag::SSCE;
  MSPLConfig ce = ssce;
  ce.loss = LossKind::Tag::HardCE;
  return run_variants(cfg, "ablation",
                      {{"sea+mspl", AggregatorKind::SEA, ssce},
                       {"sea+mspl-ce", AggregatorKind::SEA, ce},
                       {"sea", AggregatorKind::SEA, std::nullopt},
                       {"entropy", AggregatorKind::EntropyUnscaled, std::nullopt},
                       {"uniform", AggregatorKind::UniformAverage, std::nullopt}});
}

ResultTable run_aggregator_comparison(const ExperimentConfig& cfg) {
  return run_variants(cfg, "aggregators",
                      {{"uniform", AggregatorKind::UniformAverage, std::nullopt},
                       {"fedavg", AggregatorKind::SampleCount, std::nullopt},
                       {"entropy", AggregatorKind::EntropyUnscaled, std::nullopt},
                       {"sea", AggregatorKind::SEA, std::nullopt}});
}

ResultTable run_loss_comparison(const ExperimentConfig& cfg) {
  std::vector<Variant> variants;
  for (auto tag : {LossKind::Tag::HardCE, LossKind::Tag::SoftCE, LossKind::Tag::SSCE}) {
    MSPLConfig m = base_mspl(cfg);
    m.loss = tag;
    variants.push_back({m.loss_kind().name(), cfg.aggregator, m});
  }
  return run_variants(cfg, "losses", variants);
}

ResultTable run_epsilon_sweep(const ExperimentConfig& cfg, std::span<const double> epsilons) {
  if (epsilons.empty()) throw ConfigError("epsilon sweep needs at least one value");
  std::vector<Variant> variants;
  for (double eps : epsilons) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("epsilon " + std::to_string(eps) + " outside [0, 1]");
    MSPLConfig m = base_mspl(cfg);
    m.loss = LossKind::Tag::SSCE;
    m.epsilon = eps;
    variants.push_back({epsilon_label(eps), cfg.aggregator, m});
  }
  return run_variants(cfg, "epsilon_sweep", variants);
}

std::string table_csv(const ResultTable& table) {
  std::string out = "table,configuration,mean_accuracy,std_accuracy,seeds\n";
  for (const auto& row : table.rows) {
    out += table.name + "," + row.label + "," + format_csv_number(row.mean) + "," + format_csv_number(row.stddev) +
           "," + std::to_string(row.per_seed.size()) + "\n";
  }
  return out;
}

json table_to_json(const ResultTable& table) {
  json rows = json::array();
  for (const auto& row : table.rows) {
    rows.push_back({{"configuration", row.label},
                    {"mean_accuracy", row.mean},
                    {"std_accuracy", row.stddev},
                    {"per_seed", row.per_seed},
                    {"data_hashes", row.data_hashes}});
  }
  return {{"table", table.name}, {"seeds", table.seeds}, {"rows", rows}};
}

}  // namespace fuda
