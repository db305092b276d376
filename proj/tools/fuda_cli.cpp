// fuda: one-shot federated domain adaptation simulator.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numeric or runtime failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fuda/errors.hpp"
#include "fuda/federation.hpp"
#include "fuda/harness.hpp"
#include "fuda/model_io.hpp"

namespace fs = std::filesystem;
using namespace fuda;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string format = "json";

  std::optional<std::string> aggregator;
  std::optional<double> epsilon;
  std::optional<std::string> mspl_loss;
  bool no_adapt = false;
  std::string dump_pseudo;

  bool unlabeled_target = false;
  std::vector<std::string> models;
  std::string global;
  std::string table = "ablation";
  std::vector<double> epsilons{0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0};
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  std::cout << "wrote " << path.string() << '\n';
}

fs::path out_dir(const Options& o) {
  fs::create_directories(o.out);
  return o.out;
}

std::uint64_t seed_of(const Options& o) { return o.seed.value_or(0); }

ExperimentConfig load_base_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig::standard() : load_config(o.config);
  try {
    if (o.aggregator) cfg.aggregator = parse_aggregator(*o.aggregator);
    if (o.no_adapt) cfg.mspl.reset();
    if ((o.epsilon || o.mspl_loss) && !cfg.mspl) cfg.mspl = standard_mspl();
    if (o.epsilon) cfg.mspl->epsilon = *o.epsilon;
    if (o.mspl_loss) cfg.mspl->loss = LossKind::parse_tag(*o.mspl_loss);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

void dump_pseudo_labels(const PseudoLabelSet& pl, const UnlabeledDataset& target, const fs::path& path) {
  DomainDataset ds{target.domain_id() + ".pseudo", pl.probs, std::nullopt, pl.probs.cols()};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_feature_file(ds, path);
  std::cout << "wrote " << path.string() << '\n';
}

void write_report(const RunReport& report, const Options& o, const std::string& stem) {
  const fs::path dir = out_dir(o);
  if (o.format == "csv") {
    write_text(dir / (stem + ".csv"), report_csv(report));
  } else {
    write_text(dir / (stem + ".json"), report_json(report));
  }
}

void write_table(const ResultTable& table, const Options& o) {
  const fs::path dir = out_dir(o);
  const std::string csv = table_csv(table);
  if (o.format == "csv") {
    write_text(dir / (table.name + ".csv"), csv);
  } else {
    write_text(dir / (table.name + ".json"), table_to_json(table).dump(2) + "\n");
  }
  std::cout << csv;
}

void print_accuracies(const RunReport& r) {
  if (r.accuracy_pre_adaptation) std::printf("accuracy before adaptation: %.4f\n", *r.accuracy_pre_adaptation);
  if (r.accuracy_post_adaptation) std::printf("accuracy after adaptation:  %.4f\n", *r.accuracy_post_adaptation);
}

// Domains for one seed plus the resolved target index and architecture.
struct SeedData {
  std::vector<DomainDataset> domains;
  std::size_t target_index = 0;
  ArchitectureSpec arch;

  const DomainDataset& target() const { return domains.at(target_index); }
};

SeedData seed_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedData d;
  d.domains = load_domains(cfg, seed);
  d.target_index = resolve_target_index(cfg, d.domains.size());
  d.arch = resolve_architecture(cfg, d.domains.front());
  return d;
}

std::vector<ModelFile> load_models(const Options& o) {
  std::vector<fs::path> paths(o.models.begin(), o.models.end());
  if (paths.empty()) {
    const fs::path dir = fs::path(o.out) / "models";
    if (!fs::is_directory(dir)) throw ConfigError("no --models given and " + dir.string() + " does not exist");
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".json") paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
  }
  if (paths.empty()) throw ConfigError("no client model files found");
  std::vector<ModelFile> models;
  for (const auto& p : paths) models.push_back(load_model(p));
  return models;
}

int cmd_gen_data(const Options& o) {
  const ExperimentConfig cfg = load_base_config(o);
  const SeedData d = seed_data(cfg, seed_of(o));
  const fs::path dir = out_dir(o);
  for (std::size_t i = 0; i < d.domains.size(); ++i) {
    DomainDataset ds = d.domains[i];
    if (i == d.target_index && o.unlabeled_target) ds.labels.reset();
    save_feature_file(ds, dir / (ds.domain_id + ".csv"));
    std::cout << "wrote " << (dir / (ds.domain_id + ".csv")).string() << (i == d.target_index ? " (target)" : "")
              << '\n';
  }
  return 0;
}

int cmd_train_clients(const Options& o) {
  const ExperimentConfig cfg = load_base_config(o);
  const std::uint64_t seed = seed_of(o);
  const SeedData d = seed_data(cfg, seed);
  const TrainConfig train = seeded_client_train(cfg, seed);
  const fs::path dir = out_dir(o) / "models";
  fs::create_directories(dir);
  for (std::size_t i = 0; i < d.domains.size(); ++i) {
    if (i == d.target_index) continue;
    ClientState client(d.domains[i].domain_id, d.domains[i]);
    client.train(d.arch, train);
    const fs::path path = dir / (client.id() + ".json");
    save_model({client.id(), client.sample_count(), client.params()}, path);
    std::printf("wrote %s (accuracy on own domain %.4f)\n", path.string().c_str(),
                accuracy(client.params(), client.dataset()));
  }
  return 0;
}

int cmd_aggregate(const Options& o) {
  const ExperimentConfig cfg = load_base_config(o);
  const SeedData d = seed_data(cfg, seed_of(o));
  Server server(without_labels(d.target()));
  for (auto& m : load_models(o)) server.receive({m.client_id, std::move(m.params), m.sample_count});
  OneShotResult result = finish_one_shot(server, cfg.aggregator, std::nullopt);
  result.report.seed = seed_of(o);
  if (d.target().labeled()) attach_evaluation(result.report, result, d.target());
  const fs::path dir = out_dir(o);
  save_model({"global", d.target().size(), result.global}, dir / "global.json");
  std::cout << "wrote " << (dir / "global.json").string() << '\n';
  write_report(result.report, o, "aggregate_report");
  for (const auto& c : result.report.clients) {
    std::printf("%-12s entropy %.4f weight %.4f\n", c.client_id.c_str(), c.mean_entropy, c.weight_final);
  }
  print_accuracies(result.report);
  return 0;
}

int cmd_adapt(const Options& o) {
  ExperimentConfig cfg = load_base_config(o);
  if (!cfg.mspl) cfg.mspl = standard_mspl();
  const std::uint64_t seed = seed_of(o);
  const SeedData d = seed_data(cfg, seed);
  const UnlabeledDataset target = without_labels(d.target());
  const fs::path global_path = o.global.empty() ? fs::path(o.out) / "global.json" : fs::path(o.global);
  const ModelFile global = load_model(global_path);
  std::vector<ModelParams> sources;
  for (auto& m : load_models(o)) sources.push_back(std::move(m.params));

  const MSPLConfig mspl = *seeded_mspl(cfg, cfg.mspl, seed);
  const PseudoLabelSet pl = generate_pseudo_labels(sources, target);
  if (!o.dump_pseudo.empty()) dump_pseudo_labels(pl, target, o.dump_pseudo);
  const ModelParams adapted = adapt_global(global.params, target, pl, mspl);

  const fs::path dir = out_dir(o);
  save_model({"global", global.sample_count, adapted}, dir / "adapted.json");
  std::cout << "wrote " << (dir / "adapted.json").string() << '\n';

  RunReport report;
  report.seed = seed;
  report.aggregator = aggregator_name(cfg.aggregator);
  report.adaptation = mspl;
  if (d.target().labeled()) {
    report.accuracy_pre_adaptation = accuracy(global.params, d.target());
    report.accuracy_post_adaptation = accuracy(adapted, d.target());
    report.target_hash = dataset_hash(d.target());
  }
  write_report(report, o, "adapt_report");
  print_accuracies(report);
  return 0;
}

int cmd_run(const Options& o) {
  const ExperimentConfig cfg = load_base_config(o);
  const std::uint64_t seed = seed_of(o);
  const SeedContext ctx = prepare_seed(cfg, seed);
  OneShotResult result = run_variant(ctx, cfg.aggregator, ctx.mspl);
  result.report.config = config_to_json(cfg);
  if (!o.dump_pseudo.empty()) {
    if (!result.pseudo_labels) throw ConfigError("--dump-pseudo needs adaptation enabled");
    dump_pseudo_labels(*result.pseudo_labels, without_labels(ctx.target()), o.dump_pseudo);
  }
  write_report(result.report, o, "report");
  print_accuracies(result.report);
  return 0;
}

ExperimentConfig table_config(const Options& o) {
  ExperimentConfig cfg = load_base_config(o);
  if (o.seed) cfg.eval_seeds = {*o.seed};
  return cfg;
}

int cmd_ablate(const Options& o) {
  const ExperimentConfig cfg = table_config(o);
  if (o.table == "ablation") {
    write_table(run_ablation(cfg), o);
  } else if (o.table == "aggregators") {
    write_table(run_aggregator_comparison(cfg), o);
  } else {
    write_table(run_loss_comparison(cfg), o);
  }
  return 0;
}

int cmd_sweep(const Options& o) {
  write_table(run_epsilon_sweep(table_config(o), o.epsilons), o);
  return 0;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "experiment config (JSON); defaults to the standard benchmark")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "evaluation seed");
  sub->add_option("--out", o.out, "output directory")->capture_default_str();
  sub->add_option("--format", o.format, "report format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
}

void add_overrides(CLI::App* sub, Options& o) {
  sub->add_option("--aggregator", o.aggregator, "aggregation strategy")
      ->check(CLI::IsMember({"uniform", "fedavg", "entropy", "sea"}));
  sub->add_option("--epsilon", o.epsilon, "SSCE smoothing factor");
  sub->add_option("--mspl-loss", o.mspl_loss, "adaptation loss")->check(CLI::IsMember({"ssce", "ce", "softce"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot federated unsupervised domain adaptation simulator"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "write the domains of one seed as feature files");
  add_common(gen, o);
  gen->add_flag("--unlabeled-target", o.unlabeled_target, "omit labels from the target file");

  auto* train = app.add_subcommand("train-clients", "train one model per source domain into <out>/models");
  add_common(train, o);

  auto* agg = app.add_subcommand("aggregate", "aggregate client models into <out>/global.json");
  add_common(agg, o);
  add_overrides(agg, o);
  agg->add_option("--models", o.models, "client model files (default: <out>/models/*.json)");

  auto* adapt = app.add_subcommand("adapt", "fine-tune the global model on multi-source pseudo labels");
  add_common(adapt, o);
  add_overrides(adapt, o);
  adapt->add_option("--models", o.models, "source model files (default: <out>/models/*.json)");
  adapt->add_option("--global", o.global, "global model (default: <out>/global.json)");
  adapt->add_option("--dump-pseudo", o.dump_pseudo, "write pseudo-label probabilities as a feature file");

  auto* run = app.add_subcommand("run", "full pipeline for one seed");
  add_common(run, o);
  add_overrides(run, o);
  run->add_flag("--no-adapt", o.no_adapt, "skip pseudo-label adaptation");
  run->add_option("--dump-pseudo", o.dump_pseudo, "write pseudo-label probabilities as a feature file");

  auto* ablate = app.add_subcommand("ablate", "ablation table over the configured seeds");
  add_common(ablate, o);
  add_overrides(ablate, o);
  ablate->add_option("--table", o.table, "which table")
      ->check(CLI::IsMember({"ablation", "aggregators", "losses"}))
      ->capture_default_str();

  auto* sweep = app.add_subcommand("sweep-epsilon", "adaptation accuracy per smoothing factor");
  add_common(sweep, o);
  add_overrides(sweep, o);
  sweep->add_option("--epsilons", o.epsilons, "comma-separated values in [0, 1]")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train_clients(o);
    if (*agg) return cmd_aggregate(o);
    if (*adapt) return cmd_adapt(o);
    if (*run) return cmd_run(o);
    if (*ablate) return cmd_ablate(o);
    if (*sweep) return cmd_sweep(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
