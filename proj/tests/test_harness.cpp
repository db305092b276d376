#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fuda/errors.hpp"
#include "fuda/harness.hpp"
#include "oracles.hpp"

using namespace fuda;
using namespace fuda::testing;
using nlohmann::json;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  SyntheticShiftConfig syn;
  syn.num_classes = 3;
  syn.feature_dim = 6;
  syn.samples_per_domain = 120;
  cfg.data = syn;
  cfg.arch.bottleneck_widths = {8};
  cfg.client_train.epochs = 6;
  MSPLConfig m;
  m.train.epochs = 3;
  cfg.mspl = m;
  cfg.eval_seeds = {0, 1, 2};
  return cfg;
}

ExperimentConfig zero_shift(ExperimentConfig cfg) {
  auto& syn = std::get<SyntheticShiftConfig>(cfg.data);
  syn.shift_rotation_max = 0.0;
  syn.shift_translation_max = 0.0;
  syn.label_noise_rate = 0.0;
  return cfg;
}

// Head-only model predicting `cls` for every input.
ModelParams constant_predictor(std::size_t dim, std::size_t classes, std::size_t cls) {
  ModelParams p = zero_params({dim, {}, classes});
  p.layers[0].bias[cls] = 1.0;
  return p;
}

std::map<std::string, std::string> csv_values(const std::string& csv) {
  std::map<std::string, std::string> out;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    out[line.substr(0, last)] = line.substr(last + 1);
  }
  return out;
}

}  // namespace

TEST_CASE("accuracy: examples") {
  DomainDataset ds{"d", Matrix(100, 2), std::vector<std::size_t>(100, 0), 2};
  for (std::size_t i = 70; i < 100; ++i) (*ds.labels)[i] = 1;
  CHECK(accuracy(constant_predictor(2, 2, 0), ds) == doctest::Approx(0.70).epsilon(1e-15));
  CHECK(accuracy(constant_predictor(2, 2, 1), ds) == doctest::Approx(0.30).epsilon(1e-15));

  // Identity head on one-hot features is a perfect fit.
  DomainDataset eye{"e", Matrix(3, 3), std::vector<std::size_t>{0, 1, 2}, 3};
  for (std::size_t i = 0; i < 3; ++i) eye.features(i, i) = 1.0;
  ModelParams id = zero_params({3, {}, 3});
  for (std::size_t i = 0; i < 3; ++i) id.layers[0].weight(i, i) = 1.0;
  CHECK(accuracy(id, eye) == 1.0);

  Rng rng(3);
  DomainDataset noise{"n", random_matrix(10000, 4, rng), random_labels(10000, 10, rng), 10};
  CHECK(std::abs(accuracy(zero_params({4, {8}, 10}), noise) - 0.10) <= 0.01);

  DomainDataset unlabeled = noise;
  unlabeled.labels.reset();
  CHECK_THROWS_AS(accuracy(zero_params({4, {8}, 10}), unlabeled), ValidationError);
}

TEST_CASE("pearson_correlation: examples and errors") {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> down{8, 6, 4, 2};
  CHECK(pearson_correlation(x, down) == doctest::Approx(-1.0).epsilon(1e-15));

  const std::vector<double> h{1, 2, 3};
  const std::vector<double> a{0.9, 0.5, 0.4};
  CHECK(std::abs(pearson_correlation(h, a) - (-0.944911182523068068)) < 1e-14);

  const std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(pearson_correlation(x, flat), ValidationError);
  const std::vector<double> two{1, 2};
  CHECK_THROWS_AS(pearson_correlation(two, two), ValidationError);
  CHECK_THROWS_AS(pearson_correlation(x, h), DimensionError);

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng.below(20);
    std::vector<double> u(n);
    std::vector<double> v(n);
    std::vector<Real> lu(n);
    std::vector<Real> lv(n);
    for (std::size_t i = 0; i < n; ++i) {
      lu[i] = u[i] = rng.normal();
      lv[i] = v[i] = 0.5 * u[i] + rng.normal();
    }
    const double r = pearson_correlation(u, v);
    CHECK(std::abs(r - static_cast<double>(textbook_pearson(lu, lv))) < 1e-12);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
  }
}

TEST_CASE("entropy_accuracy_correlation uses per-client pairs") {
  std::vector<ClientReport> rows(3);
  const double h[] = {1, 2, 3};
  const double acc[] = {0.9, 0.5, 0.4};
  for (int i = 0; i < 3; ++i) {
    rows[i].mean_entropy = h[i];
    rows[i].target_accuracy = acc[i];
  }
  CHECK(std::abs(entropy_accuracy_correlation(rows) - (-0.944911182523068068)) < 1e-14);
  rows[1].target_accuracy.reset();
  CHECK_THROWS_AS(entropy_accuracy_correlation(rows), ValidationError);
}

TEST_CASE("ExperimentConfig defaults") {
  const auto cfg = ExperimentConfig::standard();
  const auto& syn = std::get<SyntheticShiftConfig>(cfg.data);
  CHECK(syn == SyntheticShiftConfig::standard());
  CHECK(syn.num_domains == 4);
  CHECK(syn.num_classes == 5);
  CHECK(syn.feature_dim == 16);
  CHECK(syn.samples_per_domain == 600);
  CHECK(cfg.arch.bottleneck_widths == std::vector<std::size_t>{64, 32});
  CHECK(cfg.client_train.batch_size == 32);
  CHECK(cfg.aggregator == AggregatorKind::SEA);
  REQUIRE(cfg.mspl.has_value());
  CHECK(cfg.mspl->epsilon == 0.9);
  CHECK(cfg.eval_seeds.size() == 10);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config JSON: round trip, partial input and strict keys") {
  auto cfg = tiny_config();
  cfg.target_domain = 1;
  cfg.aggregator = AggregatorKind::EntropyUnscaled;
  const auto back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));

  const auto partial = config_from_json(json::parse(R"({"aggregator": "fedavg", "mspl": {"epsilon": 0.5}})"));
  CHECK(partial.aggregator == AggregatorKind::SampleCount);
  CHECK(partial.mspl->epsilon == 0.5);
  CHECK(partial.mspl->train.epochs == kStandardAdaptEpochs);
  CHECK(partial.client_train.epochs == kStandardClientEpochs);

  CHECK_FALSE(config_from_json(json::parse(R"({"mspl": null})")).mspl.has_value());
  CHECK(config_from_json(json::parse(R"({"mspl": {"loss": "ce"}})")).mspl->loss == LossKind::Tag::HardCE);

  const char* bad[] = {
      R"({"aggregatr": "sea"})",
      R"({"aggregator": "median"})",
      R"({"data": {"synthetic": {"noise": 0.1}}})",
      R"({"data": {"synthetic": {"label_noise_rate": 0.7}}})",
      R"({"data": {}})",
      R"({"client_train": {"epochs": "ten"}})",
      R"({"client_train": {"batch_size": 0}})",
      R"({"mspl": {"epsilon": 2.0}})",
      R"({"mspl": {"loss": "mse"}})",
      R"({"eval_seeds": []})",
      R"([1, 2])",
  };
  for (const char* text : bad) {
    INFO(text);
    CHECK_THROWS_AS(config_from_json(json::parse(text)), ConfigError);
  }
}

TEST_CASE("load_config resolves feature files next to the config") {
  const auto dir = std::filesystem::temp_directory_path() / "fuda_test_config";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "data");
  auto gen_cfg = std::get<SyntheticShiftConfig>(tiny_config().data);
  gen_cfg.num_domains = 3;
  const auto domains = generate_domains(gen_cfg);
  for (const auto& d : domains) save_feature_file(d, dir / "data" / (d.domain_id + ".csv"));
  std::ofstream(dir / "cfg.json") << R"({
    "data": {"feature_files": ["data/domain0.csv", "data/domain1.csv", "data/domain2.csv"]},
    "target_domain": 0,
    "arch": {"bottleneck_widths": [8]},
    "client_train": {"epochs": 4},
    "mspl": {"train": {"epochs": 2}},
    "eval_seeds": [0]
  })";
  const auto cfg = load_config(dir / "cfg.json");
  const auto& files = std::get<FeatureFileSource>(cfg.data);
  CHECK(files.domains[1] == dir / "data" / "domain1.csv");
  const auto loaded = load_domains(cfg, 0);
  CHECK(loaded == domains);

  const auto report = run_experiment(cfg, 0);
  CHECK(report.clients.size() == 2);
  CHECK(report.clients[0].client_id == "domain1");
  CHECK(report.target_hash == dataset_hash(domains[0]));

  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("target selection and architecture resolution") {
  auto cfg = tiny_config();
  CHECK(resolve_target_index(cfg, 4) == 3);
  cfg.target_domain = 4;
  CHECK_THROWS_AS(resolve_target_index(cfg, 4), ConfigError);
  cfg.target_domain = 0;
  const auto ctx = prepare_seed(cfg, 0);
  CHECK(ctx.target_index == 0);
  CHECK(ctx.clients.size() == 3);
  CHECK(ctx.clients[0].id() == "domain1");
  CHECK(ctx.arch == ArchitectureSpec{6, {8}, 3});

  cfg.arch.input_dim = 7;
  CHECK_THROWS_AS(prepare_seed(cfg, 0), ConfigError);
}

TEST_CASE("synthetic targets are scored against clean labels") {
  auto cfg = tiny_config();
  std::get<SyntheticShiftConfig>(cfg.data).label_noise_rate = 0.3;
  const auto domains = load_domains(cfg, 0);
  auto seeded = std::get<SyntheticShiftConfig>(cfg.data);
  seeded.seed = mix_seed(mix_seed(seeded.seed, 0), 1);
  const auto generated = generate_synthetic(seeded);
  CHECK(*domains.back().labels == generated.clean_labels);
  CHECK(domains[1] == generated.domains[1]);
}

TEST_CASE("run_experiment: report contents and byte-identical reruns") {
  const auto cfg = tiny_config();
  const auto report = run_experiment(cfg, 1);
  CHECK(report.seed == 1);
  CHECK(report.uploads == 3);
  CHECK(report.exchanges_after_upload == 0);
  REQUIRE(report.accuracy_pre_adaptation.has_value());
  REQUIRE(report.accuracy_post_adaptation.has_value());
  for (double a : {*report.accuracy_pre_adaptation, *report.accuracy_post_adaptation}) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  if (report.entropy_accuracy_correlation) {
    CHECK(*report.entropy_accuracy_correlation >= -1.0);
    CHECK(*report.entropy_accuracy_correlation <= 1.0);
  }
  for (const auto& c : report.clients) REQUIRE(c.target_accuracy.has_value());
  CHECK(report.config == config_to_json(cfg));

  CHECK(report_json(run_experiment(cfg, 1)) == report_json(report));
  CHECK(report_csv(run_experiment(cfg, 1)) == report_csv(report));
  CHECK(report_json(run_experiment(cfg, 2)) != report_json(report));

  auto no_adapt = cfg;
  no_adapt.mspl.reset();
  const auto plain = run_experiment(no_adapt, 1);
  CHECK_FALSE(plain.accuracy_post_adaptation.has_value());
  CHECK(plain.accuracy_pre_adaptation == report.accuracy_pre_adaptation);
}

TEST_CASE("CSV and JSON reports carry the same numbers") {
  const auto report = run_experiment(tiny_config(), 0);
  const json j = json::parse(report_json(report));
  const auto csv = csv_values(report_csv(report));
  CHECK(csv.at("run,run,seed") == std::to_string(j["seed"].get<std::uint64_t>()));
  CHECK(csv.at("run,run,aggregator") == j["aggregator"].get<std::string>());
  CHECK(csv.at("run,run,epsilon") == format_csv_number(j["adaptation"]["epsilon"].get<double>()));
  for (const auto& c : j["clients"]) {
    const std::string id = c["id"].get<std::string>();
    for (const char* field : {"mean_entropy", "weight_unscaled", "weight_final", "target_accuracy"}) {
      CHECK(csv.at("client," + id + "," + field) == format_csv_number(c[field].get<double>()));
    }
    CHECK(csv.at("client," + id + ",sample_count") == std::to_string(c["sample_count"].get<std::size_t>()));
  }
  CHECK(csv.at("protocol,run,uploads") == std::to_string(j["protocol"]["uploads"].get<std::size_t>()));
  for (const auto& [field, value] : j["metrics"].items()) {
    if (value.is_null()) {
      CHECK(csv.count("metric,run," + field) == 0);
    } else {
      CHECK(csv.at("metric,run," + field) == format_csv_number(value.get<double>()));
      // Reading the CSV back agrees with the JSON to 6 significant digits.
      CHECK(std::stod(csv.at("metric,run," + field)) == doctest::Approx(value.get<double>()).epsilon(1e-5));
    }
  }
}

TEST_CASE("format_csv_number uses 6 significant digits") {
  CHECK(format_csv_number(0.123456789) == "0.123457");
  CHECK(format_csv_number(1.0) == "1");
  CHECK(format_csv_number(-0.9449111825) == "-0.944911");
  CHECK(format_csv_number(1234567.0) == "1.23457e+06");
}

TEST_CASE("ablation: zero-shift data gives matching rows on identical datasets") {
  // Standard-size zero-shift data. SSCE at epsilon 0.9 needs a converged adaptation
  // run to give back the accuracy of the other rows.
  auto cfg = zero_shift(ExperimentConfig::standard());
  cfg.mspl->train.epochs = 2 * kStandardAdaptEpochs;
  cfg.eval_seeds = {0, 1, 2};
  const auto table = run_ablation(cfg);
  REQUIRE(table.rows.size() == 5);
  const std::vector<std::string> labels{"sea+mspl", "sea+mspl-ce", "sea", "entropy", "uniform"};
  for (std::size_t r = 0; r < labels.size(); ++r) CHECK(table.rows[r].label == labels[r]);
  for (const auto& row : table.rows) {
    INFO(row.label << " " << row.mean);
    CHECK(row.per_seed.size() == 3);
    CHECK(row.data_hashes == table.rows[0].data_hashes);
    for (const auto& other : table.rows) CHECK(std::abs(row.mean - other.mean) <= 0.01);
  }
  CHECK_THROWS_AS(table.row("missing"), ValidationError);
}

TEST_CASE("ablation: rows of the tiny benchmark share datasets") {
  const auto table = run_ablation(tiny_config());
  for (const auto& row : table.rows) {
    CHECK(row.data_hashes == table.rows[0].data_hashes);
    CHECK(row.data_hashes[0] != row.data_hashes[1]);
    for (double a : row.per_seed) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
    }
  }
}

TEST_CASE("aggregator comparison: one source makes every aggregator identical") {
  auto cfg = tiny_config();
  std::get<SyntheticShiftConfig>(cfg.data).num_domains = 2;
  const auto table = run_aggregator_comparison(cfg);
  REQUIRE(table.rows.size() == 4);
  for (const auto& row : table.rows) CHECK(row.per_seed == table.rows[0].per_seed);
}

TEST_CASE("epsilon sweep at 0 matches the SoftCE row") {
  const auto cfg = tiny_config();
  const std::vector<double> eps{0.0};
  const auto sweep = run_epsilon_sweep(cfg, eps);
  const auto losses = run_loss_comparison(cfg);
  CHECK(sweep.rows[0].label == "eps=0");
  CHECK(losses.rows[0].label == "ce");
  CHECK(losses.rows[2].label == "ssce");
  const auto& soft = losses.row("softce");
  for (std::size_t s = 0; s < soft.per_seed.size(); ++s) {
    CHECK(std::abs(sweep.rows[0].per_seed[s] - soft.per_seed[s]) <= 1e-12);
  }
  const std::vector<double> out_of_range{0.5, 1.5};
  CHECK_THROWS_AS(run_epsilon_sweep(cfg, out_of_range), ConfigError);
  CHECK_THROWS_AS(run_epsilon_sweep(cfg, std::vector<double>{}), ConfigError);
}

TEST_CASE("finalize_rows and table emission") {
  ResultTable table{"demo", {0, 1, 2}, {{"a", {0.5, 0.7, 0.9}, {}, 0.0, 0.0}, {"b", {0.25}, {}, 0.0, 0.0}}};
  finalize_rows(table);
  CHECK(table.rows[0].mean == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(table.rows[0].stddev == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(table.rows[1].stddev == 0.0);
  CHECK(table_csv(table) ==
        "table,configuration,mean_accuracy,std_accuracy,seeds\n"
        "demo,a,0.7,0.2,3\n"
        "demo,b,0.25,0,1\n");
  const json j = table_to_json(table);
  CHECK(j["rows"][0]["mean_accuracy"].get<double>() == table.rows[0].mean);
  CHECK(j["rows"][0]["per_seed"].size() == 3);
}
