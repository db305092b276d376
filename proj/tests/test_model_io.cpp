#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fuda/errors.hpp"
#include "fuda/model_io.hpp"
#include "oracles.hpp"

using namespace fuda;
using namespace fuda::testing;

TEST_CASE("model files round trip bit-exactly") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelFile m{"c" + std::to_string(trial), 10 + rng.below(100), random_params(random_arch(rng), rng)};
    const ModelFile back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
    CHECK(back.client_id == m.client_id);
    CHECK(back.sample_count == m.sample_count);
    CHECK(back.params == m.params);
  }
  const auto path = std::filesystem::temp_directory_path() / "fuda_model_test.json";
  const ModelFile m{"x", 5, init_params({3, {4}, 2}, 1)};
  save_model(m, path);
  CHECK(load_model(path).params == m.params);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path), ParseError);
}

TEST_CASE("model files: malformed input") {
  const ModelFile m{"x", 5, init_params({3, {4}, 2}, 1)};
  auto j = model_to_json(m);
  j["format"] = "other";
  CHECK_THROWS_AS(model_from_json(j), ParseError);
  j = model_to_json(m);
  j.erase("layers");
  CHECK_THROWS_AS(model_from_json(j), ParseError);
  j = model_to_json(m);
  j["architecture"]["num_classes"] = 3;
  CHECK_THROWS_AS(model_from_json(j), DimensionError);
  j = model_to_json(m);
  j["layers"][0]["bias"] = {0.0};
  CHECK_THROWS_AS(model_from_json(j), DimensionError);
  j = model_to_json(m);
  j["layers"][0]["weight"][0][0] = nullptr;
  CHECK_THROWS_AS(model_from_json(j), ParseError);
}
