#include "fuda/model_io.hpp"

#include <fstream>

#include "fuda/errors.hpp"

namespace fuda {
namespace {

constexpr const char* kFormat = "fuda-model-v1";

}  // namespace

nlohmann::json model_to_json(const ModelFile& model) {
  const ArchitectureSpec arch = model.params.architecture();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : model.params.layers) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < layer.weight.rows(); ++r) {
      const auto row = layer.weight.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    layers.push_back({{"weight", rows}, {"bias", layer.bias}});
  }
  return {{"format", kFormat},
          {"client_id", model.client_id},
          {"sample_count", model.sample_count},
          {"architecture",
           {{"input_dim", arch.input_dim},
            {"bottleneck_widths", arch.bottleneck_widths},
            {"num_classes", arch.num_classes}}},
          {"layers", layers}};
}

ModelFile model_from_json(const nlohmann::json& j) {
  ModelFile out;
  ArchitectureSpec declared;
  try {
    if (j.at("format").get<std::string>() != kFormat) throw ParseError("unsupported model format");
    out.client_id = j.at("client_id").get<std::string>();
    out.sample_count = j.at("sample_count").get<std::size_t>();
    const auto& a = j.at("architecture");
    declared = {a.at("input_dim").get<std::size_t>(), a.at("bottleneck_widths").get<std::vector<std::size_t>>(),
                a.at("num_classes").get<std::size_t>()};
    for (const auto& layer : j.at("layers")) {
      const auto rows = layer.at("weight").get<std::vector<std::vector<double>>>();
      out.params.layers.push_back({Matrix::from_rows(rows), layer.at("bias").get<std::vector<double>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
  out.params.validate_shapes();
  if (out.params.architecture() != declared) throw DimensionError("model layers do not match the declared architecture");
  if (!out.params.all_finite()) throw NumericError("model file holds non-finite parameters");
  return out;
}

void save_model(const ModelFile& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file " + path.string());
  out << model_to_json(model).dump(1) << '\n';
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace fuda
