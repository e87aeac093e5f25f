#include "regdrop/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "regdrop/errors.hpp"

namespace regdrop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "regdrop-checkpoint";
constexpr int kVersion = 1;
constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "params.bin";

}  // namespace

std::string manifest_text(const VlmModel& model) {
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& p : model.parameters()) {
    tensors.push_back(json{{"name", p.name},
                           {"group", to_string(p.group)},
                           {"shape", p.tensor.shape()},
                           {"offset", offset},
                           {"count", p.tensor.numel()}});
    offset += p.tensor.numel();
  }
  json manifest{{"format", kFormat},
                {"version", kVersion},
                {"dtype", "float64-le"},
                {"data_file", kBlob},
                {"element_count", offset},
                {"config", to_json(model.config())},
                {"tensors", std::move(tensors)}};
  return manifest.dump(2) + "\n";
}

void save_checkpoint(const VlmModel& model, const std::string& directory) {
  fs::create_directories(directory);
  {
    std::ofstream out(fs::path(directory) / kManifest, std::ios::binary);
    if (!out) throw DataError("save_checkpoint: cannot write " + (fs::path(directory) / kManifest).string());
    out << manifest_text(model);
  }
  std::ofstream blob(fs::path(directory) / kBlob, std::ios::binary);
  if (!blob) throw DataError("save_checkpoint: cannot write " + (fs::path(directory) / kBlob).string());
  for (const auto& p : model.parameters()) {
    const auto values = p.tensor.data();
    blob.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  }
}

VlmModel load_checkpoint(const std::string& directory) {
  const fs::path manifest_path = fs::path(directory) / kManifest;
  std::ifstream in(manifest_path);
  if (!in) throw DataError("load_checkpoint: no manifest at " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw DataError("load_checkpoint: malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) throw DataError("load_checkpoint: not a regdrop checkpoint");
  if (manifest.value("version", 0) != kVersion) {
    throw DataError("load_checkpoint: unsupported version " + manifest.value("version", json(0)).dump());
  }
  VlmModel model(model_config_from_json(manifest.at("config"), "config"));

  std::ifstream blob(fs::path(directory) / manifest.value("data_file", std::string(kBlob)), std::ios::binary);
  if (!blob) throw DataError("load_checkpoint: missing parameter blob in " + directory);
  std::vector<double> values(manifest.at("element_count").get<std::size_t>());
  blob.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (static_cast<std::size_t>(blob.gcount()) != values.size() * sizeof(double)) {
    throw DataError("load_checkpoint: parameter blob is truncated");
  }

  std::map<std::string, Tensor> by_name;
  for (auto& p : model.parameters()) by_name.emplace(p.name, p.tensor);
  if (by_name.size() != manifest.at("tensors").size()) {
    throw DataError("load_checkpoint: manifest lists " + std::to_string(manifest.at("tensors").size()) +
                    " tensors, model expects " + std::to_string(by_name.size()));
  }
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("load_checkpoint: unexpected tensor " + name);
    Tensor& t = it->second;
    if (entry.at("shape").get<Shape>() != t.shape()) throw DataError("load_checkpoint: shape mismatch for " + name);
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (count != t.numel() || offset + count > values.size()) throw DataError("load_checkpoint: bad extent for " + name);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), count, t.mutable_data().begin());
  }
  return model;
}

}  // namespace regdrop
