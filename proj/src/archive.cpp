#include "bpgpt/archive.hpp"

#include "bpgpt/error.hpp"

#include <fstream>

namespace bpgpt::archive {

namespace fs = std::filesystem;
using json = nlohmann::json;

void save(const fs::path& dir, const std::string& name, const nn::ParameterSet& params,
          const json& config) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "bpgpt-tensors-v1";
  manifest["config"] = config;
  manifest["checksum"] = std::to_string(params.checksum());
  json tensors = json::array();
  std::ofstream bin(dir / (name + ".bin"), std::ios::binary);
  if (!bin) throw DataError("cannot write " + (dir / (name + ".bin")).string());
  std::size_t offset = 0;
  for (const auto& p : params.items()) {
    const auto& m = p.var.value();
    tensors.push_back({{"name", p.name}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
    offset += std::size_t(m.size());
  }
  manifest["tensors"] = std::move(tensors);
  std::ofstream(dir / (name + ".json")) << manifest.dump(2) << "\n";
}

namespace {

json read_manifest(const fs::path& dir, const std::string& name) {
  std::ifstream in(dir / (name + ".json"));
  if (!in) throw DataError("missing checkpoint manifest " + (dir / (name + ".json")).string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint manifest " + name + ": " + e.what());
  }
}

}  // namespace

json read_config(const fs::path& dir, const std::string& name) {
  return read_manifest(dir, name).at("config");
}

bool exists(const fs::path& dir, const std::string& name) {
  return fs::exists(dir / (name + ".json")) && fs::exists(dir / (name + ".bin"));
}

void load_into(const fs::path& dir, const std::string& name, nn::ParameterSet& params) {
  json manifest = read_manifest(dir, name);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size()) {
    throw CompatibilityError("checkpoint " + name + " has " + std::to_string(tensors.size()) +
                             " tensors, model expects " + std::to_string(params.size()));
  }
  std::ifstream bin(dir / (name + ".bin"), std::ios::binary);
  if (!bin) throw DataError("missing checkpoint payload for " + name);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    const auto& p = params.items()[i];
    nn::Var v = p.var;
    auto& m = v.mutable_value();
    if (t.at("name").get<std::string>() != p.name ||
        t.at("shape").at(0).get<Eigen::Index>() != m.rows() ||
        t.at("shape").at(1).get<Eigen::Index>() != m.cols()) {
      throw CompatibilityError("checkpoint " + name + ": tensor " + std::to_string(i) + " (" +
                               t.at("name").get<std::string>() + ") does not match " + p.name);
    }
    bin.seekg(static_cast<std::streamoff>(t.at("offset").get<std::size_t>() * sizeof(double)));
    bin.read(reinterpret_cast<char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!bin) throw DataError("truncated checkpoint payload for " + name);
  }
}

}  // namespace bpgpt::archive
