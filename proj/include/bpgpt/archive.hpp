#pragma once

// Named-tensor archive: `<dir>/<name>.json` holds the shape manifest and a
// free-form config object, `<dir>/<name>.bin` the little-endian float64
// payload in manifest order.

#include "bpgpt/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace bpgpt::archive {

void save(const std::filesystem::path& dir, const std::string& name, const nn::ParameterSet& params,
          const nlohmann::json& config);

// Returns the stored config without touching any parameters.
nlohmann::json read_config(const std::filesystem::path& dir, const std::string& name);

// Loads values into an already-constructed parameter set; names and shapes
// must match exactly.
void load_into(const std::filesystem::path& dir, const std::string& name, nn::ParameterSet& params);

bool exists(const std::filesystem::path& dir, const std::string& name);

}  // namespace bpgpt::archive
