#pragma once

// Command-line entry points: synth, prepare, train, infer, eval, sweep.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace bpgpt::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode { ok = 0, failure = 1, config_error = 2, data_error = 3 };

// Written as manifest.json into every output directory.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;  // relative to the output directory
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::string artifact_version;  // content hash of the outputs
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  // Fills outputs and artifact_version from the directory, then writes it.
  void write(const std::filesystem::path& dir);
};

// 64-bit FNV-1a, hex.
std::string content_hash(const std::string& bytes);

struct SweepRow {
  std::string setting;
  double value = 0.0;  // x coordinate for plots (k for the prompt-length axis)
  double bleu1 = 0.0;
  double meteor = 0.0;
  double bertscore = 0.0;
  double shuffled_bleu1 = 0.0;
};

std::string format_sweep_table(const std::vector<SweepRow>& rows);
// Static line plot of the three metrics against SweepRow::value.
std::string sweep_svg(const std::vector<SweepRow>& rows, const std::string& x_label);

// Parses argv and runs one subcommand. Messages go to err.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bpgpt::cli
