#pragma once

// Checkpoint directory layout:
//   manifest.json          format version, architecture (+ hash), variant, step, seed,
//                          optimizer settings, training config, blob index
//   params/<name>.bin      one blob per parameter
//   buffers/<name>.bin     normalization running statistics
//   adam/m/<name>.bin      optimizer first moments (when saved with an optimizer)
//   adam/v/<name>.bin      optimizer second moments
//
// Blob: "HTB1", u32 name length, name bytes, u32 rank, rank x u32 dims, then the
// row-major values as little-endian IEEE-754 32-bit floats.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "handteleop/model.hpp"

namespace handteleop::checkpoint {

inline constexpr int kFormatVersion = 1;

struct AdamSettings {
  double learning_rate = 0.002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Optimizer moments, one tensor per parameter in parameters() order.
struct AdamState {
  AdamSettings settings;
  std::int64_t step = 0;
  std::vector<nn::Tensor<float>> m;
  std::vector<nn::Tensor<float>> v;
};

struct Checkpoint {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  nlohmann::json train_config;  // null when not written by the trainer
  model::Network<float> network;
  std::optional<AdamState> adam;
};

struct SaveRequest {
  const model::Network<float>* network = nullptr;
  const AdamState* adam = nullptr;  // optional
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  nlohmann::json train_config;
};

/// Writes into `dir` (created if needed). The manifest is written last.
void save(const std::filesystem::path& dir, const SaveRequest& request);

/// Throws IntegrityError for missing files, FormatError for malformed or mismatched blobs.
Checkpoint load(const std::filesystem::path& dir);
/// As load(), but throws IncompatibleCheckpoint unless the architecture hash equals `expected_hash`.
Checkpoint load(const std::filesystem::path& dir, std::uint64_t expected_hash);

/// Manifest only; cheap.
nlohmann::json read_manifest(const std::filesystem::path& dir);

std::string hash_string(std::uint64_t hash);

void write_blob(const std::filesystem::path& path, const std::string& name, const nn::Tensor<float>& tensor);
/// Returns the tensor; `name` receives the stored name.
nn::Tensor<float> read_blob(const std::filesystem::path& path, std::string& name);

}  // namespace handteleop::checkpoint
