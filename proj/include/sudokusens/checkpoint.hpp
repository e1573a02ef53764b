#pragma once

// Shared model checkpoint container: 8-byte magic, little-endian uint64
// header length, JSON header (kind, architecture config, schema/config
// hashes, training metadata, named-tensor index), then one contiguous
// float32 blob. Used by every trainable stage.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sudokusens/nn.hpp"
#include "sudokusens/tensor.hpp"

namespace sudoku {

struct Checkpoint {
  std::string kind;        // "cvae" | "satcl" | "classifier"
  nlohmann::json config;   // architecture + producing run config
  nlohmann::json training; // loss curves, epochs, seed, wall time
  uint64_t schema_hash = 0;
  uint64_t config_hash = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  void set_params(const nn::ParamStore<float>& store);
  nn::ParamStore<float> params() const;

  const Tensor<float>& tensor(const std::string& name) const;

  void save(const std::string& path) const; // atomic
  static Checkpoint load(const std::string& path);
};

} // namespace sudoku
