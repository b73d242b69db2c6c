// SPDX-License-Identifier: Apache-2.0
//
// Versioned tensor container used for model checkpoints and dataset caches.
// Byte layout (all integers little-endian):
//
//   offset 0   8 bytes  magic "EVAECKPT"
//   offset 8   u32      container version (currently 1)
//   offset 12  u64      header length H in bytes
//   offset 20  H bytes  UTF-8 JSON header:
//                         {"kind": ..., "meta": {...},
//                          "tensors": [{"name": ..., "shape": [...]}, ...]}
//   then, for each header tensor in order, prod(shape) IEEE-754 binary64
//   values in row-major order.
//
// The file ends exactly after the last tensor; trailing bytes are an error.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "evae/data.hpp"
#include "evae/model.hpp"
#include "evae/tensor.hpp"

namespace evae {

constexpr std::uint32_t kContainerVersion = 1;

struct TensorFile {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;
};

std::vector<std::uint8_t> encode_container(const TensorFile& f);
TensorFile decode_container(std::span<const std::uint8_t> bytes);
void write_container(const std::filesystem::path& path, const TensorFile& f);
TensorFile read_container(const std::filesystem::path& path);

struct Checkpoint {
  Model model;
  std::uint64_t seed = 0;
  int epoch = 0;
};

TensorFile checkpoint_to_container(const Model& model, std::uint64_t seed, int epoch);
Checkpoint checkpoint_from_container(const TensorFile& f);
void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t seed, int epoch);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_dataset_cache(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset_cache(const std::filesystem::path& path);

}  // namespace evae
