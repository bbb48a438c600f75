#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "translico/tensor.hpp"

namespace translico {

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

struct Checkpoint {
  NamedTensors tensors;
  nlohmann::json metadata = nlohmann::json::object();

  // nullptr when absent.
  const Tensor<float>* find(const std::string& name) const;
};

// Layout: 8-byte little-endian header length, a JSON header mapping each
// tensor name to {"dtype": "f32", "shape": [...], "offset": byte offset into
// the payload} plus an optional "__metadata__" object, then the little-endian
// f32 payloads back to back in header order.
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors,
                     const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace translico
