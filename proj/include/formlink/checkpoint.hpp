#pragma once

#include <string>
#include <utility>
#include <vector>

#include "formlink/nd_array.hpp"
#include "formlink/net.hpp"

namespace formlink {

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

// "MSPW", version, then (name length, name, rank, extents, float32 values)
// per parameter, all integers and floats little-endian.
void save_checkpoint(const NamedTensors& params, const std::string& path);
NamedTensors load_checkpoint(const std::string& path);

template <typename T>
void save_params(const ParamStore<T>& store, const std::string& path) {
  NamedTensors named;
  named.reserve(store.entries.size());
  for (const auto& e : store.entries) named.emplace_back(e.name, e.value.template cast<float>());
  save_checkpoint(named, path);
}

/// Loads by name; every stored parameter must exist with a matching shape.
template <typename T>
void load_params(ParamStore<T>& store, const std::string& path) {
  for (auto& [name, value] : load_checkpoint(path)) {
    int idx = store.find(name);
    if (idx < 0) throw std::runtime_error("checkpoint parameter not in model: " + name);
    auto& entry = store.entries[static_cast<size_t>(idx)];
    if (entry.value.shape != value.shape)
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": stored " +
                               shape_str(value.shape) + ", model " +
                               shape_str(entry.value.shape));
    entry.value = value.template cast<T>();
  }
}

}  // namespace formlink
