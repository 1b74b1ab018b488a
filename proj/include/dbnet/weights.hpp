#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dbnet/data.hpp"
#include "dbnet/model.hpp"

namespace dbnet {

inline constexpr std::uint16_t kWeightsVersion = 1;

/// Layout: magic "DBNW", u16 version, u32 header length + JSON header
/// {"model": DbNetConfig, "standardizer": optional}, u32 tensor count, then per
/// tensor: u32 name length + name, u32 rank, rank x u32 extents, float32 values.
/// All integers and floats little-endian; tensors in declaration order,
/// batch-norm running statistics included.
std::string encode_weights(const DbNet<float>& model, const Standardizer* standardizer = nullptr);

struct LoadedModel {
  DbNet<float> model;
  std::optional<Standardizer> standardizer;
};

LoadedModel decode_weights(std::string_view bytes);

void save_weights(const DbNet<float>& model, const std::filesystem::path& path,
                  const Standardizer* standardizer = nullptr);
LoadedModel load_weights(const std::filesystem::path& path);

/// Copies of every parameter and buffer value, in declaration order.
template <typename T>
std::vector<Tensor<T>> snapshot(const ParamList<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(Tensor<T>(p.var.shape(), std::vector<T>(p.var.value().data().begin(),
                                                                                    p.var.value().data().end())));
  return out;
}

template <typename T>
void restore(const ParamList<T>& params, const std::vector<Tensor<T>>& values) {
  if (params.size() != values.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].var.shape() != values[i].shape()) {
      throw ShapeError("restore: shape mismatch for " + params[i].name);
    }
    std::copy(values[i].data().begin(), values[i].data().end(), params[i].var.value().data().begin());
  }
}

}  // namespace dbnet
