#pragma once

#include <string>
#include <vector>

#include "hitmdp/nn/dense_net.h"
#include "json.hpp"

namespace hitmdp::nn {

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;  // row-major
};

// Writes <stem>.json (manifest) and <stem>.bin (little-endian float64 blob).
// Manifest keys: layer_sizes, activations, tensors [{name, shape, offset}],
// with offsets in bytes into the blob.
void save_tensors(const std::string& stem, const std::vector<NamedTensor>& tensors,
                  const std::vector<int>& layer_sizes = {},
                  const std::vector<std::string>& activations = {});
std::vector<NamedTensor> load_tensors(const std::string& stem, nlohmann::json* manifest = nullptr);

std::vector<NamedTensor> net_tensors(const DenseNet& net);
void save_net(const std::string& stem, const DenseNet& net);
DenseNet load_net(const std::string& stem);

}  // namespace hitmdp::nn
