#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nlrn/model.hpp"
#include "nlrn/tensor.hpp"

namespace nlrn {

// Tensor-file container: 8-byte magic "NLRNCKPT", 4-byte little-endian header
// length, UTF-8 JSON header {"config": {...}, "tensors": [{name, shape,
// dtype}, ...]} space-padded to a 256-byte boundary, then the raw
// little-endian float32 payloads concatenated in manifest order.

struct NamedTensorData {
  std::string name;
  DenseTensor<float> tensor;
};

struct TensorFile {
  std::map<std::string, std::string> config;
  std::vector<NamedTensorData> tensors;
};

void save_tensor_file(const std::string& path, const TensorFile& file);
TensorFile load_tensor_file(const std::string& path);

template <typename T>
void save_checkpoint(const std::string& path, NlrnParams<T>& params, const NlrnConfig& cfg);

template <typename T>
std::pair<NlrnParams<T>, NlrnConfig> load_checkpoint(const std::string& path);

}  // namespace nlrn
