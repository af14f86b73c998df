#pragma once

#include <string>
#include <vector>

#include "maedet/tensor.hpp"

namespace maedet {

/// A named trainable tensor. `decay` marks participation in weight decay;
/// biases, LayerNorm scales/shifts and the cls/mask tokens opt out.
struct Param {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

using ParamList = std::vector<Param>;

/// Pointer to the named entry, or nullptr.
Param* find_param(ParamList& params, const std::string& name);

int64_t total_numel(const ParamList& params);

/// Marks every tensor in the list as a trainable leaf.
void require_grads(ParamList& params);

}  // namespace maedet
