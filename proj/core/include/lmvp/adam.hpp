#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lmvp/tensor.hpp"

namespace lmvp {

struct AdamHyper {
  float lr = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// First/second moment buffers plus the per-tensor step counter.
struct AdamMoments {
  Tensor m;
  Tensor v;
  int64_t step = 0;
};

// Optimizer state for one network: a moment pair per named parameter.
struct AdamState {
  AdamHyper hyper;
  std::map<std::string, AdamMoments> moments;
};

// Zero-initialized moments for every parameter whose name starts with
// `prefix` (empty prefix selects all).
AdamState make_adam_state(const std::map<std::string, Tensor>& params, const std::string& prefix,
                          const AdamHyper& hyper);

// Bias-corrected Adam step applied in-place to every parameter named in
// `grads`. Each updated tensor's step counter advances by one; parameters
// without a gradient entry are untouched.
void adam_update(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
                 AdamState& state);

}  // namespace lmvp
