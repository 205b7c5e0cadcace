#include "lmvp/adam.hpp"

#include <cmath>

#include "lmvp/errors.hpp"

namespace lmvp {

AdamState make_adam_state(const std::map<std::string, Tensor>& params, const std::string& prefix,
                          const AdamHyper& hyper) {
  AdamState st;
  st.hyper = hyper;
  for (const auto& [name, t] : params) {
    if (name.rfind(prefix, 0) != 0) continue;
    AdamMoments mm;
    mm.m = Tensor(t.shape());
    mm.v = Tensor(t.shape());
    st.moments.emplace(name, std::move(mm));
  }
  return st;
}

void adam_update(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
                 AdamState& state) {
  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    if (pit == params.end()) throw ContractError(cat("adam_update: unknown parameter '", name, "'"));
    auto mit = state.moments.find(name);
    if (mit == state.moments.end())
      throw ContractError(cat("adam_update: parameter '", name, "' has no optimizer state"));
    Tensor& p = pit->second;
    AdamMoments& mm = mit->second;
    if (!p.same_shape(g) || !mm.m.same_shape(p))
      throw ContractError(cat("adam_update: shape mismatch for '", name, "': param ", shape_str(p.shape()),
                              ", grad ", shape_str(g.shape())));
    mm.step += 1;
    const float b1 = state.hyper.beta1, b2 = state.hyper.beta2;
    const float c1 = 1.0f - float(std::pow(double(b1), double(mm.step)));
    const float c2 = 1.0f - float(std::pow(double(b2), double(mm.step)));
    const float lr = state.hyper.lr, eps = state.hyper.eps;
    float* pd = p.data();
    float* md = mm.m.data();
    float* vd = mm.v.data();
    const float* gd = g.data();
    for (size_t i = 0; i < p.numel(); ++i) {
      md[i] = b1 * md[i] + (1.0f - b1) * gd[i];
      vd[i] = b2 * vd[i] + (1.0f - b2) * gd[i] * gd[i];
      float mhat = md[i] / c1;
      float vhat = vd[i] / c2;
      pd[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace lmvp
