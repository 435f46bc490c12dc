#pragma once

#include <cmath>

#include "kblab/model.hpp"

namespace kblab {

// Adam with bias correction at a constant learning rate.
struct AdamState {
  Parameters m, v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(const ModelConfig& cfg) {
    return AdamState{Parameters::zeros(cfg), Parameters::zeros(cfg), 0};
  }
};

inline void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
                      double learning_rate) {
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  auto p_refs = tensor_refs(params);
  auto g_refs = tensor_refs(grads);
  auto m_refs = tensor_refs(state.m);
  auto v_refs = tensor_refs(state.v);
  for (std::size_t i = 0; i < p_refs.size(); ++i) {
    auto& p = *p_refs[i].tensor;
    const auto& g = *g_refs[i].tensor;
    auto& m = *m_refs[i].tensor;
    auto& v = *v_refs[i].tensor;
    m.array() = state.beta1 * m.array() + (1.0 - state.beta1) * g.array();
    v.array() = state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square();
    p.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

}  // namespace kblab
