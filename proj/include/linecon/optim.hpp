#pragma once

// AdamW with decoupled weight decay:
//   m <- b1 m + (1 - b1) g
//   v <- b2 v + (1 - b2) g^2
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// The decay is applied as theta * (1 - lr * wd), which is the same update.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "linecon/matrix.hpp"
#include "linecon/nn.hpp"

namespace linecon {

struct AdamWHyper {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamWHyper&, const AdamWHyper&) = default;
};

struct AdamWState {
  AdamWHyper hyper;
  std::uint64_t step_count = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Updates `params` in place. Shapes are checked and gradients scanned for
// non-finite entries before anything is written.
inline void adamw_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, AdamWState& state) {
  if (params.size() != grads.size()) throw std::invalid_argument("adamw_step: parameter/gradient count mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    params[t]->require_same_shape(*grads[t], "adamw_step");
    if (!all_finite(*grads[t])) throw NonFiniteGradient("adamw_step: non-finite gradient in tensor " + std::to_string(t));
  }
  if (state.m.empty() && state.v.empty() && state.step_count == 0) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adamw_step: optimizer state has " + std::to_string(state.m.size()) + " tensors, model has " +
                                std::to_string(params.size()));
  for (std::size_t t = 0; t < params.size(); ++t) {
    params[t]->require_same_shape(state.m[t], "adamw_step (state)");
    params[t]->require_same_shape(state.v[t], "adamw_step (state)");
  }

  const AdamWHyper& h = state.hyper;
  const auto step = static_cast<double>(++state.step_count);
  const double bc1 = 1.0 - std::pow(h.beta1, step);
  const double bc2 = 1.0 - std::pow(h.beta2, step);
  const double decay = 1.0 - h.lr * h.weight_decay;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto theta = params[t]->values();
    auto g = grads[t]->values();
    auto m = state.m[t].values();
    auto v = state.v[t].values();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] = theta[i] * decay - h.lr * (m_hat / (std::sqrt(v_hat) + h.eps));
    }
  }
}

template <class P>
void adamw_step(P& params, const P& grads, AdamWState& state) {
  std::vector<Matrix*> p;
  std::vector<const Matrix*> g;
  for_each_tensor(params, [&](const std::string&, Matrix& m) { p.push_back(&m); });
  for_each_tensor(grads, [&](const std::string&, const Matrix& m) { g.push_back(&m); });
  adamw_step(std::span<Matrix* const>(p), std::span<const Matrix* const>(g), state);
}

}  // namespace linecon
