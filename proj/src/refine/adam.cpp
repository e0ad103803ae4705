#include <epirefine/refine/refine.hpp>

#include <cmath>

namespace epirefine::refine {

AdamState AdamState::zeros(std::size_t n) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

bool adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 AdamState& state, double lr, double beta1, double beta2, double eps) {
  if (param.size() != grad.size() || param.size() != state.m.size())
    throw ShapeError("adam_update: size mismatch");
  for (const double g : grad)
    if (!std::isfinite(g)) return false;

  const int t = ++state.step;
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
  return true;
}

}  // namespace epirefine::refine
