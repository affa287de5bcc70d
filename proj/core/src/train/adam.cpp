#include "hamil/train/adam.hpp"

#include "hamil/common/errors.hpp"

#include <cmath>

namespace hamil::train {

template <typename T>
Adam<T>::Adam(const nn::ParamStore<T>& like, double beta1, double beta2, double eps)
    : m_(like.zeros_like()), v_(like.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

template <typename T>
void Adam<T>::step(nn::ParamStore<T>& params, const nn::ParamStore<T>& grads, double learning_rate) {
  require(params.same_layout(m_) && grads.same_layout(m_), "optimizer state does not match the parameters");
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step = static_cast<T>(learning_rate / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const int idx = static_cast<int>(i);
    if (!params[idx].trainable) continue;
    auto& m = m_[idx].value;
    auto& v = v_[idx].value;
    const auto& g = grads[idx].value;
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    params[idx].value.array() -= step * m.array() / ((v.array() * inv_c2).sqrt() + eps);
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace hamil::train
